#pragma once

#include "sparsephase/seqcore.hpp"

#include <filesystem>
#include <map>
#include <string>

namespace sparsephase::io {

namespace fs = std::filesystem;

inline constexpr std::uint32_t kFeatureFormatVersion = 1;

/// Binary feature file: "PSEQ", u32 version, u32 T, u32 D, then T*D little-endian f32 row-major.
void write_features(const fs::path& path, const FeatureSequence& feats);
FeatureSequence read_features(const fs::path& path, const std::string& video_id, double fps = 1.0);

/// Dense labels as CSV with header frame_index,phase_index (one row per frame).
void write_labels(const fs::path& path, const PhaseLabelSequence& labels);
PhaseLabelSequence read_labels(const fs::path& path, int num_phases);

/// Annotation CSV: video_id,frame_index,phase_index. All entries are ground truth.
void write_annotations(const fs::path& path, const std::map<std::string, AnnotationSet>& sets);
std::map<std::string, std::vector<Annotation>> read_annotations(const fs::path& path);

/// Pseudo-label dump CSV: video_id,frame_index,label,provenance.
void write_pseudo_labels(const fs::path& path, const std::map<std::string, AnnotationSet>& sets);
std::map<std::string, std::vector<Annotation>> read_pseudo_labels(const fs::path& path);

/// Writes to a sibling temp file and renames it over the target.
void write_file_atomic(const fs::path& path, const std::string& contents);
std::string read_file(const fs::path& path);

}  // namespace sparsephase::io

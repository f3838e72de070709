#pragma once

#include "sparsephase/seqcore.hpp"

#include <cstdint>
#include <random>
#include <string>

namespace sparsephase {

using Rng = std::mt19937_64;

enum class SupervisionKind { full, timestamp, timestamp_missing, skiptag };

/// Where a timestamp annotator marks a segment.
enum class TimestampPlacement { uniform, midpoint };

struct SupervisionSpec {
  SupervisionKind kind = SupervisionKind::timestamp;
  double miss_rate = 0.0;
  int k = 1;
  std::uint64_t seed = 0;
  TimestampPlacement placement = TimestampPlacement::uniform;

  void validate() const;
  /// Short row name such as "timestamp", "missing 0.2" or "SkipTag@4".
  std::string label() const;
};

const char* to_string(SupervisionKind kind);
SupervisionKind supervision_kind_from_string(const std::string& s);

/// One frame per maximal constant-label segment.
AnnotationSet timestamp_sample(const PhaseLabelSequence& full, Rng& rng,
                               TimestampPlacement placement = TimestampPlacement::uniform);

/// Drops each entry with probability miss_rate, keeping one uniformly chosen entry if all drop.
AnnotationSet apply_missing(const AnnotationSet& ts, double miss_rate, Rng& rng);

/// K near-equal contiguous partitions (longer ones first), one uniform frame from each.
AnnotationSet skiptag_sample(const PhaseLabelSequence& full, int k, Rng& rng);

/// Every frame annotated.
AnnotationSet full_annotations(const PhaseLabelSequence& full);

/// Seed for one video, derived from the experiment seed and the video id.
std::uint64_t derive_seed(std::uint64_t seed, const std::string& key);

AnnotationSet simulate(const PhaseLabelSequence& full, const SupervisionSpec& spec,
                       const std::string& video_id);

}  // namespace sparsephase

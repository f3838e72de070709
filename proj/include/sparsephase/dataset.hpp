#pragma once

#include "sparsephase/seqcore.hpp"

#include <filesystem>
#include <string>
#include <vector>

namespace sparsephase {

enum class Split { train, val, test };

const char* to_string(Split s);
Split split_from_string(const std::string& s);

struct Video {
  std::string id;
  FeatureSequence features;
  PhaseLabelSequence labels;
  Split split = Split::train;
};

struct Dataset {
  std::string name;
  int num_phases = 0;
  std::vector<Video> videos;

  std::vector<const Video*> select(Split s) const;
  /// Throws unless video ids are unique and every video's features and labels agree in length.
  void validate() const;
};

/// Directory layout: manifest.json plus <id>.pseq and <id>.labels.csv per video.
void save_dataset(const std::filesystem::path& dir, const Dataset& ds);
Dataset load_dataset(const std::filesystem::path& dir);

}  // namespace sparsephase

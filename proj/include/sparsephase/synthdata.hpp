#pragma once

#include "sparsephase/dataset.hpp"
#include "sparsephase/supervise.hpp"

#include <cstdint>
#include <limits>
#include <string>
#include <vector>

namespace sparsephase {

struct PhaseDuration {
  int min_frames = 1;
  int max_frames = 1;
  double skip_prob = 0.0;
};

/// Generator for surgical-workflow-shaped label sequences and their features.
struct WorkflowConfig {
  std::string name = "custom";
  int num_phases = 0;
  std::vector<int> canonical_order;
  /// Indexed by phase id.
  std::vector<PhaseDuration> durations;
  double swap_prob = 0.0;
  /// Videos whose total length falls outside this range are regenerated.
  int min_total_frames = 1;
  int max_total_frames = std::numeric_limits<int>::max();

  int feature_dim = 32;
  double prototype_separation = 4.0;
  double noise_std = 1.0;
  double drift_std = 0.0;

  int num_train = 40;
  int num_val = 0;
  int num_test = 40;
  std::uint64_t seed = 0;

  int num_videos() const { return num_train + num_val + num_test; }
  void validate() const;

  /// C=7, 40 train / 40 test, T in [200, 400], rare short phases.
  static WorkflowConfig cholec_like();
  /// C=12, 80 / 20 / 40 split, longer videos with more optional phases.
  static WorkflowConfig bypass_like();
  static WorkflowConfig preset(const std::string& name);
};

/// Canonical order with independent skips, adjacent swaps, and uniform durations.
PhaseLabelSequence gen_labels(const WorkflowConfig& cfg, Rng& rng);

/// num_phases x feature_dim class prototypes with pairwise distance near the separation.
Matrix gen_prototypes(const WorkflowConfig& cfg, Rng& rng);

/// prototype(label_t) + N(0, noise_std) + a random walk with N(0, drift_std) steps.
FeatureSequence gen_features(const PhaseLabelSequence& labels, const Matrix& prototypes,
                             const WorkflowConfig& cfg, Rng& rng, const std::string& video_id);

Dataset generate_dataset(const WorkflowConfig& cfg);

}  // namespace sparsephase

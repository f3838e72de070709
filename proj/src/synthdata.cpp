#include "sparsephase/synthdata.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <stdexcept>

namespace sparsephase {

void WorkflowConfig::validate() const {
  auto fail = [&](const std::string& what) {
    throw std::invalid_argument("WorkflowConfig '" + name + "': " + what);
  };
  if (num_phases < 1) fail("num_phases must be >= 1");
  if (static_cast<int>(durations.size()) != num_phases) fail("need one duration range per phase");
  if (canonical_order.empty()) fail("canonical order is empty");
  for (int p : canonical_order) {
    if (p < 0 || p >= num_phases) fail("canonical order names an unknown phase");
  }
  for (const auto& d : durations) {
    if (d.min_frames < 1 || d.max_frames < d.min_frames) fail("duration range must satisfy 1 <= min <= max");
    if (!(d.skip_prob >= 0.0 && d.skip_prob <= 1.0)) fail("skip_prob must lie in [0, 1]");
  }
  if (!(swap_prob >= 0.0 && swap_prob <= 1.0)) fail("swap_prob must lie in [0, 1]");
  if (min_total_frames < 1 || max_total_frames < min_total_frames) fail("bad total frame range");
  if (feature_dim < 1) fail("feature_dim must be >= 1");
  if (!(prototype_separation > 0.0)) fail("prototype_separation must be > 0");
  if (!(noise_std >= 0.0) || !(drift_std >= 0.0)) fail("noise and drift must be >= 0");
  if (num_train < 0 || num_val < 0 || num_test < 0) fail("split sizes must be >= 0");
}

WorkflowConfig WorkflowConfig::cholec_like() {
  WorkflowConfig cfg;
  cfg.name = "cholec-like";
  cfg.num_phases = 7;
  cfg.canonical_order = {0, 1, 2, 3, 4, 5, 6};
  cfg.durations = {
      {10, 30, 0.0},   // preparation
      {60, 140, 0.0},  // calot triangle dissection
      {15, 35, 0.0},   // clipping and cutting
      {50, 110, 0.0},  // gallbladder dissection
      {10, 25, 0.0},   // gallbladder packaging
      {15, 40, 0.1},   // cleaning and coagulation
      {10, 25, 0.1},   // gallbladder retraction
  };
  cfg.swap_prob = 0.05;
  cfg.min_total_frames = 200;
  cfg.max_total_frames = 400;
  cfg.feature_dim = 32;
  cfg.prototype_separation = 4.0;
  cfg.noise_std = 1.0;
  cfg.drift_std = 0.02;
  cfg.num_train = 40;
  cfg.num_val = 0;
  cfg.num_test = 40;
  cfg.seed = 80;
  return cfg;
}

WorkflowConfig WorkflowConfig::bypass_like() {
  WorkflowConfig cfg;
  cfg.name = "bypass-like";
  cfg.num_phases = 12;
  cfg.canonical_order = {0, 1, 2, 3, 4, 5, 6, 7, 8, 9, 10, 11};
  cfg.durations = {
      {10, 25, 0.0},  {40, 90, 0.0},  {30, 70, 0.1}, {50, 110, 0.0},
      {20, 50, 0.2},  {60, 120, 0.0}, {20, 45, 0.2}, {30, 70, 0.0},
      {15, 35, 0.3},  {25, 60, 0.0},  {10, 30, 0.3}, {10, 25, 0.0},
  };
  cfg.swap_prob = 0.1;
  cfg.min_total_frames = 300;
  cfg.max_total_frames = 700;
  cfg.feature_dim = 32;
  cfg.prototype_separation = 4.0;
  cfg.noise_std = 1.0;
  cfg.drift_std = 0.02;
  cfg.num_train = 80;
  cfg.num_val = 20;
  cfg.num_test = 40;
  cfg.seed = 140;
  return cfg;
}

WorkflowConfig WorkflowConfig::preset(const std::string& name) {
  if (name == "cholec-like") return cholec_like();
  if (name == "bypass-like") return bypass_like();
  throw std::invalid_argument("unknown dataset preset '" + name + "'");
}

PhaseLabelSequence gen_labels(const WorkflowConfig& cfg, Rng& rng) {
  cfg.validate();
  constexpr int kMaxAttempts = 1000;
  for (int attempt = 0; attempt < kMaxAttempts; ++attempt) {
    std::vector<int> order;
    for (int p : cfg.canonical_order) {
      if (!std::bernoulli_distribution(cfg.durations[static_cast<std::size_t>(p)].skip_prob)(rng)) {
        order.push_back(p);
      }
    }
    for (std::size_t i = 0; i + 1 < order.size(); ++i) {
      if (std::bernoulli_distribution(cfg.swap_prob)(rng)) {
        std::swap(order[i], order[i + 1]);
        ++i;  // a swapped pair is not swapped again
      }
    }
    if (order.empty()) continue;
    std::vector<int> labels;
    for (int p : order) {
      const auto& d = cfg.durations[static_cast<std::size_t>(p)];
      const int len = std::uniform_int_distribution<int>(d.min_frames, d.max_frames)(rng);
      labels.insert(labels.end(), static_cast<std::size_t>(len), p);
    }
    const int T = static_cast<int>(labels.size());
    if (T < cfg.min_total_frames || T > cfg.max_total_frames) continue;
    return PhaseLabelSequence(std::move(labels), cfg.num_phases);
  }
  throw std::runtime_error("gen_labels: no valid workflow after " + std::to_string(kMaxAttempts) +
                           " attempts; check skip probabilities and frame ranges");
}

Matrix gen_prototypes(const WorkflowConfig& cfg, Rng& rng) {
  // Independent N(0, s^2 / (2D)) coordinates give pairwise distances near s.
  std::normal_distribution<double> coord(
      0.0, cfg.prototype_separation / std::sqrt(2.0 * cfg.feature_dim));
  Matrix protos(cfg.num_phases, cfg.feature_dim);
  for (Eigen::Index i = 0; i < protos.size(); ++i) protos.data()[i] = coord(rng);
  return protos;
}

FeatureSequence gen_features(const PhaseLabelSequence& labels, const Matrix& prototypes,
                             const WorkflowConfig& cfg, Rng& rng, const std::string& video_id) {
  if (prototypes.rows() != labels.num_phases() || prototypes.cols() != cfg.feature_dim) {
    throw std::invalid_argument("gen_features: prototype shape does not match config");
  }
  std::normal_distribution<double> noise(0.0, 1.0);
  const int T = labels.length();
  Matrix frames(T, cfg.feature_dim);
  Eigen::RowVectorXd drift = Eigen::RowVectorXd::Zero(cfg.feature_dim);
  for (int t = 0; t < T; ++t) {
    for (int d = 0; d < cfg.feature_dim; ++d) {
      drift(d) += cfg.drift_std * noise(rng);
      frames(t, d) = prototypes(labels[static_cast<std::size_t>(t)], d) +
                     cfg.noise_std * noise(rng) + drift(d);
    }
  }
  return FeatureSequence(std::move(frames), video_id);
}

Dataset generate_dataset(const WorkflowConfig& cfg) {
  cfg.validate();
  Dataset ds;
  ds.name = cfg.name;
  ds.num_phases = cfg.num_phases;
  Rng proto_rng(derive_seed(cfg.seed, "prototypes"));
  const Matrix prototypes = gen_prototypes(cfg, proto_rng);
  for (int i = 0; i < cfg.num_videos(); ++i) {
    char id[32];
    std::snprintf(id, sizeof id, "video_%03d", i + 1);
    Rng rng(derive_seed(cfg.seed, id));
    Video v;
    v.id = id;
    v.labels = gen_labels(cfg, rng);
    v.features = gen_features(v.labels, prototypes, cfg, rng, v.id);
    v.split = i < cfg.num_train                 ? Split::train
              : i < cfg.num_train + cfg.num_val ? Split::val
                                                : Split::test;
    ds.videos.push_back(std::move(v));
  }
  return ds;
}

}  // namespace sparsephase

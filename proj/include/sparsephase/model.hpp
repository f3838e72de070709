#pragma once

#include "sparsephase/seqcore.hpp"

#include <cstdint>
#include <filesystem>
#include <functional>
#include <span>
#include <vector>

namespace sparsephase {

/// Multi-stage dilated residual TCN shape. Stage 0 reads features; later stages
/// read the softmax of the previous stage's logits.
struct TcnArch {
  int input_dim = 0;
  int num_phases = 0;
  bool blank_column = false;
  int stages = 2;
  int layers = 8;
  int channels = 32;

  int num_outputs() const { return num_phases + (blank_column ? 1 : 0); }
  std::size_t parameter_count() const;
  void validate() const;

  bool operator==(const TcnArch&) const = default;
};

struct AdamState {
  std::vector<double> m;
  std::vector<double> v;
  std::uint64_t step = 0;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;

  explicit AdamState(std::size_t n = 0) : m(n, 0.0), v(n, 0.0) {}
};

/// One bias-corrected Adam update applied in place.
void adam_update(std::span<double> values, std::span<const double> grad, AdamState& state,
                 double lr);

class TcnParams {
 public:
  TcnParams() = default;

  /// Centered uniform init scaled by 1/sqrt(fan_in), seeded.
  static TcnParams initialize(const TcnArch& arch, std::uint64_t seed,
                              bool zero_output_projection = false);
  static TcnParams from_values(const TcnArch& arch, std::vector<double> values, AdamState adam);

  const TcnArch& arch() const { return arch_; }
  std::span<const double> values() const { return values_; }
  const AdamState& adam() const { return adam_; }

  /// Unique per parameter state; changes on every mutation.
  std::uint64_t version() const { return version_; }

  /// Direct write access; invalidates outstanding tapes.
  void set_value(std::size_t index, double v);

  bool operator==(const TcnParams& other) const {
    return arch_ == other.arch_ && values_ == other.values_ && adam_.m == other.adam_.m &&
           adam_.v == other.adam_.v && adam_.step == other.adam_.step;
  }

 private:
  friend void apply_adam(TcnParams& params, std::span<const double> grad, double lr);
  void touch();

  TcnArch arch_;
  std::vector<double> values_;
  AdamState adam_;
  std::uint64_t version_ = 0;
};

/// Activations recorded by a forward pass, consumed by exactly one backward pass.
class GradTape {
 public:
  bool recorded() const { return recorded_; }
  bool consumed() const { return consumed_; }

 private:
  friend std::vector<Matrix> tcn_forward(const TcnParams&, const FeatureSequence&, GradTape*);
  friend std::vector<double> tcn_backward(const TcnParams&, GradTape&, std::span<const Matrix>);

  struct StageCache {
    Matrix input;
    std::vector<Matrix> layer_inputs;
    std::vector<Matrix> layer_relu;
    Matrix hidden;
    Matrix output_probs;
  };
  std::vector<StageCache> stages_;
  std::uint64_t params_version_ = 0;
  bool recorded_ = false;
  bool consumed_ = false;
};

/// Per-stage T x K logits. Temporal convolutions replicate edge frames so the
/// output keeps all T frames.
std::vector<Matrix> tcn_forward(const TcnParams& params, const FeatureSequence& feats,
                                GradTape* tape = nullptr);

/// Flat parameter gradient for the given per-stage d loss / d logits.
std::vector<double> tcn_backward(const TcnParams& params, GradTape& tape,
                                 std::span<const Matrix> stage_logit_grads);

void apply_adam(TcnParams& params, std::span<const double> grad, double lr);

/// Backward pass followed by one Adam step.
void train_step(TcnParams& params, std::span<const Matrix> stage_logit_grads, GradTape& tape,
                double lr);

struct StageLoss {
  double value = 0.0;
  std::vector<Matrix> grads;
};
using StageLossFn = std::function<StageLoss(const std::vector<Matrix>& stage_logits)>;

/// Max over sampled parameters of |analytic - central difference| / max(1, |central difference|).
double grad_check(const StageLossFn& loss, const TcnParams& params, const FeatureSequence& feats,
                  double eps = 1e-4, int samples = 100, std::uint64_t seed = 0);

/// Checkpoint: "PCKPT", u32 version, architecture, f64 parameters, Adam state; little-endian.
void save_checkpoint(const std::filesystem::path& path, const TcnParams& params);
TcnParams load_checkpoint(const std::filesystem::path& path);
std::string serialize_checkpoint(const TcnParams& params);
TcnParams deserialize_checkpoint(const std::string& bytes);

}  // namespace sparsephase

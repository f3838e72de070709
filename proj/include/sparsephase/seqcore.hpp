#pragma once

#include <Eigen/Core>

#include <array>
#include <cstdint>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace sparsephase {

using Matrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using Vector = Eigen::VectorXd;

/// Floor applied to every probability before a logarithm is taken.
inline constexpr double kProbFloor = 1e-12;

/// Per-video T x D frame features, stored at 1 fps.
class FeatureSequence {
 public:
  FeatureSequence() = default;
  FeatureSequence(Matrix frames, std::string video_id, double fps = 1.0);

  const Matrix& frames() const { return frames_; }
  int length() const { return static_cast<int>(frames_.rows()); }
  int dim() const { return static_cast<int>(frames_.cols()); }
  double fps() const { return fps_; }
  const std::string& video_id() const { return video_id_; }

 private:
  Matrix frames_;
  double fps_ = 1.0;
  std::string video_id_;
};

/// Dense per-frame phase labels in [0, num_phases).
class PhaseLabelSequence {
 public:
  PhaseLabelSequence() = default;
  PhaseLabelSequence(std::vector<int> labels, int num_phases);

  const std::vector<int>& labels() const { return labels_; }
  int operator[](std::size_t t) const { return labels_[t]; }
  int length() const { return static_cast<int>(labels_.size()); }
  int num_phases() const { return num_phases_; }

  bool operator==(const PhaseLabelSequence&) const = default;

 private:
  std::vector<int> labels_;
  int num_phases_ = 0;
};

enum class Provenance : std::uint8_t { ground_truth, pseudo };

const char* to_string(Provenance p);
Provenance provenance_from_string(const std::string& s);

struct Annotation {
  int frame = 0;
  int label = 0;
  Provenance provenance = Provenance::ground_truth;

  bool operator==(const Annotation&) const = default;
};

/// Sparse frame labels for one video, sorted by frame index with unique frames.
class AnnotationSet {
 public:
  AnnotationSet() = default;
  AnnotationSet(std::vector<Annotation> entries, int total_frames, int num_phases);

  const std::vector<Annotation>& entries() const { return entries_; }
  std::size_t size() const { return entries_.size(); }
  bool empty() const { return entries_.empty(); }
  int total_frames() const { return total_frames_; }
  int num_phases() const { return num_phases_; }

  std::size_t ground_truth_count() const;
  bool has_ground_truth() const { return ground_truth_count() > 0; }
  AnnotationSet ground_truth_only() const;

  /// Per-frame label or -1 when unlabeled.
  std::vector<int> dense_labels() const;
  std::optional<int> label_at(int frame) const;

  bool operator==(const AnnotationSet&) const = default;

 private:
  std::vector<Annotation> entries_;
  int total_frames_ = 0;
  int num_phases_ = 0;
};

/// Logits and their row-wise softmax. When has_blank is set, the last column is
/// the BLANK class used by the transcript losses.
class ProbabilityMatrix {
 public:
  ProbabilityMatrix() = default;

  const Matrix& logits() const { return logits_; }
  const Matrix& probs() const { return probs_; }
  /// log(max(p, kProbFloor)), computed from the log-softmax directly.
  const Matrix& log_probs() const { return log_probs_; }

  int frames() const { return static_cast<int>(probs_.rows()); }
  int columns() const { return static_cast<int>(probs_.cols()); }
  bool has_blank() const { return has_blank_; }
  int num_phases() const { return columns() - (has_blank_ ? 1 : 0); }
  int blank_column() const { return has_blank_ ? columns() - 1 : -1; }

  /// True where the floor was active; the logarithm is constant there.
  bool clamped(int t, int c) const { return log_probs_(t, c) <= kLogProbFloor; }

  /// argmax over the phase columns only.
  int phase_argmax(int t) const;
  /// argmax over all columns; returns blank_column() for a BLANK win.
  int full_argmax(int t) const;

  /// 0 where the floor clamps log p, else 1: the slope of log_probs() in the exact log-softmax.
  double log_slope(int t, int c) const { return clamped(t, c) ? 0.0 : 1.0; }

  /// Back-propagates d loss / d u (T x K), u the exact log-softmax, to d loss / d logits.
  /// Callers fold log_slope() into the gradient themselves.
  Matrix logits_grad_from_log_grad(const Matrix& log_grad) const;

  static const double kLogProbFloor;

 private:
  friend ProbabilityMatrix normalize_logits(const Matrix& logits, bool has_blank);

  Matrix logits_;
  Matrix probs_;
  Matrix log_probs_;
  bool has_blank_ = false;
};

/// Row-wise exponential normalization with max subtraction. Throws on non-finite input.
ProbabilityMatrix normalize_logits(const Matrix& logits, bool has_blank = false);

struct Hyperparams {
  double gamma = 2.0;
  std::array<double, 4> alpha{0.15, 0.5, 1.0, 0.2};
  double tau_s = 16.0;
  /// Negative means "0.5 * ln(C)", resolved once C is known.
  double tau_transition = -1.0;
  double m_t_temp = 0.25;
  /// Temperature of the entropy gate used while diffusing pseudo-labels.
  double diffusion_temp = 0.25;
  /// Frames the diffusion reach grows by per refresh; 0 leaves it unbounded.
  int diffusion_step = 0;
  /// Epochs between pseudo-label refreshes once warmup is over; 0 expands once, at
  /// the end of warmup, and keeps those labels.
  int refresh_every = 0;
  int window_w = 25;
  double lr = 5e-4;
  int epochs = 50;
  int warmup_epochs = 30;
  int batch_size = 1;
  std::uint64_t seed = 0;

  double resolved_tau_transition(int num_phases) const;
  void validate() const;
};

}  // namespace sparsephase

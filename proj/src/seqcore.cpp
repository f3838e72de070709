#include "sparsephase/seqcore.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

namespace sparsephase {

const double ProbabilityMatrix::kLogProbFloor = std::log(kProbFloor);

FeatureSequence::FeatureSequence(Matrix frames, std::string video_id, double fps)
    : frames_(std::move(frames)), fps_(fps), video_id_(std::move(video_id)) {
  if (frames_.rows() < 1 || frames_.cols() < 1) {
    throw std::invalid_argument("FeatureSequence: need T >= 1 and D >= 1");
  }
  if (!(fps_ > 0.0)) throw std::invalid_argument("FeatureSequence: fps must be positive");
  if (!frames_.allFinite()) {
    throw std::invalid_argument("FeatureSequence '" + video_id_ + "': non-finite feature value");
  }
}

PhaseLabelSequence::PhaseLabelSequence(std::vector<int> labels, int num_phases)
    : labels_(std::move(labels)), num_phases_(num_phases) {
  if (num_phases_ < 1) throw std::invalid_argument("PhaseLabelSequence: num_phases must be >= 1");
  for (std::size_t t = 0; t < labels_.size(); ++t) {
    if (labels_[t] < 0 || labels_[t] >= num_phases_) {
      std::ostringstream msg;
      msg << "PhaseLabelSequence: label " << labels_[t] << " at frame " << t
          << " outside [0, " << num_phases_ << ")";
      throw std::invalid_argument(msg.str());
    }
  }
}

const char* to_string(Provenance p) {
  return p == Provenance::ground_truth ? "ground_truth" : "pseudo";
}

Provenance provenance_from_string(const std::string& s) {
  if (s == "ground_truth") return Provenance::ground_truth;
  if (s == "pseudo") return Provenance::pseudo;
  throw std::invalid_argument("unknown provenance '" + s + "'");
}

AnnotationSet::AnnotationSet(std::vector<Annotation> entries, int total_frames, int num_phases)
    : entries_(std::move(entries)), total_frames_(total_frames), num_phases_(num_phases) {
  if (total_frames_ < 1) throw std::invalid_argument("AnnotationSet: total_frames must be >= 1");
  if (num_phases_ < 1) throw std::invalid_argument("AnnotationSet: num_phases must be >= 1");
  std::sort(entries_.begin(), entries_.end(),
            [](const Annotation& a, const Annotation& b) { return a.frame < b.frame; });
  for (std::size_t i = 0; i < entries_.size(); ++i) {
    const auto& e = entries_[i];
    if (e.frame < 0 || e.frame >= total_frames_) {
      throw std::invalid_argument("AnnotationSet: frame index " + std::to_string(e.frame) +
                                  " outside [0, " + std::to_string(total_frames_) + ")");
    }
    if (e.label < 0 || e.label >= num_phases_) {
      throw std::invalid_argument("AnnotationSet: label " + std::to_string(e.label) +
                                  " outside [0, " + std::to_string(num_phases_) + ")");
    }
    if (i > 0 && entries_[i - 1].frame == e.frame) {
      throw std::invalid_argument("AnnotationSet: duplicate frame index " +
                                  std::to_string(e.frame));
    }
  }
}

std::size_t AnnotationSet::ground_truth_count() const {
  return static_cast<std::size_t>(std::count_if(entries_.begin(), entries_.end(), [](const auto& e) {
    return e.provenance == Provenance::ground_truth;
  }));
}

AnnotationSet AnnotationSet::ground_truth_only() const {
  std::vector<Annotation> gt;
  std::copy_if(entries_.begin(), entries_.end(), std::back_inserter(gt),
               [](const auto& e) { return e.provenance == Provenance::ground_truth; });
  return AnnotationSet(std::move(gt), total_frames_, num_phases_);
}

std::vector<int> AnnotationSet::dense_labels() const {
  std::vector<int> dense(static_cast<std::size_t>(total_frames_), -1);
  for (const auto& e : entries_) dense[static_cast<std::size_t>(e.frame)] = e.label;
  return dense;
}

std::optional<int> AnnotationSet::label_at(int frame) const {
  auto it = std::lower_bound(entries_.begin(), entries_.end(), frame,
                             [](const Annotation& a, int f) { return a.frame < f; });
  if (it != entries_.end() && it->frame == frame) return it->label;
  return std::nullopt;
}

int ProbabilityMatrix::phase_argmax(int t) const {
  int best = 0;
  for (int c = 1; c < num_phases(); ++c) {
    if (probs_(t, c) > probs_(t, best)) best = c;
  }
  return best;
}

int ProbabilityMatrix::full_argmax(int t) const {
  int best = 0;
  for (int c = 1; c < columns(); ++c) {
    if (probs_(t, c) > probs_(t, best)) best = c;
  }
  return best;
}

Matrix ProbabilityMatrix::logits_grad_from_log_grad(const Matrix& log_grad) const {
  // d u_k / d l_j = [k == j] - p_j
  const Matrix& g = log_grad;
  Matrix out(g.rows(), g.cols());
  for (int t = 0; t < frames(); ++t) {
    const double s = g.row(t).sum();
    out.row(t) = g.row(t) - s * probs_.row(t);
  }
  return out;
}

ProbabilityMatrix normalize_logits(const Matrix& logits, bool has_blank) {
  if (!logits.allFinite()) throw std::invalid_argument("normalize_logits: non-finite logit");
  if (logits.rows() < 1 || logits.cols() < 1) {
    throw std::invalid_argument("normalize_logits: empty logit matrix");
  }
  if (has_blank && logits.cols() < 2) {
    throw std::invalid_argument("normalize_logits: BLANK column needs at least one phase column");
  }
  ProbabilityMatrix pm;
  pm.logits_ = logits;
  pm.has_blank_ = has_blank;
  pm.probs_.resize(logits.rows(), logits.cols());
  pm.log_probs_.resize(logits.rows(), logits.cols());
  for (Eigen::Index t = 0; t < logits.rows(); ++t) {
    const double m = logits.row(t).maxCoeff();
    double z = 0.0;
    for (Eigen::Index c = 0; c < logits.cols(); ++c) z += std::exp(logits(t, c) - m);
    const double log_z = std::log(z);
    for (Eigen::Index c = 0; c < logits.cols(); ++c) {
      const double lp = logits(t, c) - m - log_z;
      pm.probs_(t, c) = std::exp(lp);
      pm.log_probs_(t, c) = std::max(lp, ProbabilityMatrix::kLogProbFloor);
    }
  }
  return pm;
}

double Hyperparams::resolved_tau_transition(int num_phases) const {
  if (tau_transition > 0.0) return tau_transition;
  return 0.5 * std::log(static_cast<double>(num_phases));
}

void Hyperparams::validate() const {
  auto fail = [](const std::string& what) { throw std::invalid_argument("Hyperparams: " + what); };
  if (!(gamma >= 0.0)) fail("gamma must be >= 0");
  for (double a : alpha) {
    if (!(a >= 0.0)) fail("alpha entries must be >= 0");
  }
  if (!(tau_s > 0.0)) fail("tau_s must be > 0");
  if (!(m_t_temp > 0.0 && m_t_temp <= 1.0)) fail("m_t_temp must lie in (0, 1]");
  if (!(diffusion_temp > 0.0 && diffusion_temp <= 1.0)) fail("diffusion_temp must lie in (0, 1]");
  if (diffusion_step < 0) fail("diffusion_step must be non-negative");
  if (refresh_every < 0) fail("refresh_every must be non-negative");
  if (window_w < 0) fail("window_w must be >= 0");
  if (!(lr > 0.0)) fail("lr must be > 0");
  if (epochs < 0) fail("epochs must be >= 0");
  if (warmup_epochs < 0) fail("warmup_epochs must be >= 0");
  if (batch_size < 1) fail("batch_size must be >= 1");
}

}  // namespace sparsephase

#include "sparsephase/losses.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace sparsephase {

namespace {

LossValue zero_loss(const ProbabilityMatrix& probs) {
  LossValue lv;
  lv.grad = Matrix::Zero(probs.frames(), probs.columns());
  return lv;
}

void check_frames(const ProbabilityMatrix& probs, const AnnotationSet& annotations,
                  const char* who) {
  if (annotations.total_frames() != probs.frames()) {
    throw std::invalid_argument(std::string(who) + ": annotation length " +
                                std::to_string(annotations.total_frames()) +
                                " does not match probability rows " +
                                std::to_string(probs.frames()));
  }
  if (annotations.num_phases() != probs.num_phases()) {
    throw std::invalid_argument(std::string(who) + ": phase count mismatch");
  }
}

// d FL(q) / d log q, with q = exp(u) and log q floored.
double focal_log_slope(double q, double log_q, double slope, double gamma) {
  const double one_minus = 1.0 - q;
  double d = -std::pow(one_minus, gamma) * slope;
  if (gamma != 0.0 && one_minus > 0.0) d += gamma * std::pow(one_minus, gamma - 1.0) * q * log_q;
  return d;
}

}  // namespace

ClassWeights ClassWeights::uniform(int num_phases) {
  ClassWeights w;
  w.weights.assign(static_cast<std::size_t>(num_phases), 1.0);
  w.per_class.assign(static_cast<std::size_t>(num_phases), 1);
  w.total_annotated = static_cast<std::size_t>(num_phases);
  return w;
}

double focal(double q, double gamma) {
  const double qc = std::clamp(q, kProbFloor, 1.0);
  return -std::pow(1.0 - qc, gamma) * std::log(qc);
}

ClassWeights class_weights(std::span<const AnnotationSet> annotations, int num_phases) {
  ClassWeights w;
  w.per_class.assign(static_cast<std::size_t>(num_phases), 0);
  for (const auto& set : annotations) {
    for (const auto& e : set.entries()) {
      if (e.label >= num_phases) throw std::invalid_argument("class_weights: label out of range");
      ++w.per_class[static_cast<std::size_t>(e.label)];
      ++w.total_annotated;
    }
  }
  if (w.total_annotated == 0) throw std::invalid_argument("class_weights: no annotated frames");
  w.weights.resize(w.per_class.size());
  for (std::size_t c = 0; c < w.per_class.size(); ++c) {
    w.weights[c] = w.per_class[c] > 0 ? static_cast<double>(w.total_annotated) /
                                            static_cast<double>(w.per_class[c])
                                      : ClassWeights::kAbsent;
  }
  return w;
}

ClassWeights class_weights(const AnnotationSet& annotations, int num_phases) {
  return class_weights(std::span<const AnnotationSet>(&annotations, 1), num_phases);
}

LossValue classification_loss(const ProbabilityMatrix& probs, const AnnotationSet& annotations,
                              const ClassWeights& weights, double gamma) {
  check_frames(probs, annotations, "classification_loss");
  if (annotations.empty()) throw std::invalid_argument("classification_loss: no annotated frames");
  LossValue lv = zero_loss(probs);
  Matrix log_grad = Matrix::Zero(probs.frames(), probs.columns());
  const double inv_m = 1.0 / static_cast<double>(annotations.size());
  for (const auto& e : annotations.entries()) {
    if (!weights.present(e.label)) {
      throw std::invalid_argument("classification_loss: class " + std::to_string(e.label) +
                                  " has no weight (zero annotated frames)");
    }
    const double w = weights.weights[static_cast<std::size_t>(e.label)];
    const double q = probs.probs()(e.frame, e.label);
    const double log_q = probs.log_probs()(e.frame, e.label);
    lv.value += inv_m * w * -std::pow(1.0 - q, gamma) * log_q;
    log_grad(e.frame, e.label) =
        inv_m * w * focal_log_slope(q, log_q, probs.log_slope(e.frame, e.label), gamma);
  }
  lv.grad = probs.logits_grad_from_log_grad(log_grad);
  return lv;
}

LossValue entropy_loss(const ProbabilityMatrix& probs, const AnnotationSet& annotations) {
  check_frames(probs, annotations, "entropy_loss");
  if (annotations.empty()) throw std::invalid_argument("entropy_loss: no annotated frames");
  LossValue lv = zero_loss(probs);
  Matrix log_grad = Matrix::Zero(probs.frames(), probs.columns());
  const double inv_m = 1.0 / static_cast<double>(annotations.size());
  const int C = probs.num_phases();
  for (const auto& e : annotations.entries()) {
    const int t = e.frame;
    for (int c = 0; c < C; ++c) {
      const double p = probs.probs()(t, c);
      const double lp = probs.log_probs()(t, c);
      lv.value -= inv_m * p * lp;
      log_grad(t, c) = -inv_m * p * (lp + probs.log_slope(t, c));
    }
  }
  lv.grad = probs.logits_grad_from_log_grad(log_grad);
  return lv;
}

LossValue confidence_loss(const ProbabilityMatrix& probs, const AnnotationSet& annotations) {
  check_frames(probs, annotations, "confidence_loss");
  LossValue lv = zero_loss(probs);
  std::vector<Annotation> anchors;
  for (const auto& e : annotations.entries()) {
    if (e.provenance == Provenance::ground_truth) anchors.push_back(e);
  }
  if (anchors.size() < 3) return lv;

  const Matrix& lp = probs.log_probs();
  Matrix log_grad = Matrix::Zero(probs.frames(), probs.columns());
  const double inv_span = 1.0 / (2.0 * (anchors.back().frame - anchors.front().frame));
  for (std::size_t i = 1; i + 1 < anchors.size(); ++i) {
    const int c = anchors[i].label;
    const int peak = anchors[i].frame;
    // Frame pairs (t-1, t) inside [t_{i-1}, t_{i+1}]: rising up to the anchor, falling after.
    // A neighbour with the same phase likely shares the segment, so that side is left free.
    const bool free_before = anchors[i - 1].label == c;
    const bool free_after = anchors[i + 1].label == c;
    for (int t = anchors[i - 1].frame + 1; t <= anchors[i + 1].frame; ++t) {
      if (t <= peak ? free_before : free_after) continue;
      const double rise = lp(t, c) - lp(t - 1, c);
      const double sign = t <= peak ? -1.0 : 1.0;
      const double delta = sign * rise;
      if (delta <= 0.0) continue;
      lv.value += inv_span * delta;
      log_grad(t, c) += inv_span * sign * probs.log_slope(t, c);
      log_grad(t - 1, c) -= inv_span * sign * probs.log_slope(t - 1, c);
    }
  }
  lv.grad = probs.logits_grad_from_log_grad(log_grad);
  return lv;
}

LossValue smoothness_loss(const ProbabilityMatrix& probs, double tau_s) {
  if (!(tau_s > 0.0)) throw std::invalid_argument("smoothness_loss: tau_s must be > 0");
  LossValue lv = zero_loss(probs);
  const int T = probs.frames();
  const int C = probs.num_phases();
  if (T < 2) return lv;
  const Matrix& lp = probs.log_probs();
  Matrix log_grad = Matrix::Zero(T, probs.columns());
  const double inv_n = 1.0 / (static_cast<double>(T - 1) * C);
  for (int t = 1; t < T; ++t) {
    for (int c = 0; c < C; ++c) {
      const double d = lp(t, c) - lp(t - 1, c);
      if (std::abs(d) <= tau_s) {
        lv.value += inv_n * d * d;
        log_grad(t, c) += 2.0 * inv_n * d * probs.log_slope(t, c);
        log_grad(t - 1, c) -= 2.0 * inv_n * d * probs.log_slope(t - 1, c);
      } else {
        lv.value += inv_n * tau_s * tau_s;
      }
    }
  }
  lv.grad = probs.logits_grad_from_log_grad(log_grad);
  return lv;
}

LossValue total_loss(const LossComponents& components, const std::array<double, 4>& alpha) {
  LossValue out;
  out.value = components.cls.value;
  out.grad = components.cls.grad;
  auto add = [&](const LossValue& part, double a) {
    if (a == 0.0 || !part.feasible) return;
    out.value += a * part.value;
    if (part.grad.size() == 0) return;
    if (out.grad.size() == 0) {
      out.grad = a * part.grad;
    } else {
      if (out.grad.rows() != part.grad.rows() || out.grad.cols() != part.grad.cols()) {
        throw std::invalid_argument("total_loss: component gradients differ in shape");
      }
      out.grad += a * part.grad;
    }
  };
  add(components.smooth, alpha[0]);
  add(components.entropy, alpha[1]);
  add(components.conf, alpha[2]);
  add(components.stc, alpha[3]);
  return out;
}

}  // namespace sparsephase

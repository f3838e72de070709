#pragma once

#include "sparsephase/seqcore.hpp"

#include <array>
#include <span>

namespace sparsephase {

/// Scalar loss and its gradient with respect to the logits of one stage.
struct LossValue {
  double value = 0.0;
  Matrix grad;
  /// False when no alignment exists (transcript losses only); value is +inf then.
  bool feasible = true;
};

/// Inverse class frequency weights w_c = N / N_c over annotated frames.
struct ClassWeights {
  /// Stored for classes with no annotated frames; such classes must not be referenced.
  static constexpr double kAbsent = 0.0;

  std::vector<double> weights;
  std::size_t total_annotated = 0;
  std::vector<std::size_t> per_class;

  bool present(int c) const { return per_class.at(static_cast<std::size_t>(c)) > 0; }
  static ClassWeights uniform(int num_phases);
};

/// -(1 - q)^gamma * log(q), with q floored at kProbFloor.
double focal(double q, double gamma);

ClassWeights class_weights(const AnnotationSet& annotations, int num_phases);
/// Counts pooled over several videos.
ClassWeights class_weights(std::span<const AnnotationSet> annotations, int num_phases);

LossValue classification_loss(const ProbabilityMatrix& probs, const AnnotationSet& annotations,
                              const ClassWeights& weights, double gamma);

/// Mean phase-column entropy over annotated frames.
LossValue entropy_loss(const ProbabilityMatrix& probs, const AnnotationSet& annotations);

/// Monotone-confidence penalty around every interior ground-truth timestamp. The side
/// facing a neighbouring timestamp of the same phase is not penalized.
LossValue confidence_loss(const ProbabilityMatrix& probs, const AnnotationSet& annotations);

/// Truncated squared log-probability differences between neighbouring frames.
LossValue smoothness_loss(const ProbabilityMatrix& probs, double tau_s);

struct LossComponents {
  LossValue cls;
  LossValue smooth;
  LossValue entropy;
  LossValue conf;
  LossValue stc;
};

/// L_cls + a1 L_S + a2 L_Entropy + a3 L_conf + a4 L_stc. Components with an empty
/// gradient contribute their value only; infeasible components are skipped.
LossValue total_loss(const LossComponents& components, const std::array<double, 4>& alpha);

}  // namespace sparsephase

#pragma once

#include "sparsephase/seqcore.hpp"

#include <vector>

namespace sparsephase {

struct UncertaintySeries {
  std::vector<double> values;
  double temperature = 1.0;
};

struct TransitionSet {
  std::vector<int> events;
};

/// u_t = H(softmax(l_t / m_t_temp)), entropy over every logit column.
UncertaintySeries scaled_entropy(const Matrix& logits, double m_t_temp);

/// Upward threshold crossings u_{t-1} <= tau < u_t; u_{-1} counts as below tau.
TransitionSet detect_transitions(const UncertaintySeries& u, double tau);

/// Grows each ground-truth label outward while the frame's phase argmax agrees and the
/// uncertainty stays <= tau. A run never passes a neighbouring annotation; between two
/// annotations of the same phase the runs split at the midpoint (the earlier annotation
/// owns an exact midpoint). Grown frames are added as pseudo entries; pseudo entries in
/// the input are discarded first. A non-negative max_radius also stops every run that
/// many frames from its annotation.
AnnotationSet uatd_expand(const ProbabilityMatrix& probs, const AnnotationSet& annotations,
                          const UncertaintySeries& u, double tau, int max_radius = -1);

/// argmax pseudo-labels for every frame farther than window_w from all transition events.
/// Throws when every frame is masked.
AnnotationSet stage2_labels(const ProbabilityMatrix& probs, const TransitionSet& transitions,
                            int window_w);

/// Ground-truth entries replace pseudo entries on the same frame and fill unlabeled frames.
AnnotationSet overlay_ground_truth(const AnnotationSet& pseudo, const AnnotationSet& ground_truth);

}  // namespace sparsephase

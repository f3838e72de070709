#include "sparsephase/pseudolabel.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace sparsephase {

UncertaintySeries scaled_entropy(const Matrix& logits, double m_t_temp) {
  if (!(m_t_temp > 0.0 && m_t_temp <= 1.0)) {
    throw std::invalid_argument("scaled_entropy: temperature must lie in (0, 1]");
  }
  const ProbabilityMatrix p = normalize_logits(logits / m_t_temp);
  UncertaintySeries u;
  u.temperature = m_t_temp;
  u.values.resize(static_cast<std::size_t>(p.frames()));
  for (int t = 0; t < p.frames(); ++t) {
    double h = 0.0;
    for (int c = 0; c < p.columns(); ++c) {
      const double q = p.probs()(t, c);
      if (q > 0.0) h -= q * std::log(q);
    }
    u.values[static_cast<std::size_t>(t)] = std::max(h, 0.0);
  }
  return u;
}

TransitionSet detect_transitions(const UncertaintySeries& u, double tau) {
  if (!(tau > 0.0)) throw std::invalid_argument("detect_transitions: tau must be > 0");
  TransitionSet ts;
  bool above = false;
  for (std::size_t t = 0; t < u.values.size(); ++t) {
    const bool now = u.values[t] > tau;
    if (now && !above) ts.events.push_back(static_cast<int>(t));
    above = now;
  }
  return ts;
}

AnnotationSet uatd_expand(const ProbabilityMatrix& probs, const AnnotationSet& annotations,
                          const UncertaintySeries& u, double tau, int max_radius) {
  const int T = probs.frames();
  if (annotations.total_frames() != T || static_cast<int>(u.values.size()) != T) {
    throw std::invalid_argument("uatd_expand: length mismatch");
  }
  const AnnotationSet gt = annotations.ground_truth_only();
  const auto& anchors = gt.entries();
  std::vector<Annotation> out(anchors.begin(), anchors.end());

  auto accepts = [&](int t, int label) {
    return probs.phase_argmax(t) == label && u.values[static_cast<std::size_t>(t)] <= tau;
  };
  for (std::size_t i = 0; i < anchors.size(); ++i) {
    const int a = anchors[i].frame;
    const int label = anchors[i].label;
    // A differently labeled neighbour bounds the run at its own frame; the argmax test
    // already keeps the two runs apart. Same-label neighbours split at the midpoint.
    int lo = 0;
    int hi = T - 1;
    if (i > 0) {
      const Annotation& prev = anchors[i - 1];
      lo = prev.label == label ? (prev.frame + a) / 2 + 1 : prev.frame + 1;
    }
    if (i + 1 < anchors.size()) {
      const Annotation& next = anchors[i + 1];
      hi = next.label == label ? (a + next.frame) / 2 : next.frame - 1;
    }
    if (max_radius >= 0) {
      lo = std::max(lo, a - max_radius);
      hi = std::min(hi, a + max_radius);
    }
    for (int t = a + 1; t <= hi && accepts(t, label); ++t) {
      out.push_back({t, label, Provenance::pseudo});
    }
    for (int t = a - 1; t >= lo && accepts(t, label); --t) {
      out.push_back({t, label, Provenance::pseudo});
    }
  }
  return AnnotationSet(std::move(out), T, gt.num_phases());
}

AnnotationSet stage2_labels(const ProbabilityMatrix& probs, const TransitionSet& transitions,
                            int window_w) {
  if (window_w < 0) throw std::invalid_argument("stage2_labels: window must be >= 0");
  const int T = probs.frames();
  std::vector<char> masked(static_cast<std::size_t>(T), 0);
  for (int e : transitions.events) {
    const int lo = std::max(0, e - window_w);
    const int hi = std::min(T - 1, e + window_w);
    for (int t = lo; t <= hi; ++t) masked[static_cast<std::size_t>(t)] = 1;
  }
  std::vector<Annotation> out;
  for (int t = 0; t < T; ++t) {
    if (!masked[static_cast<std::size_t>(t)]) {
      out.push_back({t, probs.phase_argmax(t), Provenance::pseudo});
    }
  }
  if (out.empty()) throw std::runtime_error("stage2_labels: every frame lies inside a transition window");
  return AnnotationSet(std::move(out), T, probs.num_phases());
}

AnnotationSet overlay_ground_truth(const AnnotationSet& pseudo, const AnnotationSet& ground_truth) {
  if (pseudo.total_frames() != ground_truth.total_frames()) {
    throw std::invalid_argument("overlay_ground_truth: length mismatch");
  }
  std::vector<Annotation> merged;
  const AnnotationSet gt = ground_truth.ground_truth_only();
  std::vector<char> taken(static_cast<std::size_t>(pseudo.total_frames()), 0);
  for (const auto& e : gt.entries()) {
    taken[static_cast<std::size_t>(e.frame)] = 1;
    merged.push_back(e);
  }
  for (const auto& e : pseudo.entries()) {
    if (!taken[static_cast<std::size_t>(e.frame)]) merged.push_back(e);
  }
  return AnnotationSet(std::move(merged), pseudo.total_frames(), pseudo.num_phases());
}

}  // namespace sparsephase

#include "sparsephase/stc.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>

namespace sparsephase {

namespace {

constexpr double kNegInf = -std::numeric_limits<double>::infinity();

inline double log_add(double a, double b) {
  if (a == kNegInf) return b;
  if (b == kNegInf) return a;
  const double m = std::max(a, b);
  return m + std::log1p(std::exp(-std::abs(a - b)));
}

void require_blank(const ProbabilityMatrix& probs, const char* who) {
  if (!probs.has_blank()) {
    throw std::invalid_argument(std::string(who) + ": probability matrix has no BLANK column");
  }
}

LossValue finish(const ProbabilityMatrix& probs, double log_z, const Matrix& posterior) {
  LossValue lv;
  if (log_z == kNegInf) {
    lv.feasible = false;
    lv.value = std::numeric_limits<double>::infinity();
    lv.grad = Matrix::Zero(probs.frames(), probs.columns());
    return lv;
  }
  lv.value = -log_z;
  Matrix log_grad(probs.frames(), probs.columns());
  for (int t = 0; t < probs.frames(); ++t) {
    for (int k = 0; k < probs.columns(); ++k) {
      log_grad(t, k) = -posterior(t, k) * probs.log_slope(t, k);
    }
  }
  lv.grad = probs.logits_grad_from_log_grad(log_grad);
  return lv;
}

}  // namespace

bool Transcript::starred() const {
  return std::find(tokens.begin(), tokens.end(), kStarToken) != tokens.end();
}

void Transcript::validate(bool allow_star) const {
  for (std::size_t i = 0; i < tokens.size(); ++i) {
    const int tok = tokens[i];
    if (tok == kBlankToken) throw std::invalid_argument("Transcript: BLANK token in transcript");
    if (tok == kStarToken) {
      if (!allow_star) throw std::invalid_argument("Transcript: unexpected STAR token");
      continue;
    }
    if (tok < 0) throw std::invalid_argument("Transcript: invalid token");
    if (i > 0 && tokens[i - 1] == tok) {
      throw std::invalid_argument("Transcript: consecutive duplicate phase token");
    }
  }
}

std::vector<int> collapse(std::span<const int> path) {
  std::vector<int> out;
  int prev = kBlankToken;
  for (int tok : path) {
    if (tok != kBlankToken && tok != prev) out.push_back(tok);
    prev = tok;
  }
  return out;
}

Transcript transcript_from_annotations(const AnnotationSet& annotations) {
  Transcript tr;
  tr.source = TranscriptSource::from_annotations;
  for (const auto& e : annotations.entries()) {
    if (tr.tokens.empty() || tr.tokens.back() != e.label) tr.tokens.push_back(e.label);
  }
  return tr;
}

Transcript transcript_from_labels(const PhaseLabelSequence& labels) {
  Transcript tr;
  tr.source = TranscriptSource::from_full_labels;
  for (int l : labels.labels()) {
    if (tr.tokens.empty() || tr.tokens.back() != l) tr.tokens.push_back(l);
  }
  return tr;
}

Transcript star_augment(const Transcript& transcript) {
  transcript.validate(false);
  Transcript out;
  out.source = transcript.source;
  out.tokens.push_back(kStarToken);
  for (int tok : transcript.tokens) {
    out.tokens.push_back(tok);
    out.tokens.push_back(kStarToken);
  }
  return out;
}

StcLattice::StcLattice(const Transcript& augmented, int num_phases) : num_phases_(num_phases) {
  if (num_phases < 1) throw std::invalid_argument("StcLattice: num_phases must be >= 1");
  augmented.validate(true);
  for (int tok : augmented.tokens) {
    if (tok == kStarToken) continue;
    if (tok >= num_phases) throw std::invalid_argument("StcLattice: token exceeds phase count");
    required_.push_back(tok);
  }
  if (required_.empty()) required_.push_back(kStarToken);

  const int K = token_count();
  const int states = (required_length() + 1) * K;
  next_.assign(static_cast<std::size_t>(states * K), 0);
  for (int s = 0; s < states; ++s) {
    const int j = s / K;
    const int last = s % K - 1;
    for (int k = 0; k < K; ++k) {
      int dst;
      if (k == blank_index()) {
        dst = j * K;
      } else if (k == last) {
        dst = s;
      } else {
        const bool match = j < required_length() &&
                           (required_[static_cast<std::size_t>(j)] == kStarToken ||
                            required_[static_cast<std::size_t>(j)] == k);
        dst = (match ? j + 1 : j) * K + k + 1;
      }
      next_[static_cast<std::size_t>(s * K + k)] = dst;
    }
  }
}

LatticeScores ctc_scores(const ProbabilityMatrix& probs, const Transcript& transcript) {
  require_blank(probs, "ctc_loss");
  transcript.validate(false);
  const int T = probs.frames();
  const int blank = probs.blank_column();
  std::vector<int> ext{blank};
  for (int tok : transcript.tokens) {
    if (tok >= probs.num_phases()) throw std::invalid_argument("ctc_loss: token out of range");
    ext.push_back(tok);
    ext.push_back(blank);
  }
  const int S = static_cast<int>(ext.size());
  const Matrix& lp = probs.log_probs();
  auto skip_ok = [&](int s) { return s >= 2 && ext[s] != blank && ext[s] != ext[s - 2]; };

  Matrix alpha = Matrix::Constant(T, S, kNegInf);
  alpha(0, 0) = lp(0, ext[0]);
  if (S > 1) alpha(0, 1) = lp(0, ext[1]);
  for (int t = 1; t < T; ++t) {
    for (int s = 0; s < S; ++s) {
      double acc = alpha(t - 1, s);
      if (s >= 1) acc = log_add(acc, alpha(t - 1, s - 1));
      if (skip_ok(s)) acc = log_add(acc, alpha(t - 1, s - 2));
      if (acc != kNegInf) alpha(t, s) = acc + lp(t, ext[s]);
    }
  }
  Matrix beta = Matrix::Constant(T, S, kNegInf);
  beta(T - 1, S - 1) = lp(T - 1, ext[S - 1]);
  if (S > 1) beta(T - 1, S - 2) = lp(T - 1, ext[S - 2]);
  for (int t = T - 2; t >= 0; --t) {
    for (int s = 0; s < S; ++s) {
      double acc = beta(t + 1, s);
      if (s + 1 < S) acc = log_add(acc, beta(t + 1, s + 1));
      if (s + 2 < S && skip_ok(s + 2)) acc = log_add(acc, beta(t + 1, s + 2));
      if (acc != kNegInf) beta(t, s) = acc + lp(t, ext[s]);
    }
  }

  LatticeScores out;
  out.forward_log_z = alpha(T - 1, S - 1);
  if (S > 1) out.forward_log_z = log_add(out.forward_log_z, alpha(T - 1, S - 2));
  out.backward_log_z = beta(0, 0);
  if (S > 1) out.backward_log_z = log_add(out.backward_log_z, beta(0, 1));

  const double log_z = out.forward_log_z;
  Matrix posterior = Matrix::Zero(T, probs.columns());
  if (log_z != kNegInf) {
    for (int t = 0; t < T; ++t) {
      for (int s = 0; s < S; ++s) {
        const double g = alpha(t, s) + beta(t, s) - lp(t, ext[s]) - log_z;
        if (g != kNegInf) posterior(t, ext[s]) += std::exp(g);
      }
    }
  }
  out.loss = finish(probs, log_z, posterior);
  return out;
}

LossValue ctc_loss(const ProbabilityMatrix& probs, const Transcript& transcript) {
  return ctc_scores(probs, transcript).loss;
}

LatticeScores stc_scores(const ProbabilityMatrix& probs, const Transcript& transcript) {
  require_blank(probs, "stc_loss");
  const StcLattice lattice(star_augment(transcript), probs.num_phases());
  const int T = probs.frames();
  const int S = lattice.num_states();
  const int K = lattice.token_count();
  const Matrix& lp = probs.log_probs();

  // Each frame is one log-sum-exp step: sources are shifted by their row maximum,
  // accumulated linearly against exp(lp), and the logarithm is taken per destination.
  const Matrix p = lp.array().exp().matrix();
  auto shifted_row = [&](const Matrix& m, int t, std::vector<double>& out) {
    double mx = kNegInf;
    for (int s = 0; s < S; ++s) mx = std::max(mx, m(t, s));
    for (int s = 0; s < S; ++s) out[static_cast<std::size_t>(s)] = mx == kNegInf ? 0.0 : std::exp(m(t, s) - mx);
    return mx;
  };
  std::vector<double> src(static_cast<std::size_t>(S)), acc(static_cast<std::size_t>(S));

  // alpha(t, s): log mass of frame prefixes 0..t that end in state s.
  Matrix alpha = Matrix::Constant(T, S, kNegInf);
  for (int k = 0; k < K; ++k) {
    const int dst = lattice.next(lattice.start(), k);
    alpha(0, dst) = log_add(alpha(0, dst), lp(0, k));
  }
  for (int t = 1; t < T; ++t) {
    const double mx = shifted_row(alpha, t - 1, src);
    if (mx == kNegInf) break;
    std::fill(acc.begin(), acc.end(), 0.0);
    for (int s = 0; s < S; ++s) {
      const double a = src[static_cast<std::size_t>(s)];
      if (a == 0.0) continue;
      for (int k = 0; k < K; ++k) acc[static_cast<std::size_t>(lattice.next(s, k))] += a * p(t, k);
    }
    for (int s = 0; s < S; ++s) {
      const double v = acc[static_cast<std::size_t>(s)];
      if (v > 0.0) alpha(t, s) = mx + std::log(v);
    }
  }
  // beta(t, s): log mass of suffixes t+1..T-1 leading from s to acceptance.
  Matrix beta = Matrix::Constant(T, S, kNegInf);
  for (int s = 0; s < S; ++s) {
    if (lattice.accepting(s)) beta(T - 1, s) = 0.0;
  }
  for (int t = T - 2; t >= 0; --t) {
    const double mx = shifted_row(beta, t + 1, src);
    if (mx == kNegInf) break;
    for (int s = 0; s < S; ++s) {
      double v = 0.0;
      for (int k = 0; k < K; ++k) v += p(t + 1, k) * src[static_cast<std::size_t>(lattice.next(s, k))];
      if (v > 0.0) beta(t, s) = mx + std::log(v);
    }
  }

  LatticeScores out;
  out.forward_log_z = kNegInf;
  for (int s = 0; s < S; ++s) {
    if (lattice.accepting(s)) out.forward_log_z = log_add(out.forward_log_z, alpha(T - 1, s));
  }
  out.backward_log_z = kNegInf;
  for (int k = 0; k < K; ++k) {
    const double b = beta(0, lattice.next(lattice.start(), k));
    if (b != kNegInf) out.backward_log_z = log_add(out.backward_log_z, lp(0, k) + b);
  }

  const double log_z = out.forward_log_z;
  Matrix posterior = Matrix::Zero(T, K);
  if (log_z != kNegInf) {
    for (int k = 0; k < K; ++k) {
      const double b = beta(0, lattice.next(lattice.start(), k));
      if (b != kNegInf) posterior(0, k) = std::exp(b + lp(0, k) - log_z);
    }
    std::vector<double> fwd(static_cast<std::size_t>(S));
    for (int t = 1; t < T; ++t) {
      const double ma = shifted_row(alpha, t - 1, fwd);
      const double mb = shifted_row(beta, t, src);
      if (ma == kNegInf || mb == kNegInf) continue;
      for (int k = 0; k < K; ++k) {
        double v = 0.0;
        for (int s = 0; s < S; ++s) {
          v += fwd[static_cast<std::size_t>(s)] * src[static_cast<std::size_t>(lattice.next(s, k))];
        }
        if (v > 0.0) posterior(t, k) = std::exp(ma + mb + std::log(v) + lp(t, k) - log_z);
      }
    }
  }
  out.loss = finish(probs, log_z, posterior);
  return out;
}

LossValue stc_loss(const ProbabilityMatrix& probs, const Transcript& transcript) {
  return stc_scores(probs, transcript).loss;
}

std::vector<int> raw_predictions(const ProbabilityMatrix& probs) {
  std::vector<int> out(static_cast<std::size_t>(probs.frames()));
  for (int t = 0; t < probs.frames(); ++t) {
    const int c = probs.full_argmax(t);
    out[static_cast<std::size_t>(t)] = c == probs.blank_column() ? kBlankToken : c;
  }
  return out;
}

PhaseLabelSequence neighbor_copy(std::span<const int> predictions, int num_phases) {
  const int T = static_cast<int>(predictions.size());
  std::vector<int> prev(predictions.size(), -1);
  std::vector<int> next(predictions.size(), -1);
  int last = -1;
  for (int t = 0; t < T; ++t) {
    if (predictions[t] != kBlankToken) last = t;
    prev[static_cast<std::size_t>(t)] = last;
  }
  last = -1;
  for (int t = T - 1; t >= 0; --t) {
    if (predictions[t] != kBlankToken) last = t;
    next[static_cast<std::size_t>(t)] = last;
  }
  if (T == 0 || prev.back() < 0) throw std::invalid_argument("neighbor_copy: every frame is BLANK");

  std::vector<int> out(predictions.begin(), predictions.end());
  for (int t = 0; t < T; ++t) {
    if (predictions[t] != kBlankToken) continue;
    const int p = prev[static_cast<std::size_t>(t)];
    const int n = next[static_cast<std::size_t>(t)];
    int src;
    if (p < 0) {
      src = n;
    } else if (n < 0) {
      src = p;
    } else {
      src = (t - p <= n - t) ? p : n;
    }
    out[static_cast<std::size_t>(t)] = predictions[src];
  }
  return PhaseLabelSequence(std::move(out), num_phases);
}

PhaseLabelSequence predict_labels(const ProbabilityMatrix& probs) {
  return neighbor_copy(raw_predictions(probs), probs.num_phases());
}

double brute_force_path_sum(const ProbabilityMatrix& probs, const Transcript& transcript,
                            bool star) {
  require_blank(probs, "brute_force_path_sum");
  transcript.validate(false);
  const int T = probs.frames();
  const int K = probs.columns();
  const int blank = probs.blank_column();
  double count = 1.0;
  for (int t = 0; t < T; ++t) count *= K;
  if (count > 1e7) throw std::invalid_argument("brute_force_path_sum: instance exceeds 1e7 paths");

  const std::vector<int>& y = transcript.tokens;
  std::vector<int> digits(static_cast<std::size_t>(T), 0);
  std::vector<int> path(static_cast<std::size_t>(T));
  long double total = 0.0L;
  const auto n_paths = static_cast<long long>(count);
  for (long long idx = 0; idx < n_paths; ++idx) {
    long double mass = 1.0L;
    for (int t = 0; t < T; ++t) {
      const int k = digits[static_cast<std::size_t>(t)];
      path[static_cast<std::size_t>(t)] = k == blank ? kBlankToken : k;
      mass *= static_cast<long double>(probs.probs()(t, k));
    }
    // Independent collapse: drop repeats, then blanks.
    std::vector<int> z;
    for (int t = 0; t < T; ++t) {
      const int cur = path[static_cast<std::size_t>(t)];
      if (t > 0 && cur == path[static_cast<std::size_t>(t - 1)]) continue;
      if (cur != kBlankToken) z.push_back(cur);
    }
    bool accept;
    if (!star) {
      accept = z == y;
    } else {
      std::size_t matched = 0;
      for (int tok : z) {
        if (matched < y.size() && tok == y[matched]) ++matched;
      }
      accept = matched == y.size() && !z.empty();
    }
    if (accept) total += mass;
    for (int t = 0; t < T; ++t) {
      if (++digits[static_cast<std::size_t>(t)] < K) break;
      digits[static_cast<std::size_t>(t)] = 0;
    }
  }
  if (total <= 0.0L) return std::numeric_limits<double>::infinity();
  return -static_cast<double>(std::log(total));
}

}  // namespace sparsephase

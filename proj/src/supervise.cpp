#include "sparsephase/supervise.hpp"

#include <cstdio>
#include <stdexcept>

namespace sparsephase {

namespace {

std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9E3779B97F4A7C15ull;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ull;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBull;
  return x ^ (x >> 31);
}

int uniform_index(Rng& rng, int lo, int hi) {
  return std::uniform_int_distribution<int>(lo, hi)(rng);
}

}  // namespace

void SupervisionSpec::validate() const {
  if (!(miss_rate >= 0.0 && miss_rate <= 1.0)) {
    throw std::invalid_argument("SupervisionSpec: miss rate must lie in [0, 1]");
  }
  if (k < 1) throw std::invalid_argument("SupervisionSpec: K must be >= 1");
}

std::string SupervisionSpec::label() const {
  switch (kind) {
    case SupervisionKind::full:
      return "full";
    case SupervisionKind::timestamp:
      return "timestamp";
    case SupervisionKind::timestamp_missing: {
      char buf[32];
      std::snprintf(buf, sizeof buf, "missing %.1f", miss_rate);
      return buf;
    }
    case SupervisionKind::skiptag:
      return "SkipTag@" + std::to_string(k);
  }
  return "?";
}

const char* to_string(SupervisionKind kind) {
  switch (kind) {
    case SupervisionKind::full:
      return "full";
    case SupervisionKind::timestamp:
      return "timestamp";
    case SupervisionKind::timestamp_missing:
      return "timestamp_missing";
    case SupervisionKind::skiptag:
      return "skiptag";
  }
  return "?";
}

SupervisionKind supervision_kind_from_string(const std::string& s) {
  if (s == "full") return SupervisionKind::full;
  if (s == "timestamp") return SupervisionKind::timestamp;
  if (s == "timestamp_missing" || s == "missing") return SupervisionKind::timestamp_missing;
  if (s == "skiptag") return SupervisionKind::skiptag;
  throw std::invalid_argument("unknown supervision kind '" + s + "'");
}

AnnotationSet timestamp_sample(const PhaseLabelSequence& full, Rng& rng,
                               TimestampPlacement placement) {
  const int T = full.length();
  if (T < 1) throw std::invalid_argument("timestamp_sample: empty label sequence");
  std::vector<Annotation> out;
  int start = 0;
  for (int t = 1; t <= T; ++t) {
    if (t == T || full[static_cast<std::size_t>(t)] != full[static_cast<std::size_t>(start)]) {
      const int pick = placement == TimestampPlacement::midpoint ? (start + t - 1) / 2
                                                                 : uniform_index(rng, start, t - 1);
      out.push_back({pick, full[static_cast<std::size_t>(start)], Provenance::ground_truth});
      start = t;
    }
  }
  return AnnotationSet(std::move(out), T, full.num_phases());
}

AnnotationSet apply_missing(const AnnotationSet& ts, double miss_rate, Rng& rng) {
  if (!(miss_rate >= 0.0 && miss_rate <= 1.0)) {
    throw std::invalid_argument("apply_missing: miss rate must lie in [0, 1]");
  }
  if (ts.empty()) return ts;
  std::bernoulli_distribution drop(miss_rate);
  std::vector<Annotation> kept;
  for (const auto& e : ts.entries()) {
    if (!drop(rng)) kept.push_back(e);
  }
  if (kept.empty()) {
    kept.push_back(ts.entries()[static_cast<std::size_t>(
        uniform_index(rng, 0, static_cast<int>(ts.size()) - 1))]);
  }
  return AnnotationSet(std::move(kept), ts.total_frames(), ts.num_phases());
}

AnnotationSet skiptag_sample(const PhaseLabelSequence& full, int k, Rng& rng) {
  const int T = full.length();
  if (k < 1 || k > T) {
    throw std::invalid_argument("skiptag_sample: K=" + std::to_string(k) + " outside [1, " +
                                std::to_string(T) + "]");
  }
  const int base = T / k;
  const int extra = T % k;
  std::vector<Annotation> out;
  int start = 0;
  for (int p = 0; p < k; ++p) {
    const int size = base + (p < extra ? 1 : 0);
    const int pick = uniform_index(rng, start, start + size - 1);
    out.push_back({pick, full[static_cast<std::size_t>(pick)], Provenance::ground_truth});
    start += size;
  }
  return AnnotationSet(std::move(out), T, full.num_phases());
}

AnnotationSet full_annotations(const PhaseLabelSequence& full) {
  std::vector<Annotation> out;
  out.reserve(static_cast<std::size_t>(full.length()));
  for (int t = 0; t < full.length(); ++t) {
    out.push_back({t, full[static_cast<std::size_t>(t)], Provenance::ground_truth});
  }
  return AnnotationSet(std::move(out), full.length(), full.num_phases());
}

std::uint64_t derive_seed(std::uint64_t seed, const std::string& key) {
  std::uint64_t h = 0xCBF29CE484222325ull;  // FNV-1a
  for (unsigned char ch : key) {
    h ^= ch;
    h *= 0x100000001B3ull;
  }
  return splitmix64(seed ^ splitmix64(h));
}

AnnotationSet simulate(const PhaseLabelSequence& full, const SupervisionSpec& spec,
                       const std::string& video_id) {
  spec.validate();
  Rng rng(derive_seed(spec.seed, video_id));
  switch (spec.kind) {
    case SupervisionKind::full:
      return full_annotations(full);
    case SupervisionKind::timestamp:
      return timestamp_sample(full, rng, spec.placement);
    case SupervisionKind::timestamp_missing: {
      const AnnotationSet ts = timestamp_sample(full, rng, spec.placement);
      return apply_missing(ts, spec.miss_rate, rng);
    }
    case SupervisionKind::skiptag:
      return skiptag_sample(full, std::min(spec.k, full.length()), rng);
  }
  throw std::logic_error("simulate: unhandled supervision kind");
}

}  // namespace sparsephase

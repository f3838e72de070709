#include "sparsephase/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <stdexcept>

namespace sparsephase {

VideoMetrics evaluate_video(const PhaseLabelSequence& pred, const PhaseLabelSequence& gt) {
  if (pred.length() != gt.length()) {
    throw std::invalid_argument("evaluate_video: prediction has " + std::to_string(pred.length()) +
                                " frames, ground truth " + std::to_string(gt.length()));
  }
  if (gt.length() == 0) throw std::invalid_argument("evaluate_video: empty sequences");

  struct Counts {
    long inter = 0, in_gt = 0, in_pred = 0;
  };
  std::map<int, Counts> counts;
  long correct = 0;
  for (int t = 0; t < gt.length(); ++t) {
    const int g = gt[static_cast<std::size_t>(t)];
    const int p = pred[static_cast<std::size_t>(t)];
    ++counts[g].in_gt;
    ++counts[p].in_pred;
    if (g == p) {
      ++counts[g].inter;
      ++correct;
    }
  }

  VideoMetrics vm;
  vm.accuracy = 100.0 * static_cast<double>(correct) / gt.length();
  for (const auto& [phase, c] : counts) {
    PhaseScores s;
    const long uni = c.in_gt + c.in_pred - c.inter;
    if (c.in_pred > 0) s.precision = 100.0 * c.inter / static_cast<double>(c.in_pred);
    if (c.in_gt > 0) s.recall = 100.0 * c.inter / static_cast<double>(c.in_gt);
    if (uni > 0) s.jaccard = 100.0 * c.inter / static_cast<double>(uni);
    if (s.precision + s.recall > 0.0) {
      s.f1 = 2.0 * s.precision * s.recall / (s.precision + s.recall);
    }
    vm.per_phase[phase] = s;
    vm.averaged.precision += s.precision;
    vm.averaged.recall += s.recall;
    vm.averaged.jaccard += s.jaccard;
    vm.averaged.f1 += s.f1;
  }
  const double n = static_cast<double>(counts.size());
  vm.averaged.precision /= n;
  vm.averaged.recall /= n;
  vm.averaged.jaccard /= n;
  vm.averaged.f1 /= n;
  return vm;
}

AcceptableLabels relax_ground_truth(const PhaseLabelSequence& gt, double fps,
                                    double window_seconds) {
  if (!(fps > 0.0)) throw std::invalid_argument("relax_ground_truth: fps must be > 0");
  const int T = gt.length();
  AcceptableLabels sets(static_cast<std::size_t>(T));
  for (int t = 0; t < T; ++t) sets[static_cast<std::size_t>(t)] = {gt[static_cast<std::size_t>(t)]};
  const int w = static_cast<int>(std::lround(window_seconds * fps));
  for (int b = 1; b < T; ++b) {
    const int before = gt[static_cast<std::size_t>(b - 1)];
    const int after = gt[static_cast<std::size_t>(b)];
    if (before == after) continue;
    for (int t = std::max(0, b - w); t < std::min(T, b + w); ++t) {
      auto& s = sets[static_cast<std::size_t>(t)];
      for (int label : {before, after}) {
        if (std::find(s.begin(), s.end(), label) == s.end()) s.push_back(label);
      }
    }
  }
  for (auto& s : sets) std::sort(s.begin(), s.end());
  return sets;
}

VideoMetrics evaluate_video_relaxed(const PhaseLabelSequence& pred, const PhaseLabelSequence& gt,
                                    double fps, double window_seconds) {
  if (pred.length() != gt.length()) throw std::invalid_argument("evaluate_video_relaxed: length mismatch");
  const AcceptableLabels sets = relax_ground_truth(gt, fps, window_seconds);
  std::vector<int> effective = gt.labels();
  int num_phases = std::max(gt.num_phases(), pred.num_phases());
  for (int t = 0; t < gt.length(); ++t) {
    const auto& s = sets[static_cast<std::size_t>(t)];
    const int p = pred[static_cast<std::size_t>(t)];
    if (std::binary_search(s.begin(), s.end(), p)) effective[static_cast<std::size_t>(t)] = p;
  }
  return evaluate_video(pred, PhaseLabelSequence(std::move(effective), num_phases));
}

AggregateReport aggregate(const std::vector<VideoMetrics>& per_video) {
  if (per_video.empty()) throw std::invalid_argument("aggregate: no videos");
  auto stats = [&](auto field) {
    double sum = 0.0;
    for (const auto& vm : per_video) sum += field(vm);
    const double mean = sum / static_cast<double>(per_video.size());
    double sq = 0.0;
    for (const auto& vm : per_video) sq += (field(vm) - mean) * (field(vm) - mean);
    return MeanStd{mean, std::sqrt(sq / static_cast<double>(per_video.size()))};
  };
  AggregateReport r;
  r.videos = per_video.size();
  r.recall = stats([](const VideoMetrics& v) { return v.averaged.recall; });
  r.precision = stats([](const VideoMetrics& v) { return v.averaged.precision; });
  r.jaccard = stats([](const VideoMetrics& v) { return v.averaged.jaccard; });
  r.accuracy = stats([](const VideoMetrics& v) { return v.accuracy; });
  r.f1 = stats([](const VideoMetrics& v) { return v.averaged.f1; });
  return r;
}

std::string format_mean_std(const MeanStd& ms) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.1f±%.1f", ms.mean, ms.std);
  return buf;
}

}  // namespace sparsephase

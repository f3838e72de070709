#pragma once

#include "sparsephase/seqcore.hpp"

#include <map>
#include <string>
#include <vector>

namespace sparsephase {

/// Percentages. PR/RE/JA/F1 are 0 for a phase whose denominator is empty.
struct PhaseScores {
  double precision = 0.0;
  double recall = 0.0;
  double jaccard = 0.0;
  double f1 = 0.0;
};

struct VideoMetrics {
  double accuracy = 0.0;
  std::map<int, PhaseScores> per_phase;
  /// Mean of per_phase over phases present in ground truth or prediction.
  PhaseScores averaged;
};

/// Phases accepted at each frame, sorted ascending.
using AcceptableLabels = std::vector<std::vector<int>>;

VideoMetrics evaluate_video(const PhaseLabelSequence& pred, const PhaseLabelSequence& gt);

/// Frames t with b - w <= t < b + w, w = window_seconds * fps, around every transition b
/// (first frame of a new phase) accept both the outgoing and the incoming phase.
AcceptableLabels relax_ground_truth(const PhaseLabelSequence& gt, double fps,
                                    double window_seconds = 10.0);

/// Strict evaluation against a ground truth in which each frame whose prediction is
/// acceptable is relabeled to the prediction.
VideoMetrics evaluate_video_relaxed(const PhaseLabelSequence& pred, const PhaseLabelSequence& gt,
                                    double fps, double window_seconds = 10.0);

struct MeanStd {
  double mean = 0.0;
  double std = 0.0;
};

/// Population statistics across videos, in the RE, PR, JA, AC, F1 column order.
struct AggregateReport {
  std::size_t videos = 0;
  MeanStd recall;
  MeanStd precision;
  MeanStd jaccard;
  MeanStd accuracy;
  MeanStd f1;
};

AggregateReport aggregate(const std::vector<VideoMetrics>& per_video);

/// "mean±std" with one decimal each.
std::string format_mean_std(const MeanStd& ms);

}  // namespace sparsephase

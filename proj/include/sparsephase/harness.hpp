#pragma once

#include "sparsephase/dataset.hpp"
#include "sparsephase/losses.hpp"
#include "sparsephase/metrics.hpp"
#include "sparsephase/model.hpp"
#include "sparsephase/supervise.hpp"
#include "sparsephase/synthdata.hpp"

#include <json.hpp>

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <set>
#include <stdexcept>
#include <string>
#include <vector>

namespace sparsephase {

/// Malformed or inconsistent experiment configuration. Maps to exit code 2.
class ConfigError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Non-finite loss during training. Maps to exit code 3.
class DivergenceError : public std::runtime_error {
 public:
  DivergenceError(std::string component, int epoch, const std::string& video_id);
  const std::string& component() const { return component_; }

 private:
  std::string component_;
};

/// Training-time switches matching the ablation rows: each one removes a single ingredient.
struct AblationFlags {
  bool conf = true;         // confidence loss
  bool focal = true;        // gamma > 0; otherwise plain cross-entropy
  bool reweighting = true;  // inverse class frequency weights
  bool stc = true;          // BLANK column and the STC loss
  bool diffusion = true;    // pseudo-label refresh after warmup
};

struct DatasetSource {
  /// Either a synthdata preset name or a directory written by save_dataset.
  std::string preset;
  std::filesystem::path dir;
  /// Preset with any overrides applied; unused for directory datasets.
  WorkflowConfig workflow;
};

struct ExperimentConfig {
  std::string name = "experiment";
  std::uint64_t seed = 0;
  DatasetSource dataset;
  /// Optional annotation CSV replacing simulated supervision.
  std::filesystem::path annotations_path;
  SupervisionSpec supervision;
  Hyperparams hp;
  int stages = 2;
  int layers = 8;
  int channels = 32;
  bool stage2_enabled = true;
  int stage2_epochs = 50;
  AblationFlags ablation;
  bool relaxed_eval = false;
  double relaxed_window_seconds = 10.0;
  std::filesystem::path output_dir = "runs/experiment";
  /// Supervision rows for run_matrix; empty means the default rows for the dataset.
  std::vector<SupervisionSpec> matrix_rows;

  /// Whether the model carries a BLANK column for the transcript loss.
  bool uses_blank() const { return ablation.stc && hp.alpha[3] > 0.0; }
  TcnArch arch(int input_dim, int num_phases, bool blank) const;
  void validate() const;
};

/// Parses the JSON config format. Unknown keys and a missing seed are ConfigErrors.
ExperimentConfig parse_config(const nlohmann::json& doc);
ExperimentConfig load_config(const std::filesystem::path& path);
nlohmann::json config_to_json(const ExperimentConfig& cfg);

/// Timestamp, missing 0.1/0.2/0.3, then SkipTag@K for the dataset's K values.
std::vector<SupervisionSpec> default_matrix_rows(int num_phases, std::uint64_t seed);

Dataset resolve_dataset(const ExperimentConfig& cfg);

/// Ground-truth annotations for every training video, simulated or read from file.
std::map<std::string, AnnotationSet> training_annotations(const ExperimentConfig& cfg,
                                                         const Dataset& ds);

/// Mean unweighted component values over the epoch's videos and stages.
struct EpochLog {
  int epoch = 0;
  double cls = 0.0;
  double smooth = 0.0;
  double entropy = 0.0;
  double conf = 0.0;
  double stc = 0.0;
  double total = 0.0;
  std::size_t pseudo_labels = 0;
};

struct TrainResult {
  TcnParams params;
  std::vector<EpochLog> log;
  /// Final supervision per training video, pseudo entries included.
  std::map<std::string, AnnotationSet> annotations;
  /// Every video whose frames reached a gradient.
  std::set<std::string> trained_videos;
};

/// Stage-1 training with the full loss and pseudo-label refresh after warmup.
TrainResult run_stage1(const ExperimentConfig& cfg, const Dataset& ds,
                       const std::map<std::string, AnnotationSet>& ground_truth);
TrainResult run_stage1(const ExperimentConfig& cfg);

/// Current pseudo-labels of one video under a stage-1 model, optionally capped at
/// max_radius frames from each annotation.
AnnotationSet expand_annotations(const ExperimentConfig& cfg, const TcnParams& params,
                                 const FeatureSequence& feats, const AnnotationSet& ground_truth,
                                 int max_radius = -1);

/// Stage-2 targets: argmax away from detected transitions, ground truth overlaid.
AnnotationSet stage2_targets(const ExperimentConfig& cfg, const TcnParams& base,
                             const FeatureSequence& feats, const AnnotationSet& ground_truth);

/// Fresh model trained on stage2_targets with unweighted focal plus smoothness.
TrainResult run_stage2(const ExperimentConfig& cfg, const Dataset& ds, const TcnParams& base,
                       const std::map<std::string, AnnotationSet>& ground_truth);

PhaseLabelSequence predict(const TcnParams& params, const FeatureSequence& feats);

struct EvalResult {
  std::map<std::string, VideoMetrics> per_video;
  AggregateReport report;
};

EvalResult evaluate(const ExperimentConfig& cfg, const Dataset& ds, const TcnParams& params,
                    Split split = Split::test);

/// Throws std::logic_error if any trained video belongs to the test split.
void audit_no_test_training(const Dataset& ds, const std::set<std::string>& trained);

struct MatrixCell {
  std::string setup;
  std::string method;  // "base" or "stage-2"
  std::optional<AggregateReport> report;
  std::string error;
};

struct MatrixReport {
  std::vector<MatrixCell> cells;
  nlohmann::json manifest;
};

/// Runs every supervision row with and without stage 2. A failing cell is recorded
/// and the remaining cells still run. Cell results are written under
/// output_dir/cells and, when reuse_cells is set, picked up again instead of rerun.
MatrixReport run_matrix(const ExperimentConfig& cfg, bool reuse_cells = false);

/// setup,method,RE,PR,JA,AC,F1 with mean±std cells.
std::string matrix_csv(const MatrixReport& report);
void write_matrix_outputs(const MatrixReport& report, const std::filesystem::path& dir);

std::string train_log_csv(const std::vector<EpochLog>& log);
nlohmann::json eval_to_json(const EvalResult& result);

}  // namespace sparsephase

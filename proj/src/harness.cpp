#include "sparsephase/harness.hpp"

#include "sparsephase/io.hpp"
#include "sparsephase/pseudolabel.hpp"
#include "sparsephase/stc.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstdio>
#include <numeric>
#include <sstream>

namespace sparsephase {

namespace fs = std::filesystem;
using nlohmann::json;

DivergenceError::DivergenceError(std::string component, int epoch, const std::string& video_id)
    : std::runtime_error("training diverged: non-finite " + component + " loss at epoch " +
                         std::to_string(epoch) + " on video " + video_id),
      component_(std::move(component)) {}

// ---------------------------------------------------------------------------
// Configuration

namespace {

void check_keys(const json& obj, std::initializer_list<const char*> allowed,
                const std::string& section) {
  if (!obj.is_object()) throw ConfigError(section + ": expected an object");
  for (const auto& [key, _] : obj.items()) {
    if (std::none_of(allowed.begin(), allowed.end(), [&](const char* a) { return key == a; })) {
      throw ConfigError(section + ": unknown key '" + key + "'");
    }
  }
}

template <typename T>
void read_into(const json& obj, const char* key, T& out, const std::string& section) {
  if (!obj.contains(key)) return;
  try {
    out = obj.at(key).get<T>();
  } catch (const json::exception& e) {
    throw ConfigError(section + "." + key + ": " + e.what());
  }
}

SupervisionSpec parse_supervision(const json& obj, std::uint64_t seed, const std::string& section) {
  check_keys(obj, {"kind", "miss_rate", "k", "placement", "seed"}, section);
  SupervisionSpec spec;
  spec.seed = seed;
  std::string kind = "timestamp";
  read_into(obj, "kind", kind, section);
  try {
    spec.kind = supervision_kind_from_string(kind);
  } catch (const std::invalid_argument& e) {
    throw ConfigError(section + ": " + e.what());
  }
  read_into(obj, "miss_rate", spec.miss_rate, section);
  read_into(obj, "k", spec.k, section);
  read_into(obj, "seed", spec.seed, section);
  std::string placement = "uniform";
  read_into(obj, "placement", placement, section);
  if (placement == "uniform") {
    spec.placement = TimestampPlacement::uniform;
  } else if (placement == "midpoint") {
    spec.placement = TimestampPlacement::midpoint;
  } else {
    throw ConfigError(section + ": unknown placement '" + placement + "'");
  }
  try {
    spec.validate();
  } catch (const std::invalid_argument& e) {
    throw ConfigError(section + ": " + e.what());
  }
  return spec;
}

json supervision_to_json(const SupervisionSpec& s) {
  return {{"kind", to_string(s.kind)},
          {"miss_rate", s.miss_rate},
          {"k", s.k},
          {"seed", s.seed},
          {"placement", s.placement == TimestampPlacement::uniform ? "uniform" : "midpoint"}};
}

void apply_workflow_overrides(WorkflowConfig& wf, const json& obj) {
  const std::string section = "dataset.overrides";
  check_keys(obj,
             {"num_train", "num_val", "num_test", "seed", "noise_std", "drift_std",
              "prototype_separation", "feature_dim", "swap_prob", "min_total_frames",
              "max_total_frames"},
             section);
  read_into(obj, "num_train", wf.num_train, section);
  read_into(obj, "num_val", wf.num_val, section);
  read_into(obj, "num_test", wf.num_test, section);
  read_into(obj, "seed", wf.seed, section);
  read_into(obj, "noise_std", wf.noise_std, section);
  read_into(obj, "drift_std", wf.drift_std, section);
  read_into(obj, "prototype_separation", wf.prototype_separation, section);
  read_into(obj, "feature_dim", wf.feature_dim, section);
  read_into(obj, "swap_prob", wf.swap_prob, section);
  read_into(obj, "min_total_frames", wf.min_total_frames, section);
  read_into(obj, "max_total_frames", wf.max_total_frames, section);
}

}  // namespace

TcnArch ExperimentConfig::arch(int input_dim, int num_phases, bool blank) const {
  TcnArch a;
  a.input_dim = input_dim;
  a.num_phases = num_phases;
  a.blank_column = blank;
  a.stages = stages;
  a.layers = layers;
  a.channels = channels;
  return a;
}

void ExperimentConfig::validate() const {
  if (dataset.preset.empty() == dataset.dir.empty()) {
    throw ConfigError("dataset: exactly one of 'preset' and 'dir' must be given");
  }
  if (!dataset.preset.empty()) {
    try {
      dataset.workflow.validate();
    } catch (const std::invalid_argument& e) {
      throw ConfigError(std::string("dataset: ") + e.what());
    }
  }
  try {
    hp.validate();
    supervision.validate();
    for (const auto& row : matrix_rows) row.validate();
  } catch (const std::invalid_argument& e) {
    throw ConfigError(e.what());
  }
  if (stages < 1 || layers < 1 || channels < 1) throw ConfigError("model: sizes must be >= 1");
  if (stage2_epochs < 0) throw ConfigError("stage2.epochs must be >= 0");
  if (!(relaxed_window_seconds >= 0.0)) throw ConfigError("evaluation.window_seconds must be >= 0");
}

ExperimentConfig parse_config(const json& doc) {
  check_keys(doc,
             {"name", "seed", "dataset", "annotations", "supervision", "hyperparams", "model",
              "stage2", "ablation", "evaluation", "output_dir", "matrix"},
             "config");
  ExperimentConfig cfg;
  if (!doc.contains("seed")) throw ConfigError("config: 'seed' is required");
  read_into(doc, "seed", cfg.seed, "config");
  read_into(doc, "name", cfg.name, "config");

  if (!doc.contains("dataset")) throw ConfigError("config: 'dataset' is required");
  const json& ds = doc.at("dataset");
  check_keys(ds, {"preset", "dir", "overrides"}, "dataset");
  read_into(ds, "preset", cfg.dataset.preset, "dataset");
  std::string dir;
  read_into(ds, "dir", dir, "dataset");
  cfg.dataset.dir = dir;
  if (!cfg.dataset.preset.empty()) {
    try {
      cfg.dataset.workflow = WorkflowConfig::preset(cfg.dataset.preset);
    } catch (const std::invalid_argument& e) {
      throw ConfigError(std::string("dataset: ") + e.what());
    }
    if (ds.contains("overrides")) apply_workflow_overrides(cfg.dataset.workflow, ds.at("overrides"));
  } else if (ds.contains("overrides")) {
    throw ConfigError("dataset.overrides only applies to presets");
  }

  std::string annotations;
  read_into(doc, "annotations", annotations, "config");
  cfg.annotations_path = annotations;

  cfg.supervision = parse_supervision(doc.value("supervision", json::object()), cfg.seed,
                                      "supervision");

  cfg.hp.seed = cfg.seed;
  if (doc.contains("hyperparams")) {
    const json& hp = doc.at("hyperparams");
    const std::string s = "hyperparams";
    check_keys(hp,
               {"gamma", "alpha", "tau_s", "tau_transition", "m_t", "diffusion_temperature",
                "diffusion_step", "refresh_every", "window_w", "lr", "epochs", "warmup_epochs"},
               s);
    read_into(hp, "gamma", cfg.hp.gamma, s);
    read_into(hp, "alpha", cfg.hp.alpha, s);
    read_into(hp, "tau_s", cfg.hp.tau_s, s);
    if (hp.contains("tau_transition") && !hp.at("tau_transition").is_null()) {
      read_into(hp, "tau_transition", cfg.hp.tau_transition, s);
    }
    read_into(hp, "m_t", cfg.hp.m_t_temp, s);
    read_into(hp, "diffusion_temperature", cfg.hp.diffusion_temp, s);
    read_into(hp, "diffusion_step", cfg.hp.diffusion_step, s);
    read_into(hp, "refresh_every", cfg.hp.refresh_every, s);
    read_into(hp, "window_w", cfg.hp.window_w, s);
    read_into(hp, "lr", cfg.hp.lr, s);
    read_into(hp, "epochs", cfg.hp.epochs, s);
    read_into(hp, "warmup_epochs", cfg.hp.warmup_epochs, s);
  }
  cfg.stage2_epochs = cfg.hp.epochs;

  if (doc.contains("model")) {
    const json& m = doc.at("model");
    check_keys(m, {"stages", "layers", "channels"}, "model");
    read_into(m, "stages", cfg.stages, "model");
    read_into(m, "layers", cfg.layers, "model");
    read_into(m, "channels", cfg.channels, "model");
  }
  if (doc.contains("stage2")) {
    const json& s2 = doc.at("stage2");
    check_keys(s2, {"enabled", "epochs"}, "stage2");
    read_into(s2, "enabled", cfg.stage2_enabled, "stage2");
    read_into(s2, "epochs", cfg.stage2_epochs, "stage2");
  }
  if (doc.contains("ablation")) {
    const json& a = doc.at("ablation");
    check_keys(a, {"conf", "focal", "reweighting", "stc", "diffusion"}, "ablation");
    read_into(a, "conf", cfg.ablation.conf, "ablation");
    read_into(a, "focal", cfg.ablation.focal, "ablation");
    read_into(a, "reweighting", cfg.ablation.reweighting, "ablation");
    read_into(a, "stc", cfg.ablation.stc, "ablation");
    read_into(a, "diffusion", cfg.ablation.diffusion, "ablation");
  }
  if (doc.contains("evaluation")) {
    const json& e = doc.at("evaluation");
    check_keys(e, {"relaxed", "window_seconds"}, "evaluation");
    read_into(e, "relaxed", cfg.relaxed_eval, "evaluation");
    read_into(e, "window_seconds", cfg.relaxed_window_seconds, "evaluation");
  }
  std::string out = cfg.output_dir.string();
  read_into(doc, "output_dir", out, "config");
  cfg.output_dir = out;
  if (doc.contains("matrix")) {
    const json& m = doc.at("matrix");
    check_keys(m, {"rows"}, "matrix");
    if (m.contains("rows")) {
      if (!m.at("rows").is_array()) throw ConfigError("matrix.rows: expected an array");
      int i = 0;
      for (const auto& row : m.at("rows")) {
        cfg.matrix_rows.push_back(
            parse_supervision(row, cfg.seed, "matrix.rows[" + std::to_string(i++) + "]"));
      }
    }
  }
  cfg.validate();
  return cfg;
}

ExperimentConfig load_config(const fs::path& path) {
  std::string text;
  try {
    text = io::read_file(path);
  } catch (const std::exception& e) {
    throw ConfigError(e.what());
  }
  json doc;
  try {
    doc = json::parse(text);
  } catch (const json::parse_error& e) {
    throw ConfigError(path.string() + ": " + e.what());
  }
  return parse_config(doc);
}

json config_to_json(const ExperimentConfig& cfg) {
  json doc;
  doc["name"] = cfg.name;
  doc["seed"] = cfg.seed;
  if (!cfg.dataset.preset.empty()) {
    const WorkflowConfig& wf = cfg.dataset.workflow;
    doc["dataset"] = {{"preset", cfg.dataset.preset},
                      {"overrides",
                       {{"num_train", wf.num_train},
                        {"num_val", wf.num_val},
                        {"num_test", wf.num_test},
                        {"seed", wf.seed},
                        {"noise_std", wf.noise_std},
                        {"drift_std", wf.drift_std},
                        {"prototype_separation", wf.prototype_separation},
                        {"feature_dim", wf.feature_dim},
                        {"swap_prob", wf.swap_prob},
                        {"min_total_frames", wf.min_total_frames},
                        {"max_total_frames", wf.max_total_frames}}}};
  } else {
    doc["dataset"] = {{"dir", cfg.dataset.dir.string()}};
  }
  if (!cfg.annotations_path.empty()) doc["annotations"] = cfg.annotations_path.string();
  doc["supervision"] = supervision_to_json(cfg.supervision);
  doc["hyperparams"] = {{"gamma", cfg.hp.gamma},
                        {"alpha", cfg.hp.alpha},
                        {"tau_s", cfg.hp.tau_s},
                        {"m_t", cfg.hp.m_t_temp},
                        {"diffusion_temperature", cfg.hp.diffusion_temp},
                        {"diffusion_step", cfg.hp.diffusion_step},
                        {"refresh_every", cfg.hp.refresh_every},
                        {"window_w", cfg.hp.window_w},
                        {"lr", cfg.hp.lr},
                        {"epochs", cfg.hp.epochs},
                        {"warmup_epochs", cfg.hp.warmup_epochs}};
  if (cfg.hp.tau_transition >= 0.0) {
    doc["hyperparams"]["tau_transition"] = cfg.hp.tau_transition;
  } else {
    doc["hyperparams"]["tau_transition"] = nullptr;
  }
  doc["model"] = {{"stages", cfg.stages}, {"layers", cfg.layers}, {"channels", cfg.channels}};
  doc["stage2"] = {{"enabled", cfg.stage2_enabled}, {"epochs", cfg.stage2_epochs}};
  doc["ablation"] = {{"conf", cfg.ablation.conf},
                     {"focal", cfg.ablation.focal},
                     {"reweighting", cfg.ablation.reweighting},
                     {"stc", cfg.ablation.stc},
                     {"diffusion", cfg.ablation.diffusion}};
  doc["evaluation"] = {{"relaxed", cfg.relaxed_eval},
                       {"window_seconds", cfg.relaxed_window_seconds}};
  doc["output_dir"] = cfg.output_dir.string();
  if (!cfg.matrix_rows.empty()) {
    json rows = json::array();
    for (const auto& r : cfg.matrix_rows) rows.push_back(supervision_to_json(r));
    doc["matrix"] = {{"rows", rows}};
  }
  return doc;
}

std::vector<SupervisionSpec> default_matrix_rows(int num_phases, std::uint64_t seed) {
  std::vector<SupervisionSpec> rows;
  SupervisionSpec ts;
  ts.kind = SupervisionKind::timestamp;
  ts.seed = seed;
  rows.push_back(ts);
  for (double p : {0.1, 0.2, 0.3}) {
    SupervisionSpec m = ts;
    m.kind = SupervisionKind::timestamp_missing;
    m.miss_rate = p;
    rows.push_back(m);
  }
  std::vector<int> ks;
  if (num_phases == 7) {
    ks = {7, 4, 2};
  } else if (num_phases == 12) {
    ks = {9, 5, 3};
  } else {
    ks = {num_phases, std::max(1, (num_phases + 1) / 2), std::max(1, num_phases / 4)};
  }
  for (int k : ks) {
    SupervisionSpec s = ts;
    s.kind = SupervisionKind::skiptag;
    s.k = k;
    rows.push_back(s);
  }
  return rows;
}

Dataset resolve_dataset(const ExperimentConfig& cfg) {
  if (!cfg.dataset.preset.empty()) return generate_dataset(cfg.dataset.workflow);
  if (!fs::exists(cfg.dataset.dir / "manifest.json")) {
    throw ConfigError("dataset directory " + cfg.dataset.dir.string() + " has no manifest.json");
  }
  return load_dataset(cfg.dataset.dir);
}

std::map<std::string, AnnotationSet> training_annotations(const ExperimentConfig& cfg,
                                                         const Dataset& ds) {
  std::map<std::string, AnnotationSet> out;
  const auto train = ds.select(Split::train);
  if (train.empty()) throw ConfigError("dataset has no training videos");
  if (!cfg.annotations_path.empty()) {
    if (!fs::exists(cfg.annotations_path)) {
      throw ConfigError("annotation file " + cfg.annotations_path.string() + " does not exist");
    }
    auto raw = io::read_annotations(cfg.annotations_path);
    for (const Video* v : train) {
      auto it = raw.find(v->id);
      if (it == raw.end()) throw ConfigError("annotation file has no entries for " + v->id);
      out.emplace(v->id, AnnotationSet(it->second, v->labels.length(), ds.num_phases));
    }
    return out;
  }
  for (const Video* v : train) out.emplace(v->id, simulate(v->labels, cfg.supervision, v->id));
  return out;
}

// ---------------------------------------------------------------------------
// Training

namespace {

struct StageTotals {
  double cls = 0.0, smooth = 0.0, entropy = 0.0, conf = 0.0, stc = 0.0, total = 0.0;
  void add(const StageTotals& o, double scale) {
    cls += scale * o.cls;
    smooth += scale * o.smooth;
    entropy += scale * o.entropy;
    conf += scale * o.conf;
    stc += scale * o.stc;
    total += scale * o.total;
  }
};

struct Stage1Targets {
  const AnnotationSet* current;
  const AnnotationSet* ground_truth;
  const Transcript* transcript;
};

void check_finite(const LossValue& lv, const char* component, int epoch, const std::string& id) {
  if (!lv.feasible) return;
  if (!std::isfinite(lv.value) || (lv.grad.size() > 0 && !lv.grad.allFinite())) {
    throw DivergenceError(component, epoch, id);
  }
}

ProbabilityMatrix normalize_checked(const Matrix& logits, bool blank, int epoch,
                                    const std::string& id) {
  if (!logits.allFinite()) throw DivergenceError("logits", epoch, id);
  return normalize_logits(logits, blank);
}

/// Stage-1 loss on one stage's logits, mirroring the weighted total.
LossValue stage1_stage_loss(const ExperimentConfig& cfg, const Matrix& logits,
                            const Stage1Targets& tg, const ClassWeights& weights,
                            StageTotals& totals, int epoch, const std::string& id) {
  const bool blank = cfg.uses_blank();
  const ProbabilityMatrix P = normalize_checked(logits, blank, epoch, id);
  const auto& a = cfg.hp.alpha;
  const double gamma = cfg.ablation.focal ? cfg.hp.gamma : 0.0;

  LossComponents comp;
  comp.cls = classification_loss(P, *tg.current, weights, gamma);
  check_finite(comp.cls, "classification", epoch, id);
  if (a[0] > 0.0) {
    comp.smooth = smoothness_loss(P, cfg.hp.tau_s);
    check_finite(comp.smooth, "smoothness", epoch, id);
  }
  if (a[1] > 0.0) {
    comp.entropy = entropy_loss(P, *tg.current);
    check_finite(comp.entropy, "entropy", epoch, id);
  }
  if (a[2] > 0.0 && cfg.ablation.conf) {
    comp.conf = confidence_loss(P, *tg.ground_truth);
    check_finite(comp.conf, "confidence", epoch, id);
  }
  std::array<double, 4> alpha = a;
  if (!cfg.ablation.conf) alpha[2] = 0.0;
  if (blank) {
    comp.stc = stc_loss(P, *tg.transcript);
    check_finite(comp.stc, "stc", epoch, id);
  } else {
    alpha[3] = 0.0;
  }
  LossValue total = total_loss(comp, alpha);
  check_finite(total, "total", epoch, id);
  totals.cls = comp.cls.value;
  totals.smooth = comp.smooth.value;
  totals.entropy = comp.entropy.value;
  totals.conf = comp.conf.value;
  totals.stc = comp.stc.feasible ? comp.stc.value : 0.0;
  totals.total = total.value;
  return total;
}

std::vector<std::string> shuffled_ids(std::vector<std::string> ids, std::uint64_t seed,
                                      const std::string& key) {
  Rng rng(derive_seed(seed, key));
  std::shuffle(ids.begin(), ids.end(), rng);
  return ids;
}

ClassWeights pooled_weights(const ExperimentConfig& cfg,
                            const std::map<std::string, AnnotationSet>& current, int num_phases) {
  if (!cfg.ablation.reweighting) return ClassWeights::uniform(num_phases);
  std::vector<AnnotationSet> sets;
  sets.reserve(current.size());
  for (const auto& [_, a] : current) sets.push_back(a);
  return class_weights(std::span<const AnnotationSet>(sets), num_phases);
}

std::map<std::string, const Video*> index_train(const Dataset& ds) {
  std::map<std::string, const Video*> out;
  for (const Video* v : ds.select(Split::train)) out.emplace(v->id, v);
  return out;
}

}  // namespace

TrainResult run_stage1(const ExperimentConfig& cfg, const Dataset& ds,
                       const std::map<std::string, AnnotationSet>& ground_truth) {
  const auto train = index_train(ds);
  if (train.empty()) throw ConfigError("dataset has no training videos");
  const int input_dim = train.begin()->second->features.dim();
  const bool blank = cfg.uses_blank();

  TrainResult result;
  result.params = TcnParams::initialize(cfg.arch(input_dim, ds.num_phases, blank),
                                        derive_seed(cfg.seed, "stage1-init"));

  std::vector<std::string> ids;
  std::map<std::string, Transcript> transcripts;
  for (const auto& [id, gt] : ground_truth) {
    if (!train.count(id)) {
      throw std::logic_error("run_stage1: annotations given for non-training video " + id);
    }
    if (!gt.has_ground_truth()) throw ConfigError("video " + id + " has no ground-truth annotation");
    ids.push_back(id);
    transcripts.emplace(id, transcript_from_annotations(gt));
  }
  result.annotations = ground_truth;

  for (int epoch = 0; epoch < cfg.hp.epochs; ++epoch) {
    const int since_warmup = epoch - cfg.hp.warmup_epochs;
    const bool refresh = cfg.hp.refresh_every > 0 ? since_warmup % cfg.hp.refresh_every == 0
                                                   : since_warmup == 0;
    if (cfg.ablation.diffusion && since_warmup >= 0 && refresh) {
      const int radius = cfg.hp.diffusion_step > 0
                             ? cfg.hp.diffusion_step * (since_warmup + 1)
                             : -1;
      for (const auto& id : ids) {
        result.annotations[id] = expand_annotations(cfg, result.params, train.at(id)->features,
                                                    ground_truth.at(id), radius);
      }
    }
    const ClassWeights weights = pooled_weights(cfg, ground_truth, ds.num_phases);

    EpochLog log;
    log.epoch = epoch;
    StageTotals epoch_totals;
    for (const auto& id : shuffled_ids(ids, cfg.seed, "stage1-epoch-" + std::to_string(epoch))) {
      const Video& v = *train.at(id);
      const Stage1Targets tg{&result.annotations.at(id), &ground_truth.at(id),
                             &transcripts.at(id)};
      GradTape tape;
      const auto logits = tcn_forward(result.params, v.features, &tape);
      std::vector<Matrix> grads;
      const double scale = 1.0 / static_cast<double>(logits.size());
      for (const auto& stage_logits : logits) {
        StageTotals st;
        LossValue lv = stage1_stage_loss(cfg, stage_logits, tg, weights, st, epoch, id);
        grads.push_back(lv.grad * scale);
        epoch_totals.add(st, scale);
      }
      train_step(result.params, grads, tape, cfg.hp.lr);
      result.trained_videos.insert(id);
    }
    const double n = static_cast<double>(ids.size());
    log.cls = epoch_totals.cls / n;
    log.smooth = epoch_totals.smooth / n;
    log.entropy = epoch_totals.entropy / n;
    log.conf = epoch_totals.conf / n;
    log.stc = epoch_totals.stc / n;
    log.total = epoch_totals.total / n;
    for (const auto& [_, a] : result.annotations) log.pseudo_labels += a.size() - a.ground_truth_count();
    result.log.push_back(log);
  }
  return result;
}

TrainResult run_stage1(const ExperimentConfig& cfg) {
  const Dataset ds = resolve_dataset(cfg);
  return run_stage1(cfg, ds, training_annotations(cfg, ds));
}

AnnotationSet expand_annotations(const ExperimentConfig& cfg, const TcnParams& params,
                                 const FeatureSequence& feats, const AnnotationSet& ground_truth,
                                 int max_radius) {
  const Matrix logits = tcn_forward(params, feats).back();
  const ProbabilityMatrix P = normalize_logits(logits, params.arch().blank_column);
  const UncertaintySeries u = scaled_entropy(logits, cfg.hp.diffusion_temp);
  return uatd_expand(P, ground_truth.ground_truth_only(), u,
                     cfg.hp.resolved_tau_transition(params.arch().num_phases), max_radius);
}

AnnotationSet stage2_targets(const ExperimentConfig& cfg, const TcnParams& base,
                             const FeatureSequence& feats, const AnnotationSet& ground_truth) {
  const Matrix logits = tcn_forward(base, feats).back();
  const ProbabilityMatrix P = normalize_logits(logits, base.arch().blank_column);
  const UncertaintySeries u = scaled_entropy(logits, cfg.hp.m_t_temp);
  const TransitionSet events =
      detect_transitions(u, cfg.hp.resolved_tau_transition(base.arch().num_phases));
  return overlay_ground_truth(stage2_labels(P, events, cfg.hp.window_w),
                              ground_truth.ground_truth_only());
}

TrainResult run_stage2(const ExperimentConfig& cfg, const Dataset& ds, const TcnParams& base,
                       const std::map<std::string, AnnotationSet>& ground_truth) {
  const auto train = index_train(ds);
  TrainResult result;
  std::vector<std::string> ids;
  for (const auto& [id, gt] : ground_truth) {
    if (!train.count(id)) {
      throw std::logic_error("run_stage2: annotations given for non-training video " + id);
    }
    try {
      result.annotations.emplace(id, stage2_targets(cfg, base, train.at(id)->features, gt));
      ids.push_back(id);
    } catch (const std::runtime_error&) {
      // every frame of this video sits inside a transition window
    }
  }
  if (ids.empty()) throw std::runtime_error("run_stage2: every training video is fully masked");

  const int input_dim = train.begin()->second->features.dim();
  result.params = TcnParams::initialize(cfg.arch(input_dim, ds.num_phases, false),
                                        derive_seed(cfg.seed, "stage2-init"));
  const ClassWeights weights = ClassWeights::uniform(ds.num_phases);
  const double gamma = cfg.ablation.focal ? cfg.hp.gamma : 0.0;
  const double a_smooth = cfg.hp.alpha[0];

  for (int epoch = 0; epoch < cfg.stage2_epochs; ++epoch) {
    EpochLog log;
    log.epoch = epoch;
    for (const auto& id : shuffled_ids(ids, cfg.seed, "stage2-epoch-" + std::to_string(epoch))) {
      const Video& v = *train.at(id);
      GradTape tape;
      const auto logits = tcn_forward(result.params, v.features, &tape);
      std::vector<Matrix> grads;
      const double scale = 1.0 / static_cast<double>(logits.size());
      for (const auto& stage_logits : logits) {
        const ProbabilityMatrix P = normalize_checked(stage_logits, false, epoch, id);
        LossComponents comp;
        comp.cls = classification_loss(P, result.annotations.at(id), weights, gamma);
        check_finite(comp.cls, "classification", epoch, id);
        if (a_smooth > 0.0) {
          comp.smooth = smoothness_loss(P, cfg.hp.tau_s);
          check_finite(comp.smooth, "smoothness", epoch, id);
        }
        const LossValue total = total_loss(comp, {a_smooth, 0.0, 0.0, 0.0});
        grads.push_back(total.grad * scale);
        log.cls += scale * comp.cls.value;
        log.smooth += scale * comp.smooth.value;
        log.total += scale * total.value;
      }
      train_step(result.params, grads, tape, cfg.hp.lr);
      result.trained_videos.insert(id);
    }
    const double n = static_cast<double>(ids.size());
    log.cls /= n;
    log.smooth /= n;
    log.total /= n;
    for (const auto& [_, a] : result.annotations) log.pseudo_labels += a.size() - a.ground_truth_count();
    result.log.push_back(log);
  }
  return result;
}

// ---------------------------------------------------------------------------
// Evaluation

PhaseLabelSequence predict(const TcnParams& params, const FeatureSequence& feats) {
  const Matrix logits = tcn_forward(params, feats).back();
  return predict_labels(normalize_logits(logits, params.arch().blank_column));
}

EvalResult evaluate(const ExperimentConfig& cfg, const Dataset& ds, const TcnParams& params,
                    Split split) {
  EvalResult out;
  std::vector<VideoMetrics> all;
  for (const Video* v : ds.select(split)) {
    const PhaseLabelSequence pred = predict(params, v->features);
    VideoMetrics vm = cfg.relaxed_eval ? evaluate_video_relaxed(pred, v->labels, v->features.fps(),
                                                                cfg.relaxed_window_seconds)
                                       : evaluate_video(pred, v->labels);
    out.per_video.emplace(v->id, vm);
    all.push_back(vm);
  }
  if (all.empty()) {
    throw ConfigError(std::string("dataset has no ") + to_string(split) + " videos to evaluate");
  }
  out.report = aggregate(all);
  return out;
}

void audit_no_test_training(const Dataset& ds, const std::set<std::string>& trained) {
  for (const Video* v : ds.select(Split::test)) {
    if (trained.count(v->id)) {
      throw std::logic_error("test-split video " + v->id + " was used for training");
    }
  }
}

// ---------------------------------------------------------------------------
// Experiment matrix

namespace {

json report_to_json(const AggregateReport& r) {
  auto ms = [](const MeanStd& m) { return json{{"mean", m.mean}, {"std", m.std}}; };
  return {{"videos", r.videos},
          {"RE", ms(r.recall)},
          {"PR", ms(r.precision)},
          {"JA", ms(r.jaccard)},
          {"AC", ms(r.accuracy)},
          {"F1", ms(r.f1)}};
}

AggregateReport report_from_json(const json& j) {
  auto ms = [](const json& m) { return MeanStd{m.at("mean").get<double>(), m.at("std").get<double>()}; };
  AggregateReport r;
  r.videos = j.at("videos").get<std::size_t>();
  r.recall = ms(j.at("RE"));
  r.precision = ms(j.at("PR"));
  r.jaccard = ms(j.at("JA"));
  r.accuracy = ms(j.at("AC"));
  r.f1 = ms(j.at("F1"));
  return r;
}

std::string slug(const std::string& s) {
  std::string out;
  for (char c : s) {
    out += (std::isalnum(static_cast<unsigned char>(c)) || c == '.') ? c : '_';
  }
  return out;
}

json cell_to_json(const MatrixCell& c, const json& row_config) {
  json j{{"setup", c.setup}, {"method", c.method}, {"config", row_config}};
  if (c.report) j["report"] = report_to_json(*c.report);
  if (!c.error.empty()) j["error"] = c.error;
  return j;
}

std::optional<MatrixCell> load_cell(const fs::path& path, const json& row_config) {
  if (!fs::exists(path)) return std::nullopt;
  try {
    const json j = json::parse(io::read_file(path));
    if (j.at("config") != row_config) return std::nullopt;
    MatrixCell c;
    c.setup = j.at("setup").get<std::string>();
    c.method = j.at("method").get<std::string>();
    if (j.contains("report")) c.report = report_from_json(j.at("report"));
    c.error = j.value("error", std::string());
    return c;
  } catch (const std::exception&) {
    return std::nullopt;
  }
}

}  // namespace

MatrixReport run_matrix(const ExperimentConfig& cfg, bool reuse_cells) {
  cfg.validate();
  const Dataset ds = resolve_dataset(cfg);
  const auto rows =
      cfg.matrix_rows.empty() ? default_matrix_rows(ds.num_phases, cfg.seed) : cfg.matrix_rows;
  const fs::path cell_dir = cfg.output_dir / "cells";

  MatrixReport report;
  report.manifest = {{"library_version", "0.1.0"},
                     {"checkpoint_format", 1},
                     {"feature_format", io::kFeatureFormatVersion},
                     {"config", config_to_json(cfg)},
                     {"dataset", {{"name", ds.name}, {"num_phases", ds.num_phases}}},
                     {"cells", json::array()}};
  if (!cfg.dataset.preset.empty()) report.manifest["dataset"]["seed"] = cfg.dataset.workflow.seed;

  for (const auto& row : rows) {
    ExperimentConfig cell_cfg = cfg;
    cell_cfg.supervision = row;
    cell_cfg.matrix_rows.clear();
    const json row_config = config_to_json(cell_cfg);
    const std::string setup = row.label();
    const fs::path base_path = cell_dir / (slug(setup) + "__base.json");
    const fs::path s2_path = cell_dir / (slug(setup) + "__stage-2.json");

    std::optional<MatrixCell> base_cell, s2_cell;
    if (reuse_cells) {
      base_cell = load_cell(base_path, row_config);
      s2_cell = load_cell(s2_path, row_config);
    }
    const bool need_s2 = cfg.stage2_enabled && !s2_cell;
    if (!base_cell || need_s2) {
      MatrixCell fresh_base{setup, "base", std::nullopt, ""};
      MatrixCell fresh_s2{setup, "stage-2", std::nullopt, ""};
      try {
        const auto gt = training_annotations(cell_cfg, ds);
        TrainResult s1 = run_stage1(cell_cfg, ds, gt);
        audit_no_test_training(ds, s1.trained_videos);
        fresh_base.report = evaluate(cell_cfg, ds, s1.params).report;
        if (cfg.stage2_enabled) {
          try {
            TrainResult s2 = run_stage2(cell_cfg, ds, s1.params, gt);
            audit_no_test_training(ds, s2.trained_videos);
            fresh_s2.report = evaluate(cell_cfg, ds, s2.params).report;
          } catch (const std::exception& e) {
            fresh_s2.error = e.what();
          }
        }
      } catch (const std::logic_error&) {
        throw;
      } catch (const std::exception& e) {
        fresh_base.error = e.what();
        fresh_s2.error = std::string("base model failed: ") + e.what();
      }
      base_cell = fresh_base;
      fs::create_directories(cell_dir);
      io::write_file_atomic(base_path, cell_to_json(fresh_base, row_config).dump(2) + "\n");
      if (cfg.stage2_enabled) {
        s2_cell = fresh_s2;
        io::write_file_atomic(s2_path, cell_to_json(fresh_s2, row_config).dump(2) + "\n");
      }
    }
    report.cells.push_back(*base_cell);
    if (cfg.stage2_enabled) report.cells.push_back(*s2_cell);
    report.manifest["cells"].push_back(
        {{"setup", setup}, {"supervision", supervision_to_json(row)}});
  }
  return report;
}

std::string matrix_csv(const MatrixReport& report) {
  std::ostringstream out;
  out << "setup,method,RE,PR,JA,AC,F1\n";
  for (const auto& c : report.cells) {
    out << c.setup << ',' << c.method;
    if (c.report) {
      for (const MeanStd* m : {&c.report->recall, &c.report->precision, &c.report->jaccard,
                               &c.report->accuracy, &c.report->f1}) {
        out << ',' << format_mean_std(*m);
      }
    } else {
      for (int i = 0; i < 5; ++i) out << ",failed";
    }
    out << '\n';
  }
  return out.str();
}

void write_matrix_outputs(const MatrixReport& report, const fs::path& dir) {
  fs::create_directories(dir);
  io::write_file_atomic(dir / "report.csv", matrix_csv(report));
  json cells = json::array();
  for (const auto& c : report.cells) {
    json j{{"setup", c.setup}, {"method", c.method}};
    if (c.report) j["report"] = report_to_json(*c.report);
    if (!c.error.empty()) j["error"] = c.error;
    cells.push_back(j);
  }
  io::write_file_atomic(dir / "report.json", cells.dump(2) + "\n");
  io::write_file_atomic(dir / "manifest.json", report.manifest.dump(2) + "\n");
}

std::string train_log_csv(const std::vector<EpochLog>& log) {
  std::ostringstream out;
  out << "epoch,cls,smooth,entropy,conf,stc,total,pseudo_labels\n";
  char buf[256];
  for (const auto& e : log) {
    std::snprintf(buf, sizeof buf, "%d,%.9g,%.9g,%.9g,%.9g,%.9g,%.9g,%zu\n", e.epoch, e.cls,
                  e.smooth, e.entropy, e.conf, e.stc, e.total, e.pseudo_labels);
    out << buf;
  }
  return out.str();
}

json eval_to_json(const EvalResult& result) {
  json per_video = json::object();
  for (const auto& [id, vm] : result.per_video) {
    per_video[id] = {{"AC", vm.accuracy},
                     {"RE", vm.averaged.recall},
                     {"PR", vm.averaged.precision},
                     {"JA", vm.averaged.jaccard},
                     {"F1", vm.averaged.f1}};
  }
  return {{"aggregate", report_to_json(result.report)}, {"per_video", per_video}};
}

}  // namespace sparsephase

#include "sparsephase/harness.hpp"
#include "sparsephase/losses.hpp"
#include "sparsephase/metrics.hpp"
#include "sparsephase/pseudolabel.hpp"
#include "sparsephase/stc.hpp"
#include "sparsephase/supervise.hpp"

#include <pybind11/eigen.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

namespace py = pybind11;
using namespace sparsephase;

namespace {

py::dict loss_dict(const LossValue& lv) {
  py::dict d;
  d["value"] = lv.value;
  d["grad"] = lv.grad;
  d["feasible"] = lv.feasible;
  return d;
}

AnnotationSet make_annotations(const std::vector<std::pair<int, int>>& frames_labels, int T, int C) {
  std::vector<Annotation> entries;
  for (const auto& [t, y] : frames_labels) entries.push_back({t, y, Provenance::ground_truth});
  return AnnotationSet(std::move(entries), T, C);
}

std::vector<std::pair<int, int>> annotation_pairs(const AnnotationSet& a) {
  std::vector<std::pair<int, int>> out;
  for (const auto& e : a.entries()) out.emplace_back(e.frame, e.label);
  return out;
}

py::dict metrics_dict(const VideoMetrics& vm) {
  py::dict d;
  d["AC"] = vm.accuracy;
  d["RE"] = vm.averaged.recall;
  d["PR"] = vm.averaged.precision;
  d["JA"] = vm.averaged.jaccard;
  d["F1"] = vm.averaged.f1;
  return d;
}

py::dict report_dict(const AggregateReport& r) {
  py::dict d;
  d["RE"] = py::make_tuple(r.recall.mean, r.recall.std);
  d["PR"] = py::make_tuple(r.precision.mean, r.precision.std);
  d["JA"] = py::make_tuple(r.jaccard.mean, r.jaccard.std);
  d["AC"] = py::make_tuple(r.accuracy.mean, r.accuracy.std);
  d["F1"] = py::make_tuple(r.f1.mean, r.f1.std);
  d["videos"] = r.videos;
  return d;
}

}  // namespace

PYBIND11_MODULE(_sparsephase, m) {
  m.doc() = "Sparse-annotation surgical phase recognition core";

  py::register_exception<ConfigError>(m, "ConfigError", PyExc_ValueError);
  py::register_exception<DivergenceError>(m, "DivergenceError", PyExc_RuntimeError);

  m.def("normalize_logits", [](const Matrix& logits) {
    const ProbabilityMatrix P = normalize_logits(logits);
    return P.probs();
  });
  m.def("focal", &focal, py::arg("q"), py::arg("gamma"));

  m.def("collapse", [](const std::vector<int>& path) { return collapse(path); },
        "Remove BLANK (-1) tokens and merge repeats.");
  m.def("star_augment", [](const std::vector<int>& tokens) {
    return star_augment(Transcript{tokens, TranscriptSource::from_annotations}).tokens;
  });
  m.def("ctc_loss", [](const Matrix& logits, const std::vector<int>& transcript) {
    return loss_dict(ctc_loss(normalize_logits(logits, true), Transcript{transcript}));
  }, "Last logit column is BLANK.");
  m.def("stc_loss", [](const Matrix& logits, const std::vector<int>& transcript) {
    return loss_dict(stc_loss(normalize_logits(logits, true), Transcript{transcript}));
  }, "Last logit column is BLANK.");
  m.def("brute_force_path_sum", [](const Matrix& logits, const std::vector<int>& transcript, bool star) {
    return brute_force_path_sum(normalize_logits(logits, true), Transcript{transcript}, star);
  });

  m.def("smoothness_loss", [](const Matrix& logits, double tau_s) {
    return loss_dict(smoothness_loss(normalize_logits(logits), tau_s));
  });
  m.def("classification_loss", [](const Matrix& logits, const std::vector<std::pair<int, int>>& ann,
                                  double gamma, bool reweight) {
    const ProbabilityMatrix P = normalize_logits(logits);
    const AnnotationSet a = make_annotations(ann, P.frames(), P.num_phases());
    const ClassWeights w = reweight ? class_weights(a, P.num_phases()) : ClassWeights::uniform(P.num_phases());
    return loss_dict(classification_loss(P, a, w, gamma));
  }, py::arg("logits"), py::arg("annotations"), py::arg("gamma") = 2.0, py::arg("reweight") = true);

  m.def("scaled_entropy", [](const Matrix& logits, double m_t) {
    return scaled_entropy(logits, m_t).values;
  });
  m.def("detect_transitions", [](const std::vector<double>& u, double tau) {
    return detect_transitions(UncertaintySeries{u, 1.0}, tau).events;
  });

  m.def("timestamp_sample", [](const std::vector<int>& labels, int num_phases, std::uint64_t seed) {
    Rng rng(seed);
    return annotation_pairs(timestamp_sample(PhaseLabelSequence(labels, num_phases), rng));
  });
  m.def("skiptag_sample", [](const std::vector<int>& labels, int num_phases, int k, std::uint64_t seed) {
    Rng rng(seed);
    return annotation_pairs(skiptag_sample(PhaseLabelSequence(labels, num_phases), k, rng));
  });

  m.def("evaluate_video", [](const std::vector<int>& pred, const std::vector<int>& gt, int num_phases) {
    return metrics_dict(evaluate_video(PhaseLabelSequence(pred, num_phases), PhaseLabelSequence(gt, num_phases)));
  });
  m.def("evaluate_video_relaxed", [](const std::vector<int>& pred, const std::vector<int>& gt,
                                     int num_phases, double fps, double window_seconds) {
    return metrics_dict(evaluate_video_relaxed(PhaseLabelSequence(pred, num_phases),
                                               PhaseLabelSequence(gt, num_phases), fps, window_seconds));
  }, py::arg("pred"), py::arg("gt"), py::arg("num_phases"), py::arg("fps") = 1.0,
     py::arg("window_seconds") = 10.0);

  m.def("generate_dataset", [](const std::string& preset, std::uint64_t seed, int num_train, int num_test) {
    WorkflowConfig cfg = WorkflowConfig::preset(preset);
    cfg.seed = seed;
    cfg.num_train = num_train;
    cfg.num_val = 0;
    cfg.num_test = num_test;
    py::list out;
    for (const auto& v : generate_dataset(cfg).videos) {
      py::dict d;
      d["id"] = v.id;
      d["split"] = to_string(v.split);
      d["features"] = v.features.frames();
      d["labels"] = v.labels.labels();
      out.append(d);
    }
    return out;
  }, py::arg("preset"), py::arg("seed"), py::arg("num_train") = 40, py::arg("num_test") = 40);

  m.def("run_experiment", [](const std::string& config_json) {
    const ExperimentConfig cfg = parse_config(nlohmann::json::parse(config_json));
    py::gil_scoped_release release;
    const Dataset ds = resolve_dataset(cfg);
    const auto gt = training_annotations(cfg, ds);
    const TrainResult base = run_stage1(cfg, ds, gt);
    const AggregateReport base_report = evaluate(cfg, ds, base.params).report;
    std::optional<AggregateReport> s2_report;
    if (cfg.stage2_enabled) s2_report = evaluate(cfg, ds, run_stage2(cfg, ds, base.params, gt).params).report;
    py::gil_scoped_acquire acquire;
    py::dict d;
    d["base"] = report_dict(base_report);
    if (s2_report) d["stage2"] = report_dict(*s2_report);
    return d;
  }, "Stage-1 training, optional stage 2, and test-split evaluation from a JSON config string.");
}

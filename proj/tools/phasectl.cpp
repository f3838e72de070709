// phasectl: command line front end for the sparse-supervision phase recognition pipeline.

#include "sparsephase/harness.hpp"
#include "sparsephase/io.hpp"
#include "sparsephase/pseudolabel.hpp"

#include <CLI11.hpp>
#include <json.hpp>

#include <cstdio>
#include <iostream>
#include <optional>

namespace fs = std::filesystem;
using nlohmann::json;
using namespace sparsephase;

namespace {

struct CommonOptions {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::string out;
  std::string checkpoint;
  std::string input;
  bool resume = false;
};

ExperimentConfig load(const CommonOptions& opt) {
  json doc;
  try {
    doc = json::parse(io::read_file(opt.config));
  } catch (const json::parse_error& e) {
    throw ConfigError(opt.config + ": " + e.what());
  } catch (const std::runtime_error& e) {
    throw ConfigError(e.what());
  }
  if (opt.seed) doc["seed"] = *opt.seed;
  if (!opt.out.empty()) doc["output_dir"] = opt.out;
  return parse_config(doc);
}

void save_resolved_config(const ExperimentConfig& cfg) {
  fs::create_directories(cfg.output_dir);
  io::write_file_atomic(cfg.output_dir / "config.json", config_to_json(cfg).dump(2) + "\n");
}

TcnParams require_checkpoint(const CommonOptions& opt, const fs::path& fallback) {
  const fs::path path = opt.checkpoint.empty() ? fallback : fs::path(opt.checkpoint);
  if (!fs::exists(path)) throw ConfigError("checkpoint " + path.string() + " does not exist");
  return load_checkpoint(path);
}

const Video& find_video(const Dataset& ds, const std::string& id) {
  for (const auto& v : ds.videos) {
    if (v.id == id) return v;
  }
  throw ConfigError("no video " + id + " in dataset");
}

void print_report_line(const std::string& label, const AggregateReport& r) {
  std::printf("%-16s RE %s  PR %s  JA %s  AC %s  F1 %s\n", label.c_str(),
              format_mean_std(r.recall).c_str(), format_mean_std(r.precision).c_str(),
              format_mean_std(r.jaccard).c_str(), format_mean_std(r.accuracy).c_str(),
              format_mean_std(r.f1).c_str());
}

int cmd_synth(const CommonOptions& opt) {
  const ExperimentConfig cfg = load(opt);
  if (cfg.dataset.preset.empty()) throw ConfigError("synth needs a dataset preset");
  const Dataset ds = generate_dataset(cfg.dataset.workflow);
  save_dataset(cfg.output_dir / "dataset", ds);
  std::printf("wrote %zu videos (%d phases) to %s\n", ds.videos.size(), ds.num_phases,
              (cfg.output_dir / "dataset").c_str());
  return 0;
}

int cmd_annotate(const CommonOptions& opt) {
  const ExperimentConfig cfg = load(opt);
  const Dataset ds = resolve_dataset(cfg);
  const auto ann = training_annotations(cfg, ds);
  fs::create_directories(cfg.output_dir);
  io::write_annotations(cfg.output_dir / "annotations.csv", ann);
  std::size_t n = 0;
  for (const auto& [_, a] : ann) n += a.size();
  std::printf("%s: %zu annotated frames over %zu videos\n", cfg.supervision.label().c_str(), n,
              ann.size());
  return 0;
}

int cmd_train(const CommonOptions& opt) {
  const ExperimentConfig cfg = load(opt);
  const Dataset ds = resolve_dataset(cfg);
  const auto gt = training_annotations(cfg, ds);
  const TrainResult r = run_stage1(cfg, ds, gt);
  save_resolved_config(cfg);
  save_checkpoint(cfg.output_dir / "stage1.ckpt", r.params);
  io::write_file_atomic(cfg.output_dir / "train_log.csv", train_log_csv(r.log));
  io::write_pseudo_labels(cfg.output_dir / "pseudo_labels.csv", r.annotations);
  if (!r.log.empty()) {
    std::printf("stage 1 done: %zu epochs, final loss %.6f\n", r.log.size(), r.log.back().total);
  }
  return 0;
}

int cmd_expand(const CommonOptions& opt) {
  const ExperimentConfig cfg = load(opt);
  const Dataset ds = resolve_dataset(cfg);
  const TcnParams params = require_checkpoint(opt, cfg.output_dir / "stage1.ckpt");
  std::map<std::string, AnnotationSet> out;
  std::size_t pseudo = 0;
  for (const auto& [id, gt] : training_annotations(cfg, ds)) {
    AnnotationSet a = expand_annotations(cfg, params, find_video(ds, id).features, gt);
    pseudo += a.size() - a.ground_truth_count();
    out.emplace(id, std::move(a));
  }
  fs::create_directories(cfg.output_dir);
  io::write_pseudo_labels(cfg.output_dir / "pseudo_labels.csv", out);
  std::printf("expanded to %zu pseudo-labels\n", pseudo);
  return 0;
}

int cmd_retrain(const CommonOptions& opt) {
  const ExperimentConfig cfg = load(opt);
  const Dataset ds = resolve_dataset(cfg);
  const TcnParams base = require_checkpoint(opt, cfg.output_dir / "stage1.ckpt");
  const TrainResult r = run_stage2(cfg, ds, base, training_annotations(cfg, ds));
  save_resolved_config(cfg);
  save_checkpoint(cfg.output_dir / "stage2.ckpt", r.params);
  io::write_file_atomic(cfg.output_dir / "stage2_log.csv", train_log_csv(r.log));
  io::write_pseudo_labels(cfg.output_dir / "stage2_labels.csv", r.annotations);
  std::printf("stage 2 done: %zu epochs\n", r.log.size());
  return 0;
}

int cmd_eval(const CommonOptions& opt) {
  const ExperimentConfig cfg = load(opt);
  const Dataset ds = resolve_dataset(cfg);
  const TcnParams params = require_checkpoint(opt, cfg.output_dir / "stage1.ckpt");
  const EvalResult r = evaluate(cfg, ds, params);
  fs::create_directories(cfg.output_dir);
  io::write_file_atomic(cfg.output_dir / "eval.json", eval_to_json(r).dump(2) + "\n");
  print_report_line(cfg.relaxed_eval ? "relaxed" : "strict", r.report);
  return 0;
}

int cmd_matrix(const CommonOptions& opt) {
  const ExperimentConfig cfg = load(opt);
  const MatrixReport report = run_matrix(cfg, opt.resume);
  write_matrix_outputs(report, cfg.output_dir);
  std::fputs(matrix_csv(report).c_str(), stdout);
  for (const auto& c : report.cells) {
    if (!c.error.empty()) std::fprintf(stderr, "cell %s/%s failed: %s\n", c.setup.c_str(), c.method.c_str(), c.error.c_str());
  }
  return 0;
}

int cmd_report(const CommonOptions& opt) {
  const fs::path dir = opt.input.empty() ? fs::path(opt.out) : fs::path(opt.input);
  if (fs::exists(dir / "report.json")) {
    const json cells = json::parse(io::read_file(dir / "report.json"));
    std::printf("%-14s %-8s %-10s %-10s %-10s %-10s %-10s\n", "setup", "method", "RE", "PR", "JA",
                "AC", "F1");
    for (const auto& c : cells) {
      std::printf("%-14s %-8s", c.at("setup").get<std::string>().c_str(),
                  c.at("method").get<std::string>().c_str());
      if (!c.contains("report")) {
        std::printf(" failed: %s\n", c.value("error", std::string("unknown")).c_str());
        continue;
      }
      for (const char* key : {"RE", "PR", "JA", "AC", "F1"}) {
        const json& m = c.at("report").at(key);
        std::printf(" %-10s",
                    format_mean_std({m.at("mean").get<double>(), m.at("std").get<double>()}).c_str());
      }
      std::printf("\n");
    }
    return 0;
  }
  if (fs::exists(dir / "eval.json")) {
    const json e = json::parse(io::read_file(dir / "eval.json"));
    const json& a = e.at("aggregate");
    AggregateReport r;
    auto ms = [&](const char* k) {
      return MeanStd{a.at(k).at("mean").get<double>(), a.at(k).at("std").get<double>()};
    };
    r.recall = ms("RE");
    r.precision = ms("PR");
    r.jaccard = ms("JA");
    r.accuracy = ms("AC");
    r.f1 = ms("F1");
    print_report_line(dir.filename().string(), r);
    return 0;
  }
  throw ConfigError("no report.json or eval.json in " + dir.string());
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Phase recognition from sparse annotations"};
  app.require_subcommand(1);
  CommonOptions opt;

  auto add_common = [&](CLI::App* sub, bool needs_config = true) {
    auto* c = sub->add_option("--config", opt.config, "experiment config (JSON)");
    if (needs_config) c->required()->check(CLI::ExistingFile);
    sub->add_option("--seed", opt.seed, "override the config seed");
    sub->add_option("--out", opt.out, "override the output directory");
    return sub;
  };

  struct Command {
    const char* name;
    const char* help;
    int (*run)(const CommonOptions&);
  };
  const Command commands[] = {
      {"synth", "generate a synthetic dataset", cmd_synth},
      {"annotate", "simulate sparse annotations for the training split", cmd_annotate},
      {"train", "stage-1 training with pseudo-label refresh", cmd_train},
      {"expand", "dump pseudo-labels grown from a stage-1 checkpoint", cmd_expand},
      {"retrain", "stage-2 training on fixed pseudo-labels", cmd_retrain},
      {"eval", "evaluate a checkpoint on the test split", cmd_eval},
      {"matrix", "run the supervision x method experiment matrix", cmd_matrix},
      {"report", "print a matrix or evaluation report", cmd_report},
  };
  const Command* chosen = nullptr;
  for (const auto& cmd : commands) {
    const bool is_report = std::string(cmd.name) == "report";
    CLI::App* sub = add_common(app.add_subcommand(cmd.name, cmd.help), !is_report);
    const std::string name = cmd.name;
    if (name == "expand" || name == "retrain" || name == "eval") {
      sub->add_option("--checkpoint", opt.checkpoint, "checkpoint to load");
    }
    if (name == "matrix") sub->add_flag("--resume", opt.resume, "reuse finished cells");
    if (is_report) sub->add_option("--input", opt.input, "matrix or evaluation output directory");
    sub->callback([&chosen, &cmd] { chosen = &cmd; });
  }

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  try {
    return chosen->run(opt);
  } catch (const ConfigError& e) {
    std::fprintf(stderr, "config error: %s\n", e.what());
    return 2;
  } catch (const DivergenceError& e) {
    std::fprintf(stderr, "%s\n", e.what());
    return 3;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
}

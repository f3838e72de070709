#include "sparsephase/harness.hpp"
#include "sparsephase/io.hpp"

#include <doctest.h>

#include <filesystem>

using namespace sparsephase;
using nlohmann::json;
namespace fs = std::filesystem;

namespace {

json tiny_doc() {
  return json::parse(R"({
    "seed": 3,
    "dataset": {"preset": "cholec-like",
                "overrides": {"num_train": 3, "num_test": 2, "noise_std": 0.5}},
    "supervision": {"kind": "timestamp"},
    "hyperparams": {"epochs": 4, "warmup_epochs": 2, "lr": 0.005},
    "model": {"stages": 2, "layers": 3, "channels": 8},
    "stage2": {"epochs": 2}
  })");
}

fs::path scratch_dir(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("sparsephase_test_" + name);
  fs::remove_all(p);
  return p;
}

}  // namespace

TEST_SUITE("harness") {
  TEST_CASE("config errors") {
    auto doc = tiny_doc();
    doc.erase("seed");
    CHECK_THROWS_AS(parse_config(doc), ConfigError);

    doc = tiny_doc();
    doc["hyperparams"]["learning_rate"] = 0.1;
    CHECK_THROWS_AS(parse_config(doc), ConfigError);

    doc = tiny_doc();
    doc["dataset"]["preset"] = "imaginary";
    CHECK_THROWS_AS(parse_config(doc), ConfigError);

    doc = tiny_doc();
    doc["dataset"]["dir"] = "/tmp";
    CHECK_THROWS_AS(parse_config(doc), ConfigError);

    doc = tiny_doc();
    doc["supervision"] = {{"kind", "timestamp_missing"}, {"miss_rate", 2.0}};
    CHECK_THROWS_AS(parse_config(doc), ConfigError);

    doc = tiny_doc();
    doc["hyperparams"]["lr"] = "fast";
    CHECK_THROWS_AS(parse_config(doc), ConfigError);

    CHECK_THROWS_AS(load_config("/nonexistent/config.json"), ConfigError);
  }

  TEST_CASE("config round trip") {
    const auto cfg = parse_config(tiny_doc());
    CHECK(cfg.seed == 3);
    CHECK(cfg.dataset.workflow.num_train == 3);
    CHECK(cfg.stage2_epochs == 2);
    CHECK(cfg.uses_blank());
    const json once = config_to_json(cfg);
    CHECK(config_to_json(parse_config(once)) == once);
  }

  TEST_CASE("default matrix rows") {
    auto labels = [](int C) {
      std::vector<std::string> out;
      for (const auto& r : default_matrix_rows(C, 1)) out.push_back(r.label());
      return out;
    };
    CHECK(labels(7) == std::vector<std::string>{"timestamp", "missing 0.1", "missing 0.2", "missing 0.3",
                                                "SkipTag@7", "SkipTag@4", "SkipTag@2"});
    CHECK(labels(12).back() == "SkipTag@3");
    CHECK(labels(12)[4] == "SkipTag@9");
  }

  TEST_CASE("training is deterministic and never touches test videos") {
    const auto cfg = parse_config(tiny_doc());
    const Dataset ds = resolve_dataset(cfg);
    const auto gt = training_annotations(cfg, ds);
    const auto a = run_stage1(cfg, ds, gt);
    const auto b = run_stage1(cfg, ds, gt);
    CHECK(serialize_checkpoint(a.params) == serialize_checkpoint(b.params));
    CHECK(train_log_csv(a.log) == train_log_csv(b.log));
    CHECK(a.log.size() == 4);
    CHECK(a.log[1].pseudo_labels == 0);
    for (const auto& [id, ann] : a.annotations) CHECK(ann.ground_truth_only() == gt.at(id));
    CHECK_NOTHROW(audit_no_test_training(ds, a.trained_videos));

    std::set<std::string> leaked = a.trained_videos;
    leaked.insert(ds.select(Split::test).front()->id);
    CHECK_THROWS_AS(audit_no_test_training(ds, leaked), std::logic_error);

    auto bad = gt;
    const Video* test = ds.select(Split::test).front();
    bad.emplace(test->id, simulate(test->labels, cfg.supervision, test->id));
    CHECK_THROWS_AS(run_stage1(cfg, ds, bad), std::logic_error);
  }

  TEST_CASE("refresh schedule") {
    auto doc = tiny_doc();
    doc["hyperparams"]["epochs"] = 6;
    doc["hyperparams"]["warmup_epochs"] = 1;
    doc["hyperparams"]["tau_transition"] = 10.0;
    const auto once = run_stage1(parse_config(doc));
    CHECK(once.log[0].pseudo_labels == 0);
    CHECK(once.log[1].pseudo_labels > 0);
    for (std::size_t e = 2; e < once.log.size(); ++e) {
      CHECK(once.log[e].pseudo_labels == once.log[1].pseudo_labels);
    }

    doc["hyperparams"]["refresh_every"] = 1;
    doc["hyperparams"]["diffusion_step"] = 1;
    const auto cfg = parse_config(doc);
    const auto grown = run_stage1(cfg);
    std::size_t anchors = 0;
    for (const auto& [_, a] : grown.annotations) anchors += a.ground_truth_count();
    for (std::size_t e = 1; e < grown.log.size(); ++e) {
      CHECK(grown.log[e].pseudo_labels <= 2 * e * anchors);
    }
    CHECK(grown.log.back().pseudo_labels > grown.log[1].pseudo_labels);

    doc["hyperparams"]["refresh_every"] = -1;
    CHECK_THROWS_AS(parse_config(doc), ConfigError);
  }

  TEST_CASE("zero loss weights leave only classification active") {
    auto doc = tiny_doc();
    doc["hyperparams"]["alpha"] = {0.0, 0.0, 0.0, 0.0};
    const auto cfg = parse_config(doc);
    CHECK(!cfg.uses_blank());
    for (const auto& e : run_stage1(cfg).log) {
      CHECK(e.cls > 0.0);
      CHECK(e.smooth == 0.0);
      CHECK(e.entropy == 0.0);
      CHECK(e.conf == 0.0);
      CHECK(e.stc == 0.0);
      CHECK(e.total == e.cls);
    }
  }

  TEST_CASE("full supervision on noiseless data keeps lowering the loss") {
    auto doc = tiny_doc();
    doc["dataset"]["overrides"]["noise_std"] = 0.0;
    doc["dataset"]["overrides"]["drift_std"] = 0.0;
    doc["supervision"] = {{"kind", "full"}};
    doc["hyperparams"]["epochs"] = 12;
    doc["hyperparams"]["warmup_epochs"] = 12;
    const auto log = run_stage1(parse_config(doc)).log;
    std::vector<double> smooth;
    for (std::size_t i = 1; i + 1 < log.size(); ++i) {
      smooth.push_back((log[i - 1].total + log[i].total + log[i + 1].total) / 3.0);
    }
    for (std::size_t i = 3; i < smooth.size(); ++i) CHECK(smooth[i] < smooth[i - 1]);
  }

  TEST_CASE("divergence names the offending component") {
    auto doc = tiny_doc();
    doc["hyperparams"]["lr"] = 1e300;
    try {
      run_stage1(parse_config(doc));
      FAIL("expected divergence");
    } catch (const DivergenceError& e) {
      CHECK(!e.component().empty());
      CHECK(std::string(e.what()).find(e.component()) != std::string::npos);
    }
  }

  TEST_CASE("stage 2 and evaluation") {
    const auto cfg = parse_config(tiny_doc());
    const Dataset ds = resolve_dataset(cfg);
    const auto gt = training_annotations(cfg, ds);
    const auto base = run_stage1(cfg, ds, gt);
    const auto s2 = run_stage2(cfg, ds, base.params, gt);
    CHECK(!s2.params.arch().blank_column);
    CHECK(s2.log.size() == 2);
    for (const auto& [id, a] : s2.annotations) {
      for (const auto& g : gt.at(id).entries()) CHECK(a.label_at(g.frame) == g.label);
    }
    const auto r = evaluate(cfg, ds, s2.params);
    CHECK(r.per_video.size() == 2);
    CHECK(r.report.videos == 2);
    auto relaxed = cfg;
    relaxed.relaxed_eval = true;
    CHECK(evaluate(relaxed, ds, s2.params).report.accuracy.mean >= r.report.accuracy.mean);
  }

  TEST_CASE("matrix rows, columns and resume") {
    auto doc = tiny_doc();
    doc["hyperparams"]["epochs"] = 1;
    doc["stage2"]["epochs"] = 1;
    doc["output_dir"] = scratch_dir("matrix").string();
    doc["matrix"]["rows"] = json::array({{{"kind", "timestamp_missing"}, {"miss_rate", 0.1}},
                                         {{"kind", "timestamp_missing"}, {"miss_rate", 0.2}},
                                         {{"kind", "timestamp_missing"}, {"miss_rate", 0.3}}});
    const auto cfg = parse_config(doc);
    const auto first = run_matrix(cfg);
    const std::string csv = matrix_csv(first);
    CHECK(csv.rfind("setup,method,RE,PR,JA,AC,F1\n", 0) == 0);
    REQUIRE(first.cells.size() == 6);
    CHECK(first.cells[0].setup == "missing 0.1");
    CHECK(first.cells[1].method == "stage-2");
    CHECK(first.cells[2].setup == "missing 0.2");
    CHECK(first.cells[4].setup == "missing 0.3");
    for (const auto& c : first.cells) CHECK(c.error.empty());

    write_matrix_outputs(first, cfg.output_dir);
    CHECK(fs::exists(cfg.output_dir / "manifest.json"));
    const auto manifest = json::parse(io::read_file(cfg.output_dir / "manifest.json"));
    CHECK(parse_config(manifest.at("config")).seed == cfg.seed);

    // A deleted cell is recomputed bit for bit; the others are reused.
    fs::remove(cfg.output_dir / "cells" / "missing_0.2__base.json");
    CHECK(matrix_csv(run_matrix(cfg, true)) == csv);
    fs::remove_all(cfg.output_dir);
  }
}

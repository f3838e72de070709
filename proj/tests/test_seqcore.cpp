#include "oracles.hpp"
#include "sparsephase/io.hpp"
#include "sparsephase/seqcore.hpp"

#include <doctest.h>

#include <filesystem>
#include <limits>

using namespace sparsephase;

TEST_SUITE("seqcore") {
  TEST_CASE("uniform row from equal logits") {
    Matrix l = Matrix::Zero(1, 4);
    const auto P = normalize_logits(l);
    for (int c = 0; c < 4; ++c) CHECK(P.probs()(0, c) == doctest::Approx(0.25).epsilon(1e-15));
  }

  TEST_CASE("saturated logits stay finite") {
    Matrix l(1, 2);
    l << 1000.0, -1000.0;
    const auto P = normalize_logits(l);
    CHECK(std::abs(P.probs()(0, 0) - 1.0) < 1e-12);
    CHECK(std::abs(P.probs()(0, 1)) < 1e-12);
    CHECK(P.log_probs()(0, 1) == doctest::Approx(std::log(kProbFloor)));
    CHECK(P.clamped(0, 1));
    CHECK_FALSE(P.clamped(0, 0));
  }

  TEST_CASE("softmax of [1, 0]") {
    const auto ref = oracle::softmax({1.0, 0.0});
    CHECK(ref[0] == doctest::Approx(0.731059).epsilon(1e-6));
    CHECK(ref[1] == doctest::Approx(0.268941).epsilon(1e-6));
    Matrix l(1, 2);
    l << 1.0, 0.0;
    const auto P = normalize_logits(l);
    CHECK(std::abs(P.probs()(0, 0) - ref[0]) < 1e-12);
    CHECK(std::abs(P.probs()(0, 1) - ref[1]) < 1e-12);
  }

  TEST_CASE("rows sum to one and keep their argmax") {
    std::mt19937_64 rng(4);
    const Matrix l = oracle::random_matrix(50, 6, rng, 30.0);
    const auto P = normalize_logits(l);
    for (int t = 0; t < 50; ++t) {
      CHECK(std::abs(P.probs().row(t).sum() - 1.0) < 1e-9);
      Eigen::Index a, b;
      l.row(t).maxCoeff(&a);
      P.probs().row(t).maxCoeff(&b);
      CHECK(a == b);
      CHECK(P.full_argmax(t) == a);
    }
  }

  TEST_CASE("blank column bookkeeping") {
    Matrix l(2, 3);
    l << 0, 1, 5,  //
        3, 1, 0;
    const auto P = normalize_logits(l, true);
    CHECK(P.has_blank());
    CHECK(P.num_phases() == 2);
    CHECK(P.blank_column() == 2);
    CHECK(P.phase_argmax(0) == 1);
    CHECK(P.full_argmax(0) == 2);
  }

  TEST_CASE("non-finite logits rejected") {
    Matrix l = Matrix::Zero(2, 2);
    l(1, 0) = std::numeric_limits<double>::quiet_NaN();
    CHECK_THROWS_AS(normalize_logits(l), std::invalid_argument);
    l(1, 0) = std::numeric_limits<double>::infinity();
    CHECK_THROWS_AS(normalize_logits(l), std::invalid_argument);
  }

  TEST_CASE("annotation set validation") {
    CHECK_THROWS_AS(AnnotationSet({{1, 0}, {1, 1}}, 5, 2), std::invalid_argument);
    CHECK_THROWS_AS(AnnotationSet({{1, 2}}, 5, 2), std::invalid_argument);
    CHECK_THROWS_AS(AnnotationSet({{5, 0}}, 5, 2), std::invalid_argument);
    const AnnotationSet a({{3, 1}, {0, 0, Provenance::pseudo}}, 5, 2);
    CHECK(a.entries()[0].frame == 0);
    CHECK(a.ground_truth_count() == 1);
    CHECK(a.dense_labels() == std::vector<int>{0, -1, -1, 1, -1});
    CHECK(a.label_at(3) == 1);
    CHECK_FALSE(a.label_at(2).has_value());
  }

  TEST_CASE("label and feature sequences validate") {
    CHECK_THROWS_AS(PhaseLabelSequence({0, 3}, 3), std::invalid_argument);
    CHECK_THROWS_AS(FeatureSequence(Matrix(0, 3), "x"), std::invalid_argument);
    Matrix f = Matrix::Zero(2, 2);
    f(0, 0) = std::numeric_limits<double>::infinity();
    CHECK_THROWS_AS(FeatureSequence(f, "x"), std::invalid_argument);
  }

  TEST_CASE("hyperparameter defaults") {
    const Hyperparams hp;
    CHECK(hp.window_w == 25);
    CHECK(hp.tau_s == 16.0);
    CHECK(hp.lr == 5e-4);
    CHECK(hp.epochs == 50);
    CHECK(hp.resolved_tau_transition(7) == doctest::Approx(0.5 * std::log(7.0)));
    Hyperparams bad;
    bad.m_t_temp = 0.0;
    CHECK_THROWS_AS(bad.validate(), std::invalid_argument);
    bad = Hyperparams{};
    bad.alpha[2] = -1.0;
    CHECK_THROWS_AS(bad.validate(), std::invalid_argument);
  }

  TEST_CASE("feature and label files round trip") {
    const auto dir = std::filesystem::temp_directory_path() / "sparsephase_io_test";
    std::filesystem::create_directories(dir);
    std::mt19937_64 rng(9);
    const Matrix frames = oracle::random_matrix(7, 3, rng).cast<float>().cast<double>();
    io::write_features(dir / "v.pseq", FeatureSequence(frames, "v"));
    const auto back = io::read_features(dir / "v.pseq", "v");
    CHECK(back.frames() == frames);

    const std::string bytes = io::read_file(dir / "v.pseq");
    CHECK(bytes.substr(0, 4) == "PSEQ");
    CHECK(bytes.size() == 16 + 7 * 3 * 4);

    const PhaseLabelSequence labels({0, 0, 2, 1}, 3);
    io::write_labels(dir / "v.csv", labels);
    CHECK(io::read_labels(dir / "v.csv", 3) == labels);

    std::map<std::string, AnnotationSet> sets;
    sets.emplace("v", AnnotationSet({{1, 0}, {2, 2, Provenance::pseudo}}, 4, 3));
    io::write_pseudo_labels(dir / "p.csv", sets);
    const auto pseudo = io::read_pseudo_labels(dir / "p.csv");
    CHECK(pseudo.at("v") == sets.at("v").entries());
    std::filesystem::remove_all(dir);
  }
}

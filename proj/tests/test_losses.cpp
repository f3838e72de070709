#include "oracles.hpp"
#include "sparsephase/losses.hpp"

#include <doctest.h>

using namespace sparsephase;
using doctest::Approx;

namespace {

ProbabilityMatrix from_probs(const Matrix& p) {
  return normalize_logits(p.array().log().matrix());
}

AnnotationSet ann(std::vector<std::pair<int, int>> frames, int T, int C) {
  std::vector<Annotation> e;
  for (auto [t, y] : frames) e.push_back({t, y});
  return AnnotationSet(e, T, C);
}

double fd_error(const std::function<LossValue(const ProbabilityMatrix&)>& loss, const Matrix& logits) {
  const Matrix analytic = loss(normalize_logits(logits)).grad;
  const Matrix numeric =
      oracle::numeric_grad([&](const Matrix& l) { return loss(normalize_logits(l)).value; }, logits);
  return oracle::max_rel_err(analytic, numeric);
}

}  // namespace

TEST_SUITE("losses") {
  TEST_CASE("focal values") {
    CHECK(focal(1.0, 2.0) == 0.0);
    CHECK(focal(0.5, 0.0) == Approx(std::log(2.0)).epsilon(1e-12));
    CHECK(focal(0.5, 2.0) == Approx(oracle::focal(0.5, 2.0)).epsilon(1e-12));
    CHECK(focal(0.5, 2.0) == Approx(0.173287).epsilon(1e-6));
    CHECK(std::isfinite(focal(0.0, 2.0)));
    CHECK(focal(0.0, 0.0) == Approx(-std::log(kProbFloor)));
  }

  TEST_CASE("class weights are inverse frequencies") {
    const auto even = class_weights(ann({{0, 0}, {1, 0}, {2, 1}, {3, 1}}, 4, 2), 2);
    CHECK(even.weights == std::vector<double>{2.0, 2.0});
    const auto skew = class_weights(ann({{0, 0}, {1, 0}, {2, 0}, {3, 1}}, 4, 2), 2);
    CHECK(skew.weights[0] == Approx(4.0 / 3.0));
    CHECK(skew.weights[1] == Approx(4.0));
    const auto one = class_weights(ann({{0, 0}, {1, 0}, {2, 0}, {3, 0}}, 4, 2), 2);
    CHECK(one.weights[0] == 1.0);
    CHECK(!one.present(1));
    CHECK(one.weights[1] == ClassWeights::kAbsent);
  }

  TEST_CASE("doubling every count leaves weights unchanged") {
    std::vector<AnnotationSet> once{ann({{0, 0}, {3, 1}, {5, 2}, {6, 2}}, 8, 3)};
    std::vector<AnnotationSet> twice{once[0], once[0]};
    CHECK(class_weights(once, 3).weights == class_weights(twice, 3).weights);
  }

  TEST_CASE("classification loss hand values") {
    Matrix half(2, 2);
    half << 0.5, 0.5, 0.5, 0.5;
    const auto one = ann({{0, 0}}, 2, 2);
    CHECK(classification_loss(from_probs(half), one, ClassWeights::uniform(2), 0.0).value ==
          Approx(std::log(2.0)).epsilon(1e-9));

    const auto two = ann({{0, 0}, {1, 1}}, 2, 2);
    const auto w = class_weights(two, 2);
    REQUIRE(w.weights == std::vector<double>{2.0, 2.0});
    const double expect = 0.5 * (2 * oracle::focal(0.5, 2) + 2 * oracle::focal(0.5, 2));
    CHECK(expect == Approx(0.346574).epsilon(1e-6));
    CHECK(classification_loss(from_probs(half), two, w, 2.0).value == Approx(expect).epsilon(1e-9));

    Matrix sure(2, 2);
    sure << 1.0, 0.0, 0.0, 1.0;
    CHECK(classification_loss(normalize_logits(Matrix(sure.array() * 60.0)), two, w, 2.0).value ==
          Approx(0.0).epsilon(1e-12));
    CHECK_THROWS(classification_loss(from_probs(half), AnnotationSet({}, 2, 2), w, 2.0));
  }

  TEST_CASE("entropy loss hand values") {
    Matrix p(2, 2);
    p << 0.7, 0.3, 0.5, 0.5;
    CHECK(entropy_loss(from_probs(p), ann({{0, 0}}, 2, 2)).value ==
          Approx(oracle::entropy({0.7, 0.3})).epsilon(1e-9));
    CHECK(oracle::entropy({0.7, 0.3}) == Approx(0.610864).epsilon(1e-6));
    Matrix u = Matrix::Constant(3, 4, 0.25);
    CHECK(entropy_loss(from_probs(u), ann({{0, 1}, {2, 3}}, 3, 4)).value ==
          Approx(std::log(4.0)).epsilon(1e-9));
  }

  TEST_CASE("masked frames receive no gradient") {
    std::mt19937_64 rng(5);
    const Matrix logits = oracle::random_matrix(7, 3, rng);
    const auto a = ann({{1, 0}, {4, 2}}, 7, 3);
    const auto P = normalize_logits(logits);
    const auto cls = classification_loss(P, a, class_weights(a, 3), 2.0);
    const auto ent = entropy_loss(P, a);
    for (int t : {0, 2, 3, 5, 6}) {
      CHECK(cls.grad.row(t).cwiseAbs().maxCoeff() == 0.0);
      CHECK(ent.grad.row(t).cwiseAbs().maxCoeff() == 0.0);
    }
  }

  TEST_CASE("confidence loss hand value") {
    // Phase 0 log-probability at frames 0..4 with the anchor at 2: rises to the peak,
    // then one step back up by 0.1 after it.
    const std::vector<double> lp{-3.0, -2.0, -0.5, -1.5, -1.4};
    Matrix p(5, 2);
    for (int t = 0; t < 5; ++t) p.row(t) << std::exp(lp[t]), 1.0 - std::exp(lp[t]);
    const auto a = ann({{0, 1}, {2, 0}, {4, 1}}, 5, 2);
    const double expect = 0.1 / (2.0 * 4.0);
    CHECK(expect == Approx(0.0125));
    CHECK(confidence_loss(from_probs(p), a).value == Approx(expect).epsilon(1e-9));

    Matrix mono(5, 2);
    const std::vector<double> up{-3.0, -2.0, -0.5, -1.5, -2.4};
    for (int t = 0; t < 5; ++t) mono.row(t) << std::exp(up[t]), 1.0 - std::exp(up[t]);
    CHECK(confidence_loss(from_probs(mono), a).value == 0.0);
    CHECK(confidence_loss(from_probs(p), ann({{0, 1}, {2, 0}}, 5, 2)).value == 0.0);
  }

  TEST_CASE("confidence loss leaves the side toward a same-phase timestamp free") {
    const std::vector<double> lp{-3.0, -2.0, -0.5, -1.5, -1.4};
    Matrix p(5, 2);
    for (int t = 0; t < 5; ++t) p.row(t) << std::exp(lp[t]), 1.0 - std::exp(lp[t]);
    // Only the rise toward frame 2 is checked; it has no violation.
    CHECK(confidence_loss(from_probs(p), ann({{0, 1}, {2, 0}, {4, 0}}, 5, 2)).value == 0.0);
    // Rise side free; the fall side sees 0.1 of increase from frame 3 to 4.
    CHECK(confidence_loss(from_probs(p), ann({{0, 0}, {2, 0}, {4, 1}}, 5, 2)).value ==
          Approx(0.1 / 8.0).epsilon(1e-9));
  }

  TEST_CASE("confidence loss ignores pseudo entries") {
    std::mt19937_64 rng(9);
    const auto P = normalize_logits(oracle::random_matrix(10, 3, rng));
    const auto gt = ann({{0, 0}, {4, 1}, {9, 2}}, 10, 3);
    std::vector<Annotation> mixed(gt.entries());
    mixed.push_back({6, 0, Provenance::pseudo});
    std::sort(mixed.begin(), mixed.end(), [](auto& x, auto& y) { return x.frame < y.frame; });
    CHECK(confidence_loss(P, AnnotationSet(mixed, 10, 3)).value == confidence_loss(P, gt).value);
  }

  TEST_CASE("smoothness loss hand values") {
    // A single column has log p = 0 everywhere, so the clipping branch is exercised with two.
    Matrix l(2, 2);
    l << 0.0, 0.0, 20.0, 0.0;
    const auto P = normalize_logits(l);
    const double d0 = P.log_probs()(1, 0) - P.log_probs()(0, 0);
    const double d1 = P.log_probs()(1, 1) - P.log_probs()(0, 1);
    const auto clip = [](double d) { return std::min(std::abs(d), 16.0) * std::min(std::abs(d), 16.0); };
    CHECK(smoothness_loss(P, 16.0).value == Approx((clip(d0) + clip(d1)) / 2.0).epsilon(1e-12));
    CHECK(clip(-20.0) == 256.0);
    CHECK(smoothness_loss(P, 0.5).value == Approx(0.25).epsilon(1e-12));

    Matrix steady(4, 3);
    steady << 0.1, 0.2, 0.7, 0.1, 0.2, 0.7, 0.1, 0.2, 0.7, 0.1, 0.2, 0.7;
    CHECK(smoothness_loss(from_probs(steady), 16.0).value == Approx(0.0).epsilon(1e-20));
    CHECK(smoothness_loss(from_probs(steady.topRows(1)), 16.0).value == 0.0);
  }

  TEST_CASE("smoothness loss is invariant to a consistent class permutation") {
    std::mt19937_64 rng(17);
    const Matrix l = oracle::random_matrix(9, 4, rng, 3.0);
    Matrix perm(9, 4);
    perm << l.col(2), l.col(0), l.col(3), l.col(1);
    CHECK(smoothness_loss(normalize_logits(l), 16.0).value ==
          Approx(smoothness_loss(normalize_logits(perm), 16.0).value).epsilon(1e-12));
  }

  TEST_CASE("total loss is the weighted sum") {
    auto lv = [](double v) {
      LossValue x;
      x.value = v;
      return x;
    };
    LossComponents c{lv(0.3), lv(0.2), lv(0.1), lv(0.4), lv(0.5)};
    CHECK(total_loss(c, {0.15, 0.5, 1.0, 0.2}).value == Approx(0.88).epsilon(1e-12));
    CHECK(total_loss(c, {0.0, 0.0, 0.0, 0.0}).value == Approx(0.3));
    LossComponents ones{lv(1), lv(1), lv(1), lv(1), lv(1)};
    CHECK(total_loss(ones, {1, 1, 1, 1}).value == Approx(5.0));
  }

  TEST_CASE("gradients match central differences") {
    std::mt19937_64 rng(23);
    for (int trial = 0; trial < 10; ++trial) {
      const int T = 6 + trial;
      const int C = 2 + trial % 3;
      const Matrix logits = oracle::random_matrix(T, C, rng, 1.5);
      const auto a = ann({{0, 0}, {T / 2, 1}, {T - 1, C - 1}}, T, C);
      const auto w = class_weights(a, C);
      CHECK(fd_error([&](const auto& P) { return classification_loss(P, a, w, 2.0); }, logits) < 1e-4);
      CHECK(fd_error([&](const auto& P) { return entropy_loss(P, a); }, logits) < 1e-4);
      CHECK(fd_error([&](const auto& P) { return confidence_loss(P, a); }, logits) < 1e-4);
      CHECK(fd_error([&](const auto& P) { return smoothness_loss(P, 16.0); }, logits) < 1e-4);
    }
  }
}

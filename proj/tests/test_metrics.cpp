#include "oracles.hpp"
#include "sparsephase/metrics.hpp"

#include <doctest.h>

using namespace sparsephase;
using doctest::Approx;

namespace {

PhaseLabelSequence seq(std::vector<int> v, int C) { return PhaseLabelSequence(std::move(v), C); }

std::vector<int> random_segments(int T, int C, std::mt19937_64& rng) {
  std::uniform_int_distribution<int> phase(0, C - 1);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::vector<int> out;
  int cur = phase(rng);
  for (int t = 0; t < T; ++t) {
    if (u(rng) < 0.08) cur = phase(rng);
    out.push_back(cur);
  }
  return out;
}

}  // namespace

TEST_SUITE("metrics") {
  TEST_CASE("hand-computed example") {
    const auto m = evaluate_video(seq({0, 1, 1, 1}, 2), seq({0, 0, 1, 1}, 2));
    CHECK(m.accuracy == Approx(75.0));
    CHECK(m.per_phase.at(0).precision == Approx(100.0));
    CHECK(m.per_phase.at(0).recall == Approx(50.0));
    CHECK(m.per_phase.at(0).jaccard == Approx(50.0));
    CHECK(m.per_phase.at(1).precision == Approx(200.0 / 3.0));
    CHECK(m.per_phase.at(1).recall == Approx(100.0));
    CHECK(m.per_phase.at(1).jaccard == Approx(200.0 / 3.0));
    CHECK(m.averaged.jaccard == Approx(58.333333).epsilon(1e-6));
    const auto o = oracle::naive_metrics({0, 1, 1, 1}, {0, 0, 1, 1});
    CHECK(m.averaged.jaccard == Approx(o.avg.ja).epsilon(1e-12));
  }

  TEST_CASE("identical and disjoint predictions") {
    const auto same = evaluate_video(seq({0, 0, 2, 1}, 3), seq({0, 0, 2, 1}, 3));
    CHECK(same.accuracy == 100.0);
    CHECK(same.averaged.f1 == Approx(100.0));
    CHECK(same.averaged.jaccard == Approx(100.0));
    const auto off = evaluate_video(seq({1, 1, 1}, 2), seq({0, 0, 0}, 2));
    CHECK(off.accuracy == 0.0);
    CHECK(off.averaged.jaccard == 0.0);
    CHECK(off.per_phase.at(1).precision == 0.0);
    CHECK_THROWS(evaluate_video(seq({0}, 2), seq({0, 0}, 2)));
  }

  TEST_CASE("matches naive counting on random pairs, relaxed never lower") {
    std::mt19937_64 rng(77);
    for (int rep = 0; rep < 300; ++rep) {
      const int T = 1 + static_cast<int>(rng() % 200);
      const int C = 1 + static_cast<int>(rng() % 12);
      const auto gt = random_segments(T, C, rng);
      const auto pred = random_segments(T, C, rng);
      const auto m = evaluate_video(seq(pred, C), seq(gt, C));
      const auto o = oracle::naive_metrics(pred, gt);
      CHECK(m.accuracy == o.ac);
      REQUIRE(m.per_phase.size() == o.per_phase.size());
      for (const auto& [c, s] : o.per_phase) {
        const auto& got = m.per_phase.at(c);
        CHECK(got.precision == s.pr);
        CHECK(got.recall == s.re);
        CHECK(got.jaccard == s.ja);
        CHECK(got.jaccard <= std::min(got.precision, got.recall) + 1e-12);
      }
      CHECK(m.averaged.jaccard == Approx(o.avg.ja).epsilon(1e-12));
      CHECK(m.averaged.f1 == Approx(o.avg.f1).epsilon(1e-12));

      const auto r = evaluate_video_relaxed(seq(pred, C), seq(gt, C), 1.0);
      CHECK(r.accuracy >= m.accuracy);
      CHECK(r.averaged.jaccard >= m.averaged.jaccard - 1e-9);
    }
  }

  TEST_CASE("accuracy is invariant under a consistent relabeling") {
    std::mt19937_64 rng(5);
    const std::vector<int> perm{3, 0, 4, 1, 2};
    for (int rep = 0; rep < 20; ++rep) {
      auto gt = random_segments(60, 5, rng);
      auto pred = random_segments(60, 5, rng);
      const double before = evaluate_video(seq(pred, 5), seq(gt, 5)).accuracy;
      for (int& y : gt) y = perm[static_cast<std::size_t>(y)];
      for (int& y : pred) y = perm[static_cast<std::size_t>(y)];
      CHECK(evaluate_video(seq(pred, 5), seq(gt, 5)).accuracy == before);
    }
  }

  TEST_CASE("relaxed windows") {
    const auto flat = relax_ground_truth(seq(std::vector<int>(20, 1), 2), 1.0);
    for (const auto& s : flat) CHECK(s == std::vector<int>{1});

    std::vector<int> ab(30, 0);
    ab.insert(ab.end(), 30, 1);
    const auto r = relax_ground_truth(seq(ab, 2), 1.0);
    for (int t = 0; t < 60; ++t) {
      if (t >= 20 && t <= 39) {
        CHECK(r[t] == std::vector<int>{0, 1});
      } else {
        CHECK(r[t].size() == 1);
      }
    }

    std::vector<int> abc(30, 0);
    abc.insert(abc.end(), 5, 1);
    abc.insert(abc.end(), 30, 2);
    const auto u = relax_ground_truth(seq(abc, 3), 1.0);
    CHECK(u[30] == std::vector<int>{0, 1, 2});
    CHECK(u[22] == std::vector<int>{0, 1});
    CHECK(u[42] == std::vector<int>{1, 2});
    CHECK(u[20] == std::vector<int>{0, 1});
    CHECK(u[19] == std::vector<int>{0});
  }

  TEST_CASE("relaxed scoring credits the predicted adjacent phase") {
    std::vector<int> gt(30, 0);
    gt.insert(gt.end(), 30, 1);
    std::vector<int> pred(25, 0);
    pred.insert(pred.end(), 35, 1);
    CHECK(evaluate_video(seq(pred, 2), seq(gt, 2)).accuracy < 100.0);
    CHECK(evaluate_video_relaxed(seq(pred, 2), seq(gt, 2), 1.0).accuracy == 100.0);
  }

  TEST_CASE("aggregation uses population statistics") {
    VideoMetrics a, b;
    a.accuracy = 80.0;
    b.accuracy = 90.0;
    const auto r = aggregate({a, b});
    CHECK(r.accuracy.mean == Approx(85.0));
    CHECK(r.accuracy.std == Approx(5.0));
    CHECK(format_mean_std(r.accuracy) == "85.0±5.0");
    CHECK(aggregate({a}).accuracy.std == 0.0);
    const auto swapped = aggregate({b, a});
    CHECK(swapped.accuracy.mean == r.accuracy.mean);
    CHECK(swapped.accuracy.std == r.accuracy.std);
    CHECK_THROWS(aggregate({}));
  }
}

#include "oracles.hpp"
#include "sparsephase/stc.hpp"

#include <doctest.h>

using namespace sparsephase;
using doctest::Approx;

namespace {

constexpr int a = 0, b = 1, c = 2, B = kBlankToken, S = kStarToken;

ProbabilityMatrix random_probs(int T, int C, std::mt19937_64& rng) {
  return normalize_logits(oracle::random_matrix(T, C + 1, rng, 1.5), true);
}

Transcript random_transcript(int L, int C, std::mt19937_64& rng) {
  Transcript tr;
  std::uniform_int_distribution<int> pick(0, C - 1);
  while (static_cast<int>(tr.tokens.size()) < L) {
    const int y = pick(rng);
    if (C > 1 && !tr.tokens.empty() && tr.tokens.back() == y) continue;
    if (C == 1 && !tr.tokens.empty()) break;
    tr.tokens.push_back(y);
  }
  return tr;
}

}  // namespace

TEST_SUITE("stc") {
  TEST_CASE("collapse") {
    CHECK(collapse(std::vector<int>{a, a, B, a}) == std::vector<int>{a, a});
    CHECK(collapse(std::vector<int>{B, B}).empty());
    CHECK(collapse(std::vector<int>{a, b, b, B, b, c}) == std::vector<int>{a, b, b, c});
    CHECK(oracle::collapse({a, b, b, 3, b, c}, 3) == std::vector<int>{a, b, b, c});
  }

  TEST_CASE("transcripts merge adjacent duplicates only") {
    std::vector<Annotation> e{{3, a}, {7, b}, {9, c}};
    CHECK(transcript_from_annotations(AnnotationSet(e, 10, 3)).tokens == std::vector<int>{a, b, c});
    e = {{1, a}, {2, a}, {5, b}};
    CHECK(transcript_from_annotations(AnnotationSet(e, 10, 3)).tokens == std::vector<int>{a, b});
    e = {{1, a}, {2, b}, {5, a}};
    CHECK(transcript_from_annotations(AnnotationSet(e, 10, 3)).tokens == std::vector<int>{a, b, a});
    CHECK(transcript_from_labels(PhaseLabelSequence({a, a, c, c, b}, 3)).tokens ==
          std::vector<int>{a, c, b});
  }

  TEST_CASE("star augmentation") {
    CHECK(star_augment(Transcript{{a}}).tokens == std::vector<int>{S, a, S});
    CHECK(star_augment(Transcript{{a, b}}).tokens == std::vector<int>{S, a, S, b, S});
    CHECK(star_augment(Transcript{}).tokens == std::vector<int>{S});
    CHECK_THROWS(star_augment(star_augment(Transcript{{a}})));
    CHECK_THROWS(Transcript{{a, a}}.validate(false));
    CHECK_THROWS(Transcript{{a, B}}.validate(true));
  }

  TEST_CASE("CTC small cases") {
    Matrix p(2, 3);
    p << 0.5, 0.2, 0.3, 0.1, 0.6, 0.3;
    const auto P = normalize_logits(p.array().log().matrix(), true);
    CHECK(ctc_loss(P, Transcript{{a}}).value ==
          Approx(-std::log(0.5 * 0.1 + 0.5 * 0.3 + 0.3 * 0.1)).epsilon(1e-9));
    CHECK(ctc_loss(P, Transcript{{a}}).value ==
          Approx(oracle::enumerate(P.probs(), {a}, false)).epsilon(1e-9));
    CHECK(brute_force_path_sum(P, Transcript{{a}}, false) == Approx(ctc_loss(P, Transcript{{a}}).value));
    CHECK(ctc_loss(normalize_logits(p.topRows(1).array().log().matrix(), true), Transcript{{b}}).value ==
          Approx(-std::log(0.2)).epsilon(1e-9));

    const auto infeasible = ctc_loss(P, Transcript{{a, b, a}});
    CHECK(!infeasible.feasible);
    CHECK(std::isinf(infeasible.value));
    CHECK(std::isinf(brute_force_path_sum(P, Transcript{{a, b, a}}, false)));
    CHECK(ctc_loss(P, Transcript{{a, b}}).feasible);
  }

  TEST_CASE("STC small cases") {
    Matrix p(1, 3);
    p << 0.5, 0.2, 0.3;
    const auto P1 = normalize_logits(p.array().log().matrix(), true);
    CHECK(stc_loss(P1, Transcript{}).value == Approx(-std::log(1.0 - 0.3)).epsilon(1e-9));

    Matrix q(2, 3);
    q << 0.5, 0.2, 0.3, 0.1, 0.6, 0.3;
    const auto P2 = normalize_logits(q.array().log().matrix(), true);
    // Empty transcript, T=2: everything except the all-BLANK path.
    CHECK(stc_loss(P2, Transcript{}).value == Approx(-std::log(1.0 - 0.3 * 0.3)).epsilon(1e-9));
    CHECK(brute_force_path_sum(P2, Transcript{}, true) == Approx(-std::log(1.0 - 0.09)).epsilon(1e-9));

    Matrix no_blank(4, 3);
    no_blank << 1, 2, -80, 0, 1, -80, 2, 2, -80, -1, 0, -80;
    CHECK(stc_loss(normalize_logits(no_blank, true), Transcript{}).value == Approx(0.0).epsilon(1e-9));
  }

  TEST_CASE("DP equals exhaustive enumeration") {
    std::mt19937_64 rng(101);
    int checked = 0;
    for (int T = 1; T <= 6; ++T) {
      for (int C = 1; C <= 3; ++C) {
        for (int rep = 0; rep < 6; ++rep) {
          const auto P = random_probs(T, C, rng);
          const auto tr = random_transcript(rep % 4, C, rng);
          const double ctc = ctc_loss(P, tr).value;
          const double stc = stc_loss(P, tr).value;
          const double ctc_ref = oracle::enumerate(P.probs(), tr.tokens, false);
          const double stc_ref = oracle::enumerate(P.probs(), tr.tokens, true);
          if (std::isinf(ctc_ref)) {
            CHECK(std::isinf(ctc));
          } else {
            CHECK(std::abs(ctc - ctc_ref) < 1e-6);
          }
          if (std::isinf(stc_ref)) {
            CHECK(std::isinf(stc));
          } else {
            CHECK(std::abs(stc - stc_ref) < 1e-6);
          }
          const double bf = brute_force_path_sum(P, tr, true);
          if (std::isinf(stc_ref)) {
            CHECK(std::isinf(bf));
          } else {
            CHECK(bf == Approx(stc_ref).epsilon(1e-12));
          }
          if (!tr.tokens.empty() && std::isfinite(ctc)) CHECK(stc <= ctc + 1e-9);
          ++checked;
        }
      }
    }
    CHECK(checked == 108);
  }

  TEST_CASE("forward and backward totals agree") {
    std::mt19937_64 rng(7);
    for (int rep = 0; rep < 20; ++rep) {
      const auto P = random_probs(40, 5, rng);
      const auto tr = random_transcript(1 + rep % 5, 5, rng);
      const auto s = stc_scores(P, tr);
      CHECK(std::abs(s.forward_log_z - s.backward_log_z) < 1e-9);
      const auto k = ctc_scores(P, tr);
      CHECK(std::abs(k.forward_log_z - k.backward_log_z) < 1e-9);
    }
  }

  TEST_CASE("gradients match central differences") {
    std::mt19937_64 rng(13);
    for (int rep = 0; rep < 8; ++rep) {
      const int T = 4 + rep;
      const int C = 2 + rep % 3;
      const Matrix logits = oracle::random_matrix(T, C + 1, rng, 1.5);
      const auto tr = random_transcript(1 + rep % 3, C, rng);
      for (auto fn : {&ctc_loss, &stc_loss}) {
        const Matrix analytic = fn(normalize_logits(logits, true), tr).grad;
        const Matrix numeric = oracle::numeric_grad(
            [&](const Matrix& l) { return fn(normalize_logits(l, true), tr).value; }, logits);
        CHECK(oracle::max_rel_err(analytic, numeric) < 1e-4);
      }
    }
  }

  TEST_CASE("paths walked through the lattice collapse consistently with the transcript") {
    std::mt19937_64 rng(31);
    for (int rep = 0; rep < 200; ++rep) {
      const int C = 2 + rep % 3;
      const auto tr = random_transcript(rep % 4, C, rng);
      const StcLattice lat(star_augment(tr), C);
      // Random walk over frame tokens; whenever the walk sits in an accepting state the
      // path must satisfy the oracle, and vice versa.
      std::uniform_int_distribution<int> tok(0, C);
      int state = lat.start();
      std::vector<int> path;
      for (int t = 0; t < 12; ++t) {
        const int k = tok(rng);
        state = lat.next(state, k);
        if (state < 0) break;
        path.push_back(k);
        CHECK(lat.accepting(state) == oracle::accepts(path, tr.tokens, C, true));
      }
    }
  }

  TEST_CASE("neighbour copy and prediction") {
    CHECK(neighbor_copy(std::vector<int>{a, B, b}, 2).labels() == std::vector<int>{a, a, b});
    CHECK(neighbor_copy(std::vector<int>{B, a}, 2).labels() == std::vector<int>{a, a});
    CHECK(neighbor_copy(std::vector<int>{a, b, b}, 2).labels() == std::vector<int>{a, b, b});
    CHECK(neighbor_copy(std::vector<int>{a, B, B, B, b}, 2).labels() ==
          std::vector<int>{a, a, a, b, b});
    CHECK_THROWS(neighbor_copy(std::vector<int>{B, B}, 2));

    Matrix l(3, 3);
    l << 3, 0, 0, 0, 0, 5, 0, 2, 0;
    const auto P = normalize_logits(l, true);
    CHECK(raw_predictions(P) == std::vector<int>{a, B, b});
    CHECK(predict_labels(P).labels() == std::vector<int>{a, a, b});
  }
}

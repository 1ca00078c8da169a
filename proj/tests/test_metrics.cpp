// Copyright 2026 The OFA3D Authors
// SPDX-License-Identifier: Apache-2.0

#include <algorithm>
#include <cmath>
#include <limits>
#include <random>

#include <doctest.h>

#include "ofa/error.hpp"
#include "ofa/metrics.hpp"

using namespace ofa;

namespace {

// O(n^2) pair counting with half credit for ties.
double pair_auc(const ScoredSet& s) {
  double wins = 0.0, pairs = 0.0;
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (!s.labels[i]) continue;
    for (std::size_t j = 0; j < s.size(); ++j) {
      if (s.labels[j]) continue;
      pairs += 1.0;
      if (s.scores[i] > s.scores[j]) wins += 1.0;
      else if (s.scores[i] == s.scores[j]) wins += 0.5;
    }
  }
  return wins / pairs;
}

// Best J over every threshold that can change the decision: each observed
// score and +/- infinity.
double best_j(const ScoredSet& s) {
  std::vector<double> ts = s.scores;
  ts.push_back(std::numeric_limits<double>::infinity());
  ts.push_back(-std::numeric_limits<double>::infinity());
  double best = -2.0;
  for (double t : ts) {
    double tp = 0, fp = 0;
    for (std::size_t i = 0; i < s.size(); ++i)
      if (s.scores[i] >= t) (s.labels[i] ? tp : fp) += 1.0;
    best = std::max(best, tp / static_cast<double>(s.positives()) - fp / static_cast<double>(s.negatives()));
  }
  return best;
}

ScoredSet random_set(std::mt19937_64& rng, std::size_t n, int levels) {
  ScoredSet s;
  std::uniform_int_distribution<int> lvl(0, levels - 1);
  std::bernoulli_distribution coin(0.4);
  for (std::size_t i = 0; i < n; ++i) {
    s.scores.push_back(static_cast<double>(lvl(rng)) / levels);
    s.labels.push_back(coin(rng) ? 1 : 0);
  }
  s.labels[0] = 1;
  s.labels[1] = 0;
  return s;
}

}  // namespace

TEST_SUITE("metrics") {

TEST_CASE("auc examples") {
  CHECK(roc_auc({{0.9, 0.1}, {1, 0}}) == 1.0);
  CHECK(roc_auc({{0.1, 0.4, 0.35, 0.8}, {0, 0, 1, 1}}) == 0.75);
  CHECK(roc_auc({{0.3, 0.3, 0.3, 0.3}, {0, 1, 0, 1}}) == 0.5);
  try {
    roc_auc({{0.1, 0.2}, {1, 1}});
    FAIL("one class accepted");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::OneClassOnly);
  }
}

TEST_CASE("auc matches pair counting on random sets with ties") {
  std::mt19937_64 rng(41);
  std::uniform_int_distribution<std::size_t> size(2, 60);
  for (int trial = 0; trial < 1000; ++trial) {
    const auto s = random_set(rng, size(rng), 2 + trial % 20);
    CHECK(std::abs(roc_auc(s) - pair_auc(s)) < 1e-12);
  }
}

TEST_CASE("auc is invariant to strictly increasing transforms") {
  std::mt19937_64 rng(42);
  for (int trial = 0; trial < 50; ++trial) {
    auto s = random_set(rng, 40, 15);
    const double a = roc_auc(s);
    for (auto& x : s.scores) x = std::exp(3.0 * x) - 7.0;
    CHECK(roc_auc(s) == doctest::Approx(a).epsilon(1e-15));
  }
}

TEST_CASE("youden examples") {
  const ScoredSet sep{{0.1, 0.2, 0.3, 0.5, 0.6, 0.9}, {0, 0, 0, 1, 1, 1}};
  CHECK(youden_index(sep, youden_threshold(sep)) == 1.0);
  const ScoredSet two{{0.2, 0.7}, {0, 1}};
  CHECK(youden_index(two, youden_threshold(two)) == 1.0);
  // J = 0.5 is reached for thresholds in (0.4, 0.8] and (0.1, 0.35]. Both
  // points are equally balanced, so the smaller midpoint wins.
  const ScoredSet tie{{0.1, 0.4, 0.35, 0.8}, {0, 0, 1, 1}};
  const double t = youden_threshold(tie);
  CHECK(youden_index(tie, t) == 0.5);
  CHECK(t == doctest::Approx(0.225));
  const auto pts = roc_candidates(tie);
  REQUIRE(pts.size() == 5);
  CHECK(pts.front().threshold == std::numeric_limits<double>::infinity());
  CHECK(pts.back().threshold == -std::numeric_limits<double>::infinity());
  CHECK(pts.back().tpr == 1.0);
  CHECK(pts.back().fpr == 1.0);
}

TEST_CASE("youden prefers the balanced operating point") {
  // Several thresholds share the best J; the chosen one is the most balanced.
  const ScoredSet s{{0.9, 0.8, 0.7, 0.6, 0.5, 0.4, 0.3, 0.2}, {1, 1, 0, 1, 1, 0, 0, 0}};
  const double t = youden_threshold(s);
  const double j = youden_index(s, t);
  CHECK(j == doctest::Approx(best_j(s)));
  double tp = 0, fp = 0;
  for (std::size_t i = 0; i < s.size(); ++i)
    if (s.scores[i] >= t) (s.labels[i] ? tp : fp) += 1.0;
  const double tpr = tp / 4.0, fpr = fp / 4.0;
  for (const auto& p : roc_candidates(s)) {
    if (std::abs((p.tpr - p.fpr) - j) < 1e-12) CHECK(std::abs(tpr - (1 - fpr)) <= std::abs(p.tpr - (1 - p.fpr)) + 1e-12);
  }
}

TEST_CASE("youden matches exhaustive enumeration") {
  std::mt19937_64 rng(43);
  for (int trial = 0; trial < 300; ++trial) {
    const auto s = random_set(rng, 30, 3 + trial % 12);
    CHECK(youden_index(s, youden_threshold(s)) == doctest::Approx(best_j(s)).epsilon(1e-15));
  }
}

TEST_CASE("precision recall f1") {
  CHECK(std::abs(f1_score(0.880, 0.867) - 0.872) <= 0.002);
  CHECK(f1_score(0.880, 0.867) == doctest::Approx(2 * 0.880 * 0.867 / (0.880 + 0.867)));
  // Reported 0.852 disagrees with 2PR/(P+R) = 0.866; tolerated as a rounding
  // inconsistency of the source table.
  CHECK(f1_score(0.921, 0.817) == doctest::Approx(0.8659).epsilon(1e-3));
  CHECK(std::abs(f1_score(0.921, 0.817) - 0.852) <= 0.02);
  CHECK(f1_score(0.0, 0.0) == 0.0);

  const ScoredSet perfect{{0.9, 0.8, 0.2, 0.1}, {1, 1, 0, 0}};
  const auto r = prf1(perfect, 0.5);
  CHECK(r.precision == 1.0);
  CHECK(r.recall == 1.0);
  CHECK(r.f1 == 1.0);
  CHECK(r.auc == 1.0);
  CHECK(r.tp == 2);
  CHECK(r.tn == 2);

  const auto none = prf1(perfect, 2.0);
  CHECK(none.precision == 0.0);
  CHECK(none.recall == 0.0);
  CHECK(none.f1 == 0.0);
  const auto at = prf1(perfect, 0.8);
  CHECK(at.tp == 2);
  const auto mixed = prf1({{0.9, 0.6, 0.55, 0.1}, {1, 0, 1, 0}}, 0.5);
  CHECK(mixed.precision == doctest::Approx(2.0 / 3.0));
  CHECK(mixed.recall == 1.0);
  CHECK(mixed.f1 == doctest::Approx(0.8));
  const auto one_class = prf1({{0.9, 0.1}, {1, 1}}, 0.5);
  CHECK(one_class.auc == 0.0);
  CHECK(one_class.recall == 0.5);
  nlohmann::json j = r;
  CHECK(j["f1"].get<double>() == 1.0);
}

}  // TEST_SUITE

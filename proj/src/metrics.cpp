// Copyright 2026 The OFA3D Authors
// SPDX-License-Identifier: Apache-2.0

#include "ofa/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include "ofa/error.hpp"

namespace ofa {

std::size_t ScoredSet::positives() const {
  return static_cast<std::size_t>(std::count_if(labels.begin(), labels.end(), [](int l) { return l != 0; }));
}

void to_json(nlohmann::json& j, const MetricsReport& r) {
  j = nlohmann::json{{"auc", r.auc},   {"threshold", r.threshold}, {"precision", r.precision},
                     {"recall", r.recall}, {"f1", r.f1},       {"tp", r.tp},
                     {"fp", r.fp},     {"tn", r.tn},               {"fn", r.fn}};
}

namespace {

void require_two_classes(const ScoredSet& set) {
  if (set.scores.size() != set.labels.size()) throw Error(ErrorKind::SizeMismatch, "scores and labels differ in length");
  const auto pos = set.positives();
  if (pos == 0 || pos == set.size()) throw Error(ErrorKind::OneClassOnly, "need at least one positive and one negative");
}

struct Counts {
  std::size_t tp = 0, fp = 0, tn = 0, fn = 0;
};

Counts confusion(const ScoredSet& set, double threshold) {
  Counts c;
  for (std::size_t i = 0; i < set.size(); ++i) {
    const bool predicted = set.scores[i] >= threshold;
    const bool actual = set.labels[i] != 0;
    if (predicted && actual) ++c.tp;
    else if (predicted) ++c.fp;
    else if (actual) ++c.fn;
    else ++c.tn;
  }
  return c;
}

}  // namespace

double roc_auc(const ScoredSet& set) {
  require_two_classes(set);
  // Rank-sum form: sort once, give tied groups their average rank.
  std::vector<std::size_t> order(set.size());
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return set.scores[a] < set.scores[b]; });
  double pos_rank_sum = 0.0;
  std::size_t i = 0;
  while (i < order.size()) {
    std::size_t j = i;
    while (j + 1 < order.size() && set.scores[order[j + 1]] == set.scores[order[i]]) ++j;
    const double avg_rank = 0.5 * static_cast<double>(i + j) + 1.0;
    for (std::size_t k = i; k <= j; ++k) {
      if (set.labels[order[k]]) pos_rank_sum += avg_rank;
    }
    i = j + 1;
  }
  const double n_pos = static_cast<double>(set.positives());
  const double n_neg = static_cast<double>(set.negatives());
  return (pos_rank_sum - n_pos * (n_pos + 1.0) / 2.0) / (n_pos * n_neg);
}

std::vector<RocPoint> roc_candidates(const ScoredSet& set) {
  require_two_classes(set);
  std::vector<double> distinct = set.scores;
  std::sort(distinct.begin(), distinct.end(), std::greater<>());
  distinct.erase(std::unique(distinct.begin(), distinct.end()), distinct.end());

  std::vector<double> thresholds{std::numeric_limits<double>::infinity()};
  for (std::size_t k = 0; k + 1 < distinct.size(); ++k) thresholds.push_back(0.5 * (distinct[k] + distinct[k + 1]));
  thresholds.push_back(-std::numeric_limits<double>::infinity());

  const double n_pos = static_cast<double>(set.positives());
  const double n_neg = static_cast<double>(set.negatives());
  std::vector<RocPoint> points;
  points.reserve(thresholds.size());
  for (double t : thresholds) {
    const auto r = confusion(set, t);
    points.push_back({t, static_cast<double>(r.tp) / n_pos, static_cast<double>(r.fp) / n_neg});
  }
  return points;
}

double youden_threshold(const ScoredSet& set) {
  const auto points = roc_candidates(set);
  const RocPoint* best = nullptr;
  double best_j = -2.0;
  double best_balance = 0.0;
  constexpr double kTieTol = 1e-12;
  for (const auto& p : points) {
    const double j = p.tpr - p.fpr;
    const double balance = std::abs(p.tpr - (1.0 - p.fpr));
    const bool better = j > best_j + kTieTol;
    const bool tie = std::abs(j - best_j) <= kTieTol;
    // Points arrive in decreasing threshold order, so on a full tie the later
    // (smaller) threshold wins.
    if (better || (tie && balance <= best_balance + kTieTol)) {
      best = &p;
      best_j = std::max(j, best_j);
      best_balance = balance;
    }
  }
  return best->threshold;
}

double youden_index(const ScoredSet& set, double threshold) {
  require_two_classes(set);
  const auto r = confusion(set, threshold);
  return static_cast<double>(r.tp) / static_cast<double>(set.positives()) -
         static_cast<double>(r.fp) / static_cast<double>(set.negatives());
}

double f1_score(double precision, double recall) {
  return precision + recall > 0.0 ? 2.0 * precision * recall / (precision + recall) : 0.0;
}

MetricsReport prf1(const ScoredSet& set, double threshold) {
  if (set.scores.size() != set.labels.size()) throw Error(ErrorKind::SizeMismatch, "scores and labels differ in length");
  MetricsReport r;
  r.threshold = threshold;
  const auto c = confusion(set, threshold);
  r.tp = c.tp;
  r.fp = c.fp;
  r.tn = c.tn;
  r.fn = c.fn;
  r.precision = r.tp + r.fp > 0 ? static_cast<double>(r.tp) / static_cast<double>(r.tp + r.fp) : 0.0;
  r.recall = r.tp + r.fn > 0 ? static_cast<double>(r.tp) / static_cast<double>(r.tp + r.fn) : 0.0;
  r.f1 = f1_score(r.precision, r.recall);
  const auto pos = r.tp + r.fn;
  if (pos > 0 && pos < set.size()) r.auc = roc_auc(set);
  return r;
}

}  // namespace ofa

// Copyright 2026 The OFA3D Authors
// SPDX-License-Identifier: Apache-2.0
//
// ROC AUC, Youden-index thresholds and precision / recall / F1.
// Decision rule everywhere: score >= threshold means positive.

#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include <json.hpp>

namespace ofa {

struct ScoredSet {
  std::vector<double> scores;
  std::vector<int> labels;

  std::size_t size() const noexcept { return scores.size(); }
  std::size_t positives() const;
  std::size_t negatives() const { return size() - positives(); }
};

struct MetricsReport {
  double auc = 0.0;
  double threshold = 0.0;
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;
  std::size_t tp = 0;
  std::size_t fp = 0;
  std::size_t tn = 0;
  std::size_t fn = 0;
};

void to_json(nlohmann::json& j, const MetricsReport& r);

/// Mann-Whitney AUC with half credit for ties. Throws OneClassOnly.
double roc_auc(const ScoredSet& set);

struct RocPoint {
  double threshold;
  double tpr;
  double fpr;
};

/// Operating points for the candidate thresholds: +inf, midpoints between
/// consecutive distinct scores, -inf. Ordered by decreasing threshold.
std::vector<RocPoint> roc_candidates(const ScoredSet& set);

/// Threshold maximising J = TPR - FPR over roc_candidates(). Ties prefer the
/// most balanced point (smallest |TPR - (1 - FPR)|), then the smaller
/// threshold. Throws OneClassOnly.
double youden_threshold(const ScoredSet& set);

/// J = TPR - FPR at a threshold.
double youden_index(const ScoredSet& set, double threshold);

/// Confusion counts and derived metrics at a threshold. Precision is 0 when
/// nothing is predicted positive; F1 is 0 when P + R = 0. `auc` is filled in
/// when both classes are present, otherwise left at 0.
MetricsReport prf1(const ScoredSet& set, double threshold);

/// 2PR / (P + R), 0 when P + R = 0.
double f1_score(double precision, double recall);

}  // namespace ofa

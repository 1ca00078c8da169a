// Copyright 2026 The OFA3D Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

#include "ofa/diffcore.hpp"

namespace ofa {

using diff::Tensor;

struct AdamHyper {
  double lr = 1e-5;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;

  friend bool operator==(const AdamHyper&, const AdamHyper&) = default;
};

struct AdamState {
  AdamHyper hyper;
  std::vector<Tensor> m;
  std::vector<Tensor> v;
  std::uint64_t t = 0;

  friend bool operator==(const AdamState&, const AdamState&) = default;
};

/// Zero moments shaped like `params`.
AdamState make_adam_state(std::span<const Tensor> params, const AdamHyper& hyper);

/// Bias-corrected Adam:
///   m <- b1 m + (1 - b1) g,  v <- b2 v + (1 - b2) g^2,
///   p <- p - lr * m_hat / (sqrt(v_hat) + eps).
/// Throws NonFiniteGrad or ShapeMismatch; parameters are untouched on error.
void adam_step(std::vector<Tensor>& params, std::span<const Tensor> grads, AdamState& state);

struct SplitRatios {
  double train = 0.7;
  double val = 0.1;
  double test = 0.2;
};

struct DataSplit {
  std::vector<std::size_t> train;
  std::vector<std::size_t> val;
  std::vector<std::size_t> test;
};

/// Per class: shuffle with `seed`, give round(val * n) to validation,
/// round(test * n) to test and the rest to training. Every split must get at
/// least one sample of every class (ClassTooSmall otherwise). Indices in each
/// split are returned sorted.
DataSplit stratified_split(std::span<const int> labels, const SplitRatios& ratios, std::uint64_t seed);

}  // namespace ofa

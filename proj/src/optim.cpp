// Copyright 2026 The OFA3D Authors
// SPDX-License-Identifier: Apache-2.0

#include "ofa/optim.hpp"

#include <algorithm>
#include <cmath>
#include <random>

#include "ofa/error.hpp"

namespace ofa {

AdamState make_adam_state(std::span<const Tensor> params, const AdamHyper& hyper) {
  AdamState s;
  s.hyper = hyper;
  for (const auto& p : params) {
    s.m.emplace_back(p.rows(), p.cols());
    s.v.emplace_back(p.rows(), p.cols());
  }
  return s;
}

void adam_step(std::vector<Tensor>& params, std::span<const Tensor> grads, AdamState& state) {
  if (params.size() != grads.size() || params.size() != state.m.size()) {
    throw Error(ErrorKind::ShapeMismatch, "parameter, gradient and moment counts differ");
  }
  for (std::size_t k = 0; k < params.size(); ++k) {
    if (!params[k].same_shape(grads[k]) || !params[k].same_shape(state.m[k])) {
      throw Error(ErrorKind::ShapeMismatch, "gradient " + std::to_string(k) + " has shape " + grads[k].shape_str());
    }
    for (double g : grads[k].values()) {
      if (!std::isfinite(g)) throw Error(ErrorKind::NonFiniteGrad, "gradient " + std::to_string(k) + " is not finite");
    }
  }

  const auto& h = state.hyper;
  state.t += 1;
  const double t = static_cast<double>(state.t);
  const double corr1 = 1.0 - std::pow(h.beta1, t);
  const double corr2 = 1.0 - std::pow(h.beta2, t);
  for (std::size_t k = 0; k < params.size(); ++k) {
    double* p = params[k].data();
    double* m = state.m[k].data();
    double* v = state.v[k].data();
    const double* g = grads[k].data();
    for (std::size_t i = 0; i < params[k].size(); ++i) {
      m[i] = h.beta1 * m[i] + (1.0 - h.beta1) * g[i];
      v[i] = h.beta2 * v[i] + (1.0 - h.beta2) * g[i] * g[i];
      const double m_hat = m[i] / corr1;
      const double v_hat = v[i] / corr2;
      p[i] -= h.lr * m_hat / (std::sqrt(v_hat) + h.eps);
    }
  }
}

DataSplit stratified_split(std::span<const int> labels, const SplitRatios& ratios, std::uint64_t seed) {
  const double total = ratios.train + ratios.val + ratios.test;
  if (ratios.train < 0 || ratios.val < 0 || ratios.test < 0 || std::abs(total - 1.0) > 1e-9) {
    throw Error(ErrorKind::BadConfig, "split ratios must be non-negative and sum to 1");
  }
  DataSplit split;
  std::mt19937_64 rng(seed);
  for (int cls : {0, 1}) {
    std::vector<std::size_t> members;
    for (std::size_t i = 0; i < labels.size(); ++i) {
      if ((labels[i] != 0) == (cls != 0)) members.push_back(i);
    }
    std::shuffle(members.begin(), members.end(), rng);
    const double n = static_cast<double>(members.size());
    const auto n_val = static_cast<std::size_t>(std::llround(ratios.val * n));
    const auto n_test = static_cast<std::size_t>(std::llround(ratios.test * n));
    if (n_val < 1 || n_test < 1 || n_val + n_test >= members.size()) {
      throw Error(ErrorKind::ClassTooSmall, "class " + std::to_string(cls) + " with " +
                                                std::to_string(members.size()) +
                                                " samples cannot fill train/val/test with at least one each");
    }
    const auto val_end = members.begin() + static_cast<std::ptrdiff_t>(n_val);
    const auto test_end = val_end + static_cast<std::ptrdiff_t>(n_test);
    split.val.insert(split.val.end(), members.begin(), val_end);
    split.test.insert(split.test.end(), val_end, test_end);
    split.train.insert(split.train.end(), test_end, members.end());
  }
  for (auto* part : {&split.train, &split.val, &split.test}) std::sort(part->begin(), part->end());
  return split;
}

}  // namespace ofa

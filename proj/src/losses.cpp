// Copyright 2026 The OFA3D Authors
// SPDX-License-Identifier: Apache-2.0

#include "ofa/losses.hpp"

#include <algorithm>
#include <cmath>
#include <set>

#include "ofa/error.hpp"

namespace ofa {

std::string to_string(LayerPreset preset) {
  switch (preset) {
    case LayerPreset::First: return "first";
    case LayerPreset::FirstLast: return "first+last";
    case LayerPreset::FirstMiddleLast: return "first+middle+last";
  }
  return "?";
}

LayerPreset parse_layer_preset(const std::string& name) {
  if (name == "first") return LayerPreset::First;
  if (name == "first+last") return LayerPreset::FirstLast;
  if (name == "first+middle+last") return LayerPreset::FirstMiddleLast;
  throw Error(ErrorKind::BadConfig, "unknown layer preset '" + name + "'");
}

OfaLayerSelection::OfaLayerSelection(std::vector<std::size_t> layers, std::size_t num_layers)
    : layers_(std::move(layers)) {
  std::set<std::size_t> seen;
  for (auto l : layers_) {
    if (l >= num_layers) {
      throw Error(ErrorKind::BadLayer, "layer " + std::to_string(l) + " outside [0, " + std::to_string(num_layers) + ")");
    }
    if (!seen.insert(l).second) throw Error(ErrorKind::BadLayer, "duplicate layer " + std::to_string(l));
  }
}

OfaLayerSelection OfaLayerSelection::from_preset(LayerPreset preset, std::size_t num_layers) {
  if (num_layers == 0) throw Error(ErrorKind::BadLayer, "model has no layers");
  const std::size_t last = num_layers - 1;
  const std::size_t middle = (num_layers - 1) / 2;
  std::vector<std::size_t> layers{0};
  if (preset == LayerPreset::FirstMiddleLast) layers.push_back(middle);
  if (preset != LayerPreset::First) layers.push_back(last);
  // Collapse coincident indices on very shallow models.
  layers.erase(std::unique(layers.begin(), layers.end()), layers.end());
  return OfaLayerSelection(std::move(layers), num_layers);
}

std::string to_string(HeadAggregation agg) { return agg == HeadAggregation::Mean ? "mean" : "per_head"; }

HeadAggregation parse_head_aggregation(const std::string& name) {
  if (name == "mean") return HeadAggregation::Mean;
  if (name == "per_head") return HeadAggregation::PerHead;
  throw Error(ErrorKind::BadConfig, "unknown head aggregation '" + name + "'");
}

nlohmann::json loss_log_line(std::size_t step, const LossBreakdown& b) {
  nlohmann::json per_layer = nlohmann::json::object();
  for (const auto& [layer, v] : b.l_ofa_per_layer) per_layer[std::to_string(layer)] = v;
  return {{"step", step}, {"l_cls", b.l_classification}, {"l_ofa", per_layer}, {"alpha", b.alpha},
          {"l_final", b.l_final}};
}

namespace {

void check_sizes(std::size_t rows, std::size_t cols, const OpamTarget& target) {
  if (rows != cols || rows != target.n() + 1) {
    throw Error(ErrorKind::SizeMismatch, "attention " + std::to_string(rows) + "x" + std::to_string(cols) +
                                             " vs target N=" + std::to_string(target.n()));
  }
}

}  // namespace

Var ofa_loss(const Var& attention, const OpamTarget& target) {
  check_sizes(attention.rows(), attention.cols(), target);
  const std::size_t n = target.n();
  Var patch_block = diff::slice(attention, 1, n, 1, n);
  Var goal = attention.tape()->constant(Tensor(n, n, std::vector<double>(target.values().begin(), target.values().end())));
  return diff::mse(patch_block, goal);
}

double ofa_loss(const Tensor& attention, const OpamTarget& target) {
  check_sizes(attention.rows(), attention.cols(), target);
  const std::size_t n = target.n();
  double s = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < n; ++j) {
      const double d = target.at(i, j) - attention(i + 1, j + 1);
      s += d * d;
    }
  }
  return s / static_cast<double>(n * n);
}

Var classification_loss(const Var& logit, int label) { return diff::bce_with_logits(logit, label ? 1.0 : 0.0); }

double classification_loss(double z, int label) {
  const double y = label ? 1.0 : 0.0;
  return std::max(z, 0.0) - y * z + std::log1p(std::exp(-std::abs(z)));
}

LossBreakdown final_loss(double l_classification, const std::map<std::size_t, double>& l_ofa_per_layer, double alpha) {
  if (!(alpha >= 0.0)) throw Error(ErrorKind::BadConfig, "alpha must be non-negative");
  if (alpha > 0.0 && l_ofa_per_layer.empty()) {
    throw Error(ErrorKind::EmptySelection, "alpha > 0 requires at least one supervised layer");
  }
  LossBreakdown b;
  b.l_classification = l_classification;
  b.l_ofa_per_layer = l_ofa_per_layer;
  for (const auto& [layer, v] : l_ofa_per_layer) b.l_ofa_total += v;
  b.alpha = alpha;
  b.l_final = l_classification + alpha * b.l_ofa_total;
  return b;
}

SampleObjective composite_loss(const VitGraph& graph, int label, const OpamTarget* target,
                               const ObjectiveOptions& options) {
  SampleObjective out;
  Var cls = classification_loss(graph.logit, label);
  std::map<std::size_t, double> per_layer;
  if (options.alpha == 0.0) {
    out.l_final = cls;
    out.breakdown = final_loss(cls.item(), per_layer, 0.0);
    return out;
  }
  if (options.selection.empty()) throw Error(ErrorKind::EmptySelection, "alpha > 0 requires at least one supervised layer");
  if (target == nullptr) throw Error(ErrorKind::MissingMask, "alpha > 0 requires an attention target");

  Var ofa_total;
  for (auto layer : options.selection.layers()) {
    if (layer >= graph.attention.size()) throw Error(ErrorKind::BadLayer, "layer " + std::to_string(layer));
    const auto& heads = graph.attention[layer];
    Var term;
    if (options.heads == HeadAggregation::Mean) {
      term = ofa_loss(mean_heads(heads), *target);
    } else {
      Var acc = ofa_loss(heads[0], *target);
      for (std::size_t h = 1; h < heads.size(); ++h) acc = diff::add(acc, ofa_loss(heads[h], *target));
      term = diff::scale(acc, 1.0 / static_cast<double>(heads.size()));
    }
    per_layer[layer] = term.item();
    ofa_total = ofa_total.valid() ? diff::add(ofa_total, term) : term;
  }
  out.l_final = diff::add(cls, diff::scale(ofa_total, options.alpha));
  out.breakdown = final_loss(cls.item(), per_layer, options.alpha);
  return out;
}

}  // namespace ofa

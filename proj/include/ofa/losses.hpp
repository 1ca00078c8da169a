// Copyright 2026 The OFA3D Authors
// SPDX-License-Identifier: Apache-2.0
//
// Organ-focused attention loss, classification loss and their weighted sum.

#pragma once

#include <cstddef>
#include <map>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "ofa/diffcore.hpp"
#include "ofa/opam.hpp"
#include "ofa/vit3d.hpp"

namespace ofa {

enum class LayerPreset { First, FirstLast, FirstMiddleLast };

/// "first", "first+last", "first+middle+last".
std::string to_string(LayerPreset preset);
LayerPreset parse_layer_preset(const std::string& name);

/// Ordered, unique layer indices that receive attention supervision.
class OfaLayerSelection {
 public:
  OfaLayerSelection() = default;
  /// Throws BadLayer on duplicates or indices outside [0, layers).
  OfaLayerSelection(std::vector<std::size_t> layers, std::size_t num_layers);

  /// middle = floor((L - 1) / 2).
  static OfaLayerSelection from_preset(LayerPreset preset, std::size_t num_layers);

  const std::vector<std::size_t>& layers() const noexcept { return layers_; }
  bool empty() const noexcept { return layers_.empty(); }

 private:
  std::vector<std::size_t> layers_;
};

/// How a layer's heads are reduced before comparison with the target.
enum class HeadAggregation { Mean, PerHead };
std::string to_string(HeadAggregation agg);
HeadAggregation parse_head_aggregation(const std::string& name);

struct LossBreakdown {
  double l_classification = 0.0;
  std::map<std::size_t, double> l_ofa_per_layer;
  double l_ofa_total = 0.0;
  double alpha = 0.0;
  double l_final = 0.0;
};

/// {step, l_cls, l_ofa: {layer: value}, alpha, l_final}
nlohmann::json loss_log_line(std::size_t step, const LossBreakdown& b);

/// Mean squared error between the patch-patch block (rows and columns 1..N)
/// of an (N+1)x(N+1) attention matrix and the N x N target. Rows are not
/// renormalised after dropping CLS. Throws SizeMismatch.
Var ofa_loss(const Var& attention, const OpamTarget& target);
double ofa_loss(const Tensor& attention, const OpamTarget& target);

/// Binary cross-entropy with logits.
Var classification_loss(const Var& logit, int label);
double classification_loss(double logit, int label);

/// l_final = l_cls + alpha * sum of the per-layer OFA losses.
/// Throws EmptySelection when alpha > 0 and no layer is supplied.
LossBreakdown final_loss(double l_classification, const std::map<std::size_t, double>& l_ofa_per_layer, double alpha);

struct ObjectiveOptions {
  double alpha = 0.0;
  OfaLayerSelection selection;
  HeadAggregation heads = HeadAggregation::Mean;
};

struct SampleObjective {
  Var l_final;
  LossBreakdown breakdown;
};

/// Builds the composite objective for one forward graph. With alpha == 0 the
/// attention terms are not recorded at all and `target` may be null.
SampleObjective composite_loss(const VitGraph& graph, int label, const OpamTarget* target,
                               const ObjectiveOptions& options);

}  // namespace ofa

// Copyright 2026 The OFA3D Authors
// SPDX-License-Identifier: Apache-2.0
//
// 3D vision transformer classifier. Patches are flattened in PatchGrid order,
// projected, prefixed by a CLS token and run through pre-norm blocks. Every
// layer's post-softmax attention is exposed for supervision and rollout.

#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "ofa/diffcore.hpp"
#include "ofa/volgrid.hpp"

namespace ofa {

using diff::Tensor;
using diff::Var;

struct VitConfig {
  Dims3 input_dims{24, 24, 24};
  Dims3 patch_size{8, 8, 8};
  std::size_t embed_dim = 64;
  std::size_t layers = 4;
  std::size_t heads = 4;
  std::size_t mlp_ratio = 4;
  std::size_t n_classes = 1;
  std::uint64_t seed = 0;

  /// Throws BadConfig.
  void validate() const;

  std::size_t head_dim() const { return embed_dim / heads; }
  std::size_t num_patches() const { return partition(input_dims, patch_size).size(); }
  std::size_t num_tokens() const { return num_patches() + 1; }
  std::size_t patch_voxels() const { return patch_size.voxels(); }
  std::size_t mlp_dim() const { return embed_dim * mlp_ratio; }

  /// 96^3 input, 16^3 patches, 12 layers x 12 heads, width 768.
  static VitConfig paper_scale();
  /// 24^3 input, 8^3 patches, 4 layers x 4 heads, width 64.
  static VitConfig toy_scale();

  friend bool operator==(const VitConfig&, const VitConfig&) = default;
};

void to_json(nlohmann::json& j, const VitConfig& c);
void from_json(const nlohmann::json& j, VitConfig& c);

/// Learnable tensors in a fixed order; see param_layout().
struct VitParams {
  VitConfig config;
  std::vector<std::string> names;
  std::vector<Tensor> tensors;

  std::size_t size() const noexcept { return tensors.size(); }
  std::size_t index_of(const std::string& name) const;
  Tensor& get(const std::string& name) { return tensors[index_of(name)]; }
  const Tensor& get(const std::string& name) const { return tensors[index_of(name)]; }
  std::size_t scalar_count() const;

  friend bool operator==(const VitParams&, const VitParams&) = default;
};

struct ParamSpec {
  std::string name;
  std::size_t rows;
  std::size_t cols;
};

/// Names and shapes in storage order: patch_embed.{w,b}, cls, pos, then per
/// layer ln1.{g,b}, {q,k,v,o}.{w,b}, ln2.{g,b}, mlp.fc1.{w,b}, mlp.fc2.{w,b},
/// then norm.{g,b}, head.{w,b}.
std::vector<ParamSpec> param_layout(const VitConfig& config);

/// Index of the named tensor of a layer, e.g. layer_param_index(cfg, 2, "q.w").
std::size_t layer_param_index(const VitConfig& config, std::size_t layer, const std::string& suffix);

/// Truncated-normal(0, 0.02) weights, zero biases, unit layer-norm gains.
/// Deterministic in config.seed.
VitParams init_params(const VitConfig& config);

/// [N+1][H] matrices of size (N+1)x(N+1); token 0 is CLS.
struct AttentionStack {
  std::size_t tokens = 0;
  std::vector<std::vector<Tensor>> layers;

  std::size_t num_layers() const noexcept { return layers.size(); }
};

/// Elementwise mean over heads of one layer. Throws BadLayer.
Tensor mean_head_attention(const AttentionStack& attn, std::size_t layer);

/// Patch voxels flattened row-wise in PatchGrid order, z/y/x inside a patch,
/// after standardising the whole volume to zero mean and unit variance.
Tensor tokenize(const Volume& volume, const PatchGrid& grid);

/// Differentiable forward on a tape.
struct VitGraph {
  Var logit;
  /// [layer][head]
  std::vector<std::vector<Var>> attention;
};

std::vector<Var> bind_params(diff::Tape& tape, const VitParams& params, bool requires_grad);
VitGraph forward_graph(diff::Tape& tape, const VitConfig& config, std::span<const Var> params, const Tensor& tokens);

/// Differentiable mean over a layer's heads.
Var mean_heads(std::span<const Var> heads);

struct Prediction {
  double logit = 0.0;
  AttentionStack attention;
};

/// Inference path: needs only the volume. Throws DimMismatch.
Prediction forward(const VitParams& params, const Volume& volume);

/// Patch-token embeddings before CLS and positional terms, [N, D].
Tensor patch_embeddings(const VitParams& params, const Volume& volume);

double sigmoid(double z);

}  // namespace ofa

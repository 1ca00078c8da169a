// Copyright 2026 The OFA3D Authors
// SPDX-License-Identifier: Apache-2.0

#include "ofa/vit3d.hpp"

#include <algorithm>
#include <cmath>
#include <random>

#include "ofa/error.hpp"

namespace ofa {

namespace {

constexpr std::size_t kGlobalParams = 4;    // patch_embed.w, patch_embed.b, cls, pos
constexpr std::size_t kParamsPerLayer = 16;
constexpr double kInitStd = 0.02;
constexpr double kLayerNormEps = 1e-5;

const char* const kLayerSuffixes[kParamsPerLayer] = {"ln1.g", "ln1.b", "q.w",       "q.b",       "k.w",     "k.b",
                                                     "v.w",   "v.b",   "o.w",       "o.b",       "ln2.g",   "ln2.b",
                                                     "mlp.fc1.w", "mlp.fc1.b", "mlp.fc2.w", "mlp.fc2.b"};

enum LayerSlot : std::size_t {
  kLn1G, kLn1B, kQW, kQB, kKW, kKB, kVW, kVB, kOW, kOB, kLn2G, kLn2B, kFc1W, kFc1B, kFc2W, kFc2B
};

}  // namespace

// ---------------------------------------------------------------------------
// Config

void VitConfig::validate() const {
  if (embed_dim == 0 || heads == 0 || layers == 0 || mlp_ratio == 0) {
    throw Error(ErrorKind::BadConfig, "embed_dim, heads, layers and mlp_ratio must be positive");
  }
  if (embed_dim % heads != 0) {
    throw Error(ErrorKind::BadConfig, "embed_dim " + std::to_string(embed_dim) + " not divisible by " +
                                          std::to_string(heads) + " heads");
  }
  if (n_classes != 1) throw Error(ErrorKind::BadConfig, "only a single binary logit is supported");
  try {
    (void)partition(input_dims, patch_size);
  } catch (const Error& e) {
    throw Error(ErrorKind::BadConfig, e.what());
  }
}

VitConfig VitConfig::paper_scale() {
  VitConfig c;
  c.input_dims = {96, 96, 96};
  c.patch_size = {16, 16, 16};
  c.embed_dim = 768;
  c.layers = 12;
  c.heads = 12;
  return c;
}

VitConfig VitConfig::toy_scale() { return VitConfig{}; }

void to_json(nlohmann::json& j, const VitConfig& c) {
  j = nlohmann::json{{"input_dims", {c.input_dims.d, c.input_dims.h, c.input_dims.w}},
                     {"patch_size", {c.patch_size.d, c.patch_size.h, c.patch_size.w}},
                     {"embed_dim", c.embed_dim},
                     {"layers", c.layers},
                     {"heads", c.heads},
                     {"mlp_ratio", c.mlp_ratio},
                     {"n_classes", c.n_classes},
                     {"seed", c.seed}};
}

void from_json(const nlohmann::json& j, VitConfig& c) {
  auto dims = [](const nlohmann::json& a) {
    if (a.is_number_integer()) return Dims3{a.get<std::int64_t>(), a.get<std::int64_t>(), a.get<std::int64_t>()};
    if (!a.is_array() || a.size() != 3) throw Error(ErrorKind::BadConfig, "dims must be an integer or [d,h,w]");
    return Dims3{a[0].get<std::int64_t>(), a[1].get<std::int64_t>(), a[2].get<std::int64_t>()};
  };
  VitConfig d;
  c.input_dims = j.contains("input_dims") ? dims(j.at("input_dims")) : d.input_dims;
  c.patch_size = j.contains("patch_size") ? dims(j.at("patch_size")) : d.patch_size;
  c.embed_dim = j.value("embed_dim", d.embed_dim);
  c.layers = j.value("layers", d.layers);
  c.heads = j.value("heads", d.heads);
  c.mlp_ratio = j.value("mlp_ratio", d.mlp_ratio);
  c.n_classes = j.value("n_classes", d.n_classes);
  c.seed = j.value("seed", d.seed);
}

// ---------------------------------------------------------------------------
// Parameters

std::vector<ParamSpec> param_layout(const VitConfig& config) {
  config.validate();
  const std::size_t dim = config.embed_dim;
  const std::size_t mlp = config.mlp_dim();
  std::vector<ParamSpec> specs{{"patch_embed.w", config.patch_voxels(), dim},
                               {"patch_embed.b", 1, dim},
                               {"cls", 1, dim},
                               {"pos", config.num_tokens(), dim}};
  for (std::size_t l = 0; l < config.layers; ++l) {
    const std::string p = "layers." + std::to_string(l) + ".";
    for (std::size_t s = 0; s < kParamsPerLayer; ++s) {
      std::size_t rows = 1, cols = dim;
      switch (s) {
        case kQW: case kKW: case kVW: case kOW: rows = dim; break;
        case kFc1W: rows = dim; cols = mlp; break;
        case kFc1B: cols = mlp; break;
        case kFc2W: rows = mlp; break;
        default: break;
      }
      specs.push_back({p + kLayerSuffixes[s], rows, cols});
    }
  }
  specs.push_back({"norm.g", 1, dim});
  specs.push_back({"norm.b", 1, dim});
  specs.push_back({"head.w", dim, 1});
  specs.push_back({"head.b", 1, 1});
  return specs;
}

std::size_t layer_param_index(const VitConfig& config, std::size_t layer, const std::string& suffix) {
  if (layer >= config.layers) throw Error(ErrorKind::BadLayer, "layer " + std::to_string(layer));
  for (std::size_t s = 0; s < kParamsPerLayer; ++s) {
    if (suffix == kLayerSuffixes[s]) return kGlobalParams + layer * kParamsPerLayer + s;
  }
  throw Error(ErrorKind::BadConfig, "unknown layer parameter " + suffix);
}

std::size_t VitParams::index_of(const std::string& name) const {
  const auto it = std::find(names.begin(), names.end(), name);
  if (it == names.end()) throw Error(ErrorKind::BadConfig, "no parameter named " + name);
  return static_cast<std::size_t>(it - names.begin());
}

std::size_t VitParams::scalar_count() const {
  std::size_t n = 0;
  for (const auto& t : tensors) n += t.size();
  return n;
}

VitParams init_params(const VitConfig& config) {
  VitParams params;
  params.config = config;
  std::mt19937_64 rng(config.seed);
  std::normal_distribution<double> normal(0.0, kInitStd);
  auto trunc_normal = [&] {
    for (;;) {
      const double v = normal(rng);
      if (std::abs(v) <= 2.0 * kInitStd) return v;
    }
  };
  for (const auto& spec : param_layout(config)) {
    Tensor t(spec.rows, spec.cols);
    const auto& n = spec.name;
    const bool is_gain = n.ends_with(".g");
    const bool is_bias = n.ends_with(".b");
    if (is_gain) {
      std::fill(t.values().begin(), t.values().end(), 1.0);
    } else if (!is_bias) {
      for (auto& v : t.values()) v = trunc_normal();
    }
    params.names.push_back(n);
    params.tensors.push_back(std::move(t));
  }
  return params;
}

// ---------------------------------------------------------------------------
// Attention helpers

Tensor mean_head_attention(const AttentionStack& attn, std::size_t layer) {
  if (layer >= attn.layers.size()) {
    throw Error(ErrorKind::BadLayer, "layer " + std::to_string(layer) + " of " + std::to_string(attn.layers.size()));
  }
  const auto& heads = attn.layers[layer];
  Tensor out(heads.front().rows(), heads.front().cols());
  for (const auto& h : heads) {
    for (std::size_t i = 0; i < out.size(); ++i) out[i] += h[i];
  }
  const double inv = 1.0 / static_cast<double>(heads.size());
  for (auto& v : out.values()) v *= inv;
  return out;
}

Var mean_heads(std::span<const Var> heads) {
  if (heads.empty()) throw Error(ErrorKind::BadLayer, "no heads to average");
  if (heads.size() == 1) return heads[0];
  Var acc = heads[0];
  for (std::size_t h = 1; h < heads.size(); ++h) acc = diff::add(acc, heads[h]);
  return diff::scale(acc, 1.0 / static_cast<double>(heads.size()));
}

// ---------------------------------------------------------------------------
// Forward

Tensor tokenize(const Volume& volume, const PatchGrid& grid) {
  if (volume.dims() != grid.volume_dims()) throw Error(ErrorKind::DimMismatch, "volume does not match patch grid");
  const std::size_t n = grid.size();
  const std::size_t p = grid.voxels_per_patch();
  double mean = 0.0;
  for (float v : volume.data()) mean += v;
  mean /= static_cast<double>(volume.data().size());
  double var = 0.0;
  for (float v : volume.data()) var += (v - mean) * (v - mean);
  const double inv_std = 1.0 / std::sqrt(var / static_cast<double>(volume.data().size()) + 1e-12);

  Tensor tokens(n, p);
  for (std::size_t i = 0; i < n; ++i) {
    const Box3 box = grid.voxel_box(i);
    double* row = tokens.data() + i * p;
    std::size_t c = 0;
    for (auto z = box.lo[0]; z < box.hi[0]; ++z) {
      for (auto y = box.lo[1]; y < box.hi[1]; ++y) {
        for (auto x = box.lo[2]; x < box.hi[2]; ++x) row[c++] = (volume.at(z, y, x) - mean) * inv_std;
      }
    }
  }
  return tokens;
}

std::vector<Var> bind_params(diff::Tape& tape, const VitParams& params, bool requires_grad) {
  std::vector<Var> out;
  out.reserve(params.tensors.size());
  for (const auto& t : params.tensors) out.push_back(tape.leaf(t, requires_grad));
  return out;
}

VitGraph forward_graph(diff::Tape& tape, const VitConfig& config, std::span<const Var> params, const Tensor& tokens) {
  using namespace diff;
  const std::size_t n_patches = config.num_patches();
  if (tokens.rows() != n_patches || tokens.cols() != config.patch_voxels()) {
    throw Error(ErrorKind::DimMismatch, "token matrix " + tokens.shape_str() + " does not match config");
  }
  if (params.size() != kGlobalParams + config.layers * kParamsPerLayer + 4) {
    throw Error(ErrorKind::SizeMismatch, "parameter list does not match config");
  }
  const std::size_t dh = config.head_dim();
  const double score_scale = 1.0 / std::sqrt(static_cast<double>(dh));

  Var x = tape.constant(tokens);
  Var emb = add_row_bias(matmul(x, params[0]), params[1]);
  Var h = add(concat_rows(params[2], emb), params[3]);

  VitGraph graph;
  graph.attention.resize(config.layers);
  for (std::size_t l = 0; l < config.layers; ++l) {
    const auto p = params.subspan(kGlobalParams + l * kParamsPerLayer, kParamsPerLayer);
    Var a = layer_norm(h, p[kLn1G], p[kLn1B], kLayerNormEps);
    Var q = add_row_bias(matmul(a, p[kQW]), p[kQB]);
    Var k = add_row_bias(matmul(a, p[kKW]), p[kKB]);
    Var v = add_row_bias(matmul(a, p[kVW]), p[kVB]);
    std::vector<Var> head_out;
    head_out.reserve(config.heads);
    for (std::size_t hd = 0; hd < config.heads; ++hd) {
      const std::size_t c0 = hd * dh;
      Var qh = slice(q, 0, q.rows(), c0, dh);
      Var kh = slice(k, 0, k.rows(), c0, dh);
      Var vh = slice(v, 0, v.rows(), c0, dh);
      Var att = row_softmax(scale(matmul(qh, transpose(kh)), score_scale));
      graph.attention[l].push_back(att);
      head_out.push_back(matmul(att, vh));
    }
    Var merged = config.heads == 1 ? head_out[0] : concat_cols(head_out);
    h = add(h, add_row_bias(matmul(merged, p[kOW]), p[kOB]));
    Var b = layer_norm(h, p[kLn2G], p[kLn2B], kLayerNormEps);
    Var mlp = add_row_bias(matmul(gelu(add_row_bias(matmul(b, p[kFc1W]), p[kFc1B])), p[kFc2W]), p[kFc2B]);
    h = add(h, mlp);
  }
  const auto tail = params.subspan(kGlobalParams + config.layers * kParamsPerLayer);
  Var cls = slice(h, 0, 1, 0, config.embed_dim);
  Var normed = layer_norm(cls, tail[0], tail[1], kLayerNormEps);
  graph.logit = add(matmul(normed, tail[2]), tail[3]);
  return graph;
}

Prediction forward(const VitParams& params, const Volume& volume) {
  const auto& cfg = params.config;
  if (volume.dims() != cfg.input_dims) throw Error(ErrorKind::DimMismatch, "volume dims do not match the model input");
  const PatchGrid grid = partition(cfg.input_dims, cfg.patch_size);
  diff::Tape tape;
  const auto vars = bind_params(tape, params, false);
  const auto graph = forward_graph(tape, cfg, vars, tokenize(volume, grid));
  Prediction pred;
  pred.logit = graph.logit.item();
  pred.attention.tokens = cfg.num_tokens();
  for (const auto& layer : graph.attention) {
    auto& heads = pred.attention.layers.emplace_back();
    for (const auto& a : layer) heads.push_back(a.value());
  }
  return pred;
}

Tensor patch_embeddings(const VitParams& params, const Volume& volume) {
  const auto& cfg = params.config;
  if (volume.dims() != cfg.input_dims) throw Error(ErrorKind::DimMismatch, "volume dims do not match the model input");
  Tensor emb = diff::matmul(tokenize(volume, partition(cfg.input_dims, cfg.patch_size)), params.tensors[0]);
  const Tensor& bias = params.tensors[1];
  for (std::size_t i = 0; i < emb.rows(); ++i) {
    for (std::size_t j = 0; j < emb.cols(); ++j) emb(i, j) += bias[j];
  }
  return emb;
}

double sigmoid(double z) { return z >= 0 ? 1.0 / (1.0 + std::exp(-z)) : std::exp(z) / (1.0 + std::exp(z)); }

}  // namespace ofa

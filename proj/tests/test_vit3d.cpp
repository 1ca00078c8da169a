// Copyright 2026 The OFA3D Authors
// SPDX-License-Identifier: Apache-2.0

#include <algorithm>
#include <cmath>
#include <random>

#include <doctest.h>

#include "ofa/error.hpp"
#include "ofa/vit3d.hpp"
#include "test_support.hpp"

using namespace ofa;

TEST_SUITE("vit3d") {

TEST_CASE("config arithmetic") {
  const auto toy = VitConfig::toy_scale();
  CHECK(toy.head_dim() == 16);
  CHECK(toy.num_patches() == 27);
  CHECK(toy.num_tokens() == 28);
  const auto big = VitConfig::paper_scale();
  CHECK(big.num_patches() == 216);
  CHECK(big.layers == 12);
  CHECK(big.heads == 12);
  CHECK(big.embed_dim == 768);
  VitConfig bad = toy;
  bad.heads = 3;
  CHECK_THROWS_AS(bad.validate(), Error);
  nlohmann::json j = toy;
  CHECK(j.get<VitConfig>() == toy);
}

TEST_CASE("parameter layout") {
  const auto cfg = VitConfig::toy_scale();
  const auto specs = param_layout(cfg);
  CHECK(specs.size() == 4 + 16 * cfg.layers + 4);
  CHECK(specs[0].name == "patch_embed.w");
  CHECK(specs[0].rows == 512);
  CHECK(specs[0].cols == 64);
  CHECK(specs[2].name == "cls");
  CHECK(specs[3].name == "pos");
  CHECK(specs[3].rows == cfg.num_tokens());
  CHECK(specs[layer_param_index(cfg, 2, "q.w")].name == "layers.2.q.w");
  CHECK(specs.back().name == "head.b");
  const auto p = init_params(cfg);
  REQUIRE(p.size() == specs.size());
  std::size_t total = 0;
  for (std::size_t i = 0; i < specs.size(); ++i) {
    CHECK(p.tensors[i].rows() == specs[i].rows);
    CHECK(p.tensors[i].cols() == specs[i].cols);
    total += specs[i].rows * specs[i].cols;
  }
  CHECK(p.scalar_count() == total);
  CHECK_THROWS_AS(layer_param_index(cfg, 4, "q.w"), Error);
}

TEST_CASE("initialisation is seeded") {
  auto cfg = VitConfig::toy_scale();
  const auto a = init_params(cfg), b = init_params(cfg);
  CHECK(a == b);
  cfg.seed = 1;
  const auto c = init_params(cfg);
  CHECK(a.tensors != c.tensors);
  for (double g : a.get("layers.0.ln1.g").values()) CHECK(g == 1.0);
  for (double w : a.get("layers.1.q.b").values()) CHECK(w == 0.0);
  for (double w : a.get("layers.1.q.w").values()) CHECK(std::abs(w) <= 0.04 + 1e-12);
}

TEST_CASE("attention maps are row stochastic and sized by the grid") {
  std::mt19937_64 rng(21);
  const auto cfg = VitConfig::toy_scale();
  const auto params = init_params(cfg);
  const auto pred = forward(params, ofa::testing::random_volume(cfg.input_dims, rng));
  REQUIRE(pred.attention.num_layers() == cfg.layers);
  for (const auto& layer : pred.attention.layers) {
    REQUIRE(layer.size() == cfg.heads);
    for (const auto& a : layer) {
      CHECK(a.rows() == 28);
      CHECK(a.cols() == 28);
      for (std::size_t r = 0; r < a.rows(); ++r) {
        double s = 0.0;
        for (std::size_t c = 0; c < a.cols(); ++c) s += a(r, c);
        CHECK(std::abs(s - 1.0) < 1e-6);
      }
    }
  }
}

TEST_CASE("zero queries and keys give uniform attention") {
  std::mt19937_64 rng(22);
  const auto cfg = VitConfig::toy_scale();
  auto params = init_params(cfg);
  for (std::size_t l = 0; l < cfg.layers; ++l)
    for (const char* s : {"q.w", "q.b", "k.w", "k.b"})
      for (auto& x : params.tensors[layer_param_index(cfg, l, s)].values()) x = 0.0;
  const auto pred = forward(params, ofa::testing::random_volume(cfg.input_dims, rng));
  for (const auto& layer : pred.attention.layers)
    for (const auto& a : layer)
      for (double v : a.values()) CHECK(std::abs(v - 1.0 / 28.0) < 1e-15);
}

TEST_CASE("head averaging") {
  AttentionStack one;
  one.tokens = 2;
  one.layers = {{Tensor(2, 2, std::vector<double>{0.3, 0.7, 0.6, 0.4})}};
  CHECK(mean_head_attention(one, 0) == one.layers[0][0]);
  AttentionStack same = one;
  same.layers[0].push_back(one.layers[0][0]);
  same.layers[0].push_back(one.layers[0][0]);
  const Tensor avg = mean_head_attention(same, 0);
  for (std::size_t i = 0; i < avg.size(); ++i) CHECK(avg[i] == doctest::Approx(one.layers[0][0][i]).epsilon(1e-15));
  AttentionStack two;
  two.tokens = 2;
  two.layers = {{Tensor(2, 2, std::vector<double>{1, 0, 0, 1}), Tensor(2, 2, std::vector<double>{0, 1, 1, 0})}};
  const auto m = mean_head_attention(two, 0);
  CHECK(m(0, 0) == 0.5);
  CHECK(m(0, 1) == 0.5);
  CHECK_THROWS_AS(mean_head_attention(two, 1), Error);
}

TEST_CASE("inference and training graphs agree") {
  std::mt19937_64 rng(23);
  const auto cfg = VitConfig::toy_scale();
  const auto params = init_params(cfg);
  const auto vol = ofa::testing::random_volume(cfg.input_dims, rng);
  const auto p1 = forward(params, vol);
  const auto p2 = forward(params, vol);
  CHECK(p1.logit == p2.logit);
  diff::Tape tape;
  const auto vars = bind_params(tape, params, true);
  const auto g = forward_graph(tape, cfg, vars, tokenize(vol, partition(cfg.input_dims, cfg.patch_size)));
  CHECK(g.logit.item() == p1.logit);
  for (std::size_t l = 0; l < cfg.layers; ++l) {
    CHECK(g.attention[l][0].value() == p1.attention.layers[l][0]);
    const Var heads = mean_heads(g.attention[l]);
    const Tensor ref = mean_head_attention(p1.attention, l);
    for (std::size_t i = 0; i < ref.size(); ++i) CHECK(std::abs(heads.value()[i] - ref[i]) < 1e-15);
  }
  CHECK_THROWS_AS(forward(params, Volume({24, 24, 16})), Error);
}

TEST_CASE("tokens follow patch order and are standardised") {
  const Dims3 d{8, 8, 8};
  const auto grid = partition(d, {4, 4, 4});
  Volume vol(d);
  for (std::int64_t z = 0; z < 8; ++z)
    for (std::int64_t y = 0; y < 8; ++y)
      for (std::int64_t x = 0; x < 8; ++x) vol.at(z, y, x) = static_cast<float>(grid.patch_of_voxel(z, y, x) * 2 + 5);
  const Tensor t = tokenize(vol, grid);
  REQUIRE(t.rows() == 8);
  REQUIRE(t.cols() == 64);
  double sum = 0.0, sq = 0.0;
  for (double v : t.values()) {
    sum += v;
    sq += v * v;
  }
  CHECK(std::abs(sum / 512.0) < 1e-12);
  CHECK(std::abs(sq / 512.0 - 1.0) < 1e-9);
  // Patch values are 5, 7, ..., 19 with mean 12 and variance 21.
  for (std::size_t p = 0; p < 8; ++p)
    for (std::size_t c = 0; c < 64; ++c) CHECK(t(p, c) == doctest::Approx((2.0 * p + 5 - 12) / std::sqrt(21.0)));
}

TEST_CASE("a voxel only moves its own patch embedding") {
  std::mt19937_64 rng(24);
  const auto cfg = VitConfig::toy_scale();
  const auto params = init_params(cfg);
  const auto grid = partition(cfg.input_dims, cfg.patch_size);
  auto vol = ofa::testing::random_volume(cfg.input_dims, rng);
  // Keep the volume statistics fixed by swapping two voxels of the same patch.
  const Tensor before = patch_embeddings(params, vol);
  const std::size_t patch = grid.patch_of_voxel(9, 17, 3);
  REQUIRE(grid.patch_of_voxel(10, 18, 4) == patch);
  std::swap(vol.at(9, 17, 3), vol.at(10, 18, 4));
  const Tensor after = patch_embeddings(params, vol);
  for (std::size_t p = 0; p < grid.size(); ++p) {
    double diff = 0.0;
    for (std::size_t c = 0; c < after.cols(); ++c) diff = std::max(diff, std::abs(after(p, c) - before(p, c)));
    if (p == patch) {
      CHECK(diff > 1e-6);
    } else {
      CHECK(diff < 1e-12);
    }
  }
}

TEST_CASE("sigmoid is stable") {
  CHECK(sigmoid(0.0) == 0.5);
  CHECK(sigmoid(800.0) == 1.0);
  CHECK(sigmoid(-800.0) == 0.0);
  CHECK(sigmoid(2.0) == doctest::Approx(1.0 / (1.0 + std::exp(-2.0))));
}

}  // TEST_SUITE

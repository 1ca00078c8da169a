// Copyright 2026 The OFA3D Authors
// SPDX-License-Identifier: Apache-2.0

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <random>
#include <map>

#include <doctest.h>

#include "ofa/error.hpp"
#include "ofa/volgrid.hpp"
#include "test_support.hpp"

using namespace ofa;

namespace {

SegMask mask_from_blocks(Dims3 dims, const PatchGrid& grid, std::initializer_list<std::size_t> patches) {
  std::vector<std::uint8_t> v(dims.voxels(), 0);
  for (auto p : patches) {
    const Box3 b = grid.voxel_box(p);
    for (auto z = b.lo[0]; z < b.hi[0]; ++z)
      for (auto y = b.lo[1]; y < b.hi[1]; ++y)
        for (auto x = b.lo[2]; x < b.hi[2]; ++x) v[dims.index(z, y, x)] = 1;
  }
  return SegMask(dims, std::move(v), 1);
}

// Independent scan: walk every voxel and bucket its label by integer division.
std::vector<LabelSet> scan_oracle(const SegMask& mask, Dims3 patch, std::size_t min_voxels) {
  const Dims3 d = mask.dims();
  const Dims3 g{d.d / patch.d, d.h / patch.h, d.w / patch.w};
  std::vector<std::map<std::uint8_t, std::size_t>> counts(g.voxels());
  for (std::int64_t z = 0; z < d.d; ++z)
    for (std::int64_t y = 0; y < d.h; ++y)
      for (std::int64_t x = 0; x < d.w; ++x) {
        const auto l = mask.at(z, y, x);
        if (l != 0) ++counts[g.index(z / patch.d, y / patch.h, x / patch.w)][l];
      }
  std::vector<LabelSet> out(g.voxels());
  for (std::size_t p = 0; p < counts.size(); ++p)
    for (const auto& [l, c] : counts[p])
      if (c >= min_voxels) out[p].push_back(l);
  return out;
}

}  // namespace

TEST_SUITE("volgrid") {

TEST_CASE("partition counts") {
  CHECK(partition({96, 96, 96}, {16, 16, 16}).size() == 216);
  CHECK(partition({24, 24, 24}, {24, 24, 24}).size() == 1);
  const auto g = partition({24, 24, 24}, {8, 8, 8});
  CHECK(g.size() == 27);
  const Box3 b = g.voxel_box(0);
  CHECK(b.lo == std::array<std::int64_t, 3>{0, 0, 0});
  CHECK(b.hi == std::array<std::int64_t, 3>{8, 8, 8});
}

TEST_CASE("partition rejects bad geometry") {
  auto kind = [](auto&& fn) {
    try {
      fn();
    } catch (const Error& e) {
      return e.kind();
    }
    return ErrorKind::Io;
  };
  CHECK(kind([] { partition({24, 24, 24}, {0, 8, 8}); }) == ErrorKind::ZeroDim);
  CHECK(kind([] { partition({24, 24, 25}, {8, 8, 8}); }) == ErrorKind::NonDivisible);
}

TEST_CASE("patch ordering is z-block major and covers every voxel once") {
  const auto g = partition({12, 8, 16}, {4, 4, 4});
  CHECK(g.grid_dims() == Dims3{3, 2, 4});
  std::vector<int> hits(g.volume_dims().voxels(), 0);
  for (std::size_t p = 0; p < g.size(); ++p) {
    const auto blk = g.block_of(p);
    CHECK(g.patch_index(blk[0], blk[1], blk[2]) == p);
    const Box3 b = g.voxel_box(p);
    for (auto z = b.lo[0]; z < b.hi[0]; ++z)
      for (auto y = b.lo[1]; y < b.hi[1]; ++y)
        for (auto x = b.lo[2]; x < b.hi[2]; ++x) {
          ++hits[g.volume_dims().index(z, y, x)];
          CHECK(g.patch_of_voxel(z, y, x) == p);
        }
  }
  CHECK(std::all_of(hits.begin(), hits.end(), [](int h) { return h == 1; }));
  CHECK(g.block_of(1) == std::array<std::int64_t, 3>{0, 0, 1});
  CHECK(g.block_of(4) == std::array<std::int64_t, 3>{0, 1, 0});
  CHECK(g.block_of(8) == std::array<std::int64_t, 3>{1, 0, 0});
}

TEST_CASE("organ patches trivial masks") {
  const Dims3 d{24, 24, 24};
  const auto g = partition(d, {8, 8, 8});
  const SegMask zero(d, std::vector<std::uint8_t>(d.voxels(), 0), 1);
  for (const auto& s : organ_patches(zero, g)) CHECK(s.empty());
  const SegMask ones(d, std::vector<std::uint8_t>(d.voxels(), 1), 1);
  for (const auto& s : organ_patches(ones, g)) CHECK(s == LabelSet{1});
}

TEST_CASE("organ patches from two marked blocks") {
  const Dims3 d{24, 24, 24};
  const auto g = partition(d, {8, 8, 8});
  const auto mask = mask_from_blocks(d, g, {0, 3});
  const auto sets = organ_patches(mask, g);
  CHECK(sets == scan_oracle(mask, {8, 8, 8}, 1));
  for (std::size_t p = 0; p < sets.size(); ++p) CHECK(sets[p].empty() == (p != 0 && p != 3));
  CHECK(organ_patch_indices(mask, g) == std::vector<std::size_t>{0, 3});
}

TEST_CASE("organ patches match a voxel scan on random masks") {
  std::mt19937_64 rng(11);
  for (int trial = 0; trial < 30; ++trial) {
    const Dims3 d{8, 12, 16};
    const Dims3 p{4, 4, 4};
    const auto mask = ofa::testing::random_mask(d, 4, 0.01 * (trial % 5), rng);
    const auto g = partition(d, p);
    for (std::size_t mv : {1u, 2u, 3u}) CHECK(organ_patches(mask, g, mv) == scan_oracle(mask, p, mv));
  }
}

TEST_CASE("organ patches reject dimension mismatch") {
  const SegMask m({8, 8, 8}, std::vector<std::uint8_t>(512, 0), 1);
  const auto g = partition({16, 8, 8}, {8, 8, 8});
  CHECK_THROWS_AS(organ_patches(m, g), Error);
}

TEST_CASE("crop with full mask is the identity") {
  std::mt19937_64 rng(3);
  const Dims3 d{10, 12, 14};
  const auto vol = ofa::testing::random_volume(d, rng);
  const SegMask all(d, std::vector<std::uint8_t>(d.voxels(), 1), 1);
  const auto out = crop_to_organ(vol, all, 0, d);
  REQUIRE(out.dims() == d);
  double worst = 0.0;
  for (std::size_t i = 0; i < d.voxels(); ++i)
    worst = std::max(worst, static_cast<double>(std::abs(out.data()[i] - vol.data()[i])));
  CHECK(worst < 1e-6);
}

TEST_CASE("bounding box of a single voxel with margin") {
  const Dims3 d{16, 16, 16};
  std::vector<std::uint8_t> v(d.voxels(), 0);
  v[d.index(5, 5, 5)] = 1;
  const SegMask m(d, std::move(v), 1);
  const Box3 b = organ_bounding_box(m, 2);
  CHECK(b.lo == std::array<std::int64_t, 3>{3, 3, 3});
  CHECK(b.hi == std::array<std::int64_t, 3>{8, 8, 8});
  const Box3 c = organ_bounding_box(m, 10);
  CHECK(c.lo == std::array<std::int64_t, 3>{0, 0, 0});
  CHECK(c.hi == std::array<std::int64_t, 3>{16, 16, 16});
}

TEST_CASE("crop output is bracketed by the input range") {
  std::mt19937_64 rng(5);
  for (int trial = 0; trial < 10; ++trial) {
    const Dims3 d{12, 12, 12};
    const auto vol = ofa::testing::random_volume(d, rng);
    std::vector<std::uint8_t> v(d.voxels(), 0);
    std::uniform_int_distribution<int> pos(2, 9);
    const int cz = pos(rng), cy = pos(rng), cx = pos(rng);
    for (int z = cz - 2; z <= cz + 2; ++z)
      for (int y = cy - 1; y <= cy + 1; ++y)
        for (int x = cx - 2; x <= cx + 1; ++x) v[d.index(z, y, x)] = 1;
    const SegMask m(d, std::move(v), 1);
    const auto out = crop_to_organ(vol, m, 0, {8, 8, 8});
    const auto [lo, hi] = std::minmax_element(vol.data().begin(), vol.data().end());
    for (float x : out.data()) {
      CHECK(x >= *lo - 1e-6f);
      CHECK(x <= *hi + 1e-6f);
    }
  }
}

TEST_CASE("crop of an empty mask fails") {
  const Dims3 d{8, 8, 8};
  const Volume vol(d);
  const SegMask m(d, std::vector<std::uint8_t>(d.voxels(), 0), 1);
  CHECK_THROWS_AS(crop_to_organ(vol, m, 2, d), Error);
}

TEST_CASE("VVOL round trip") {
  ofa::testing::TempDir tmp("vvol");
  std::mt19937_64 rng(9);
  const Volume vol({3, 4, 5}, std::vector<float>(60, 0.0f), Spacing3{1.5, 0.75, 2.0});
  Volume rnd = ofa::testing::random_volume({3, 4, 5}, rng);
  save_volume(rnd, tmp / "a.vvol");
  CHECK(load_volume(tmp / "a.vvol") == rnd);
  save_volume(vol, tmp / "b.vvol");
  CHECK(load_volume(tmp / "b.vvol") == vol);
  const auto mask = ofa::testing::random_mask({4, 4, 4}, 3, 0.3, rng);
  save_mask(mask, tmp / "m.vvol");
  CHECK(load_mask(tmp / "m.vvol") == mask);
}

TEST_CASE("VVOL header with matching payload loads") {
  ofa::testing::TempDir tmp("vvol");
  {
    std::ofstream out(tmp / "v.vvol", std::ios::binary);
    out << "VVOL1 2 2 2 f32 1 1 1\n";
    for (int i = 0; i < 8; ++i) {
      const float f = static_cast<float>(i);
      out.write(reinterpret_cast<const char*>(&f), sizeof f);
    }
  }
  const auto v = load_volume(tmp / "v.vvol");
  CHECK(v.dims() == Dims3{2, 2, 2});
  CHECK(v.at(1, 1, 1) == 7.0f);
}

TEST_CASE("VVOL truncated payload") {
  ofa::testing::TempDir tmp("vvol");
  std::mt19937_64 rng(2);
  save_volume(ofa::testing::random_volume({4, 4, 4}, rng), tmp / "v.vvol");
  const auto full = ofa::testing::read_file(tmp / "v.vvol");
  {
    std::ofstream out(tmp / "v.vvol", std::ios::binary | std::ios::trunc);
    out.write(full.data(), static_cast<std::streamsize>(full.size() - 5));
  }
  try {
    load_volume(tmp / "v.vvol");
    FAIL("truncated file loaded");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::PayloadMismatch);
  }
}

TEST_CASE("VVOL bad header") {
  ofa::testing::TempDir tmp("vvol");
  {
    std::ofstream out(tmp / "v.vvol", std::ios::binary);
    out << "NOPE 2 2 2 f32 1 1 1\n";
  }
  try {
    load_volume(tmp / "v.vvol");
    FAIL("bad header loaded");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::BadHeader);
  }
}

}  // TEST_SUITE

// Copyright 2026 The OFA3D Authors
// SPDX-License-Identifier: Apache-2.0

#include "ofa/rollout.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>

#include "ofa/error.hpp"

namespace ofa {

RolloutMap attention_rollout(const AttentionStack& attn) {
  if (attn.layers.empty() || attn.layers.front().empty()) throw Error(ErrorKind::EmptyStack, "no attention layers");
  Tensor rollout;
  for (std::size_t l = 0; l < attn.layers.size(); ++l) {
    Tensor mixed = mean_head_attention(attn, l);
    const std::size_t n = mixed.rows();
    for (std::size_t i = 0; i < n; ++i) {
      double row_sum = 0.0;
      for (std::size_t j = 0; j < n; ++j) {
        double& v = mixed(i, j);
        v = 0.5 * (v + (i == j ? 1.0 : 0.0));
        row_sum += v;
      }
      for (std::size_t j = 0; j < n; ++j) mixed(i, j) /= row_sum;
    }
    // Later layers multiply from the left.
    rollout = l == 0 ? std::move(mixed) : diff::matmul(mixed, rollout);
  }
  RolloutMap map;
  map.cls_to_patch.assign(rollout.data() + 1, rollout.data() + rollout.cols());
  map.matrix = std::move(rollout);
  return map;
}

Volume heatmap_volume(std::span<const double> cls_to_patch, const PatchGrid& grid) {
  if (cls_to_patch.size() != grid.size()) {
    throw Error(ErrorKind::GridMismatch, std::to_string(cls_to_patch.size()) + " weights for " +
                                             std::to_string(grid.size()) + " patches");
  }
  Volume out(grid.volume_dims());
  for (std::size_t p = 0; p < grid.size(); ++p) {
    const Box3 box = grid.voxel_box(p);
    const auto v = static_cast<float>(cls_to_patch[p]);
    for (auto z = box.lo[0]; z < box.hi[0]; ++z) {
      for (auto y = box.lo[1]; y < box.hi[1]; ++y) {
        for (auto x = box.lo[2]; x < box.hi[2]; ++x) out.at(z, y, x) = v;
      }
    }
  }
  return out;
}

double organ_attention_mass(std::span<const double> cls_to_patch, std::span<const std::size_t> organ_patches) {
  double total = 0.0;
  for (double v : cls_to_patch) total += v;
  if (organ_patches.empty() || total <= 0.0) return 0.0;
  double organ = 0.0;
  for (auto p : organ_patches) {
    if (p >= cls_to_patch.size()) throw Error(ErrorKind::GridMismatch, "organ patch index out of range");
    organ += cls_to_patch[p];
  }
  return std::clamp(organ / total, 0.0, 1.0);
}

void write_pgm_slice(const Volume& volume, std::int64_t z, const std::filesystem::path& path) {
  const auto& d = volume.dims();
  if (z < 0 || z >= d.d) throw Error(ErrorKind::DimMismatch, "slice " + std::to_string(z) + " outside volume");
  const auto data = volume.data();
  const auto [lo_it, hi_it] = std::minmax_element(data.begin(), data.end());
  const double lo = *lo_it;
  const double range = *hi_it - lo;
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error(ErrorKind::Io, "cannot open " + path.string() + " for writing");
  out << "P5\n" << d.w << ' ' << d.h << "\n255\n";
  for (std::int64_t y = 0; y < d.h; ++y) {
    for (std::int64_t x = 0; x < d.w; ++x) {
      const double t = range > 0.0 ? (volume.at(z, y, x) - lo) / range : 0.0;
      out.put(static_cast<char>(static_cast<unsigned char>(std::lround(255.0 * t))));
    }
  }
  if (!out) throw Error(ErrorKind::Io, "write failed for " + path.string());
}

}  // namespace ofa

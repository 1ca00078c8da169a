// Copyright 2026 The OFA3D Authors
// SPDX-License-Identifier: Apache-2.0
//
// Attention rollout and voxel-space heatmaps.

#pragma once

#include <cstddef>
#include <filesystem>
#include <span>
#include <vector>

#include "ofa/vit3d.hpp"
#include "ofa/volgrid.hpp"

namespace ofa {

struct RolloutMap {
  /// (N+1)x(N+1) product of residual-mixed, row-renormalised layer maps.
  Tensor matrix;
  /// Row 0 (CLS), columns 1..N.
  std::vector<double> cls_to_patch;
};

/// Per layer: A~ = (mean-head A + I) / 2, rows renormalised; the rollout is
/// A~_L * ... * A~_1. Throws EmptyStack.
RolloutMap attention_rollout(const AttentionStack& attn);

/// Paints each patch's CLS weight uniformly over its voxel block.
/// Throws GridMismatch.
Volume heatmap_volume(std::span<const double> cls_to_patch, const PatchGrid& grid);
inline Volume heatmap_volume(const RolloutMap& rollout, const PatchGrid& grid) {
  return heatmap_volume(rollout.cls_to_patch, grid);
}

/// Share of CLS->patch mass that lands on the given patches.
double organ_attention_mass(std::span<const double> cls_to_patch, std::span<const std::size_t> organ_patches);
inline double organ_attention_mass(const RolloutMap& rollout, std::span<const std::size_t> organ_patches) {
  return organ_attention_mass(rollout.cls_to_patch, organ_patches);
}

/// Axial slice z as an 8-bit binary PGM (P5), min-max normalised over the
/// whole volume.
void write_pgm_slice(const Volume& volume, std::int64_t z, const std::filesystem::path& path);

}  // namespace ofa

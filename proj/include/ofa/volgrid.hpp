// Copyright 2026 The OFA3D Authors
// SPDX-License-Identifier: Apache-2.0
//
// Volume and label-mask containers, uniform 3D patch partitioning, the VVOL
// on-disk format and segmentation-based cropping.

#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

namespace ofa {

/// (depth, height, width) voxel counts, z-major.
struct Dims3 {
  std::int64_t d = 0;
  std::int64_t h = 0;
  std::int64_t w = 0;

  std::size_t voxels() const noexcept { return static_cast<std::size_t>(d * h * w); }
  std::size_t index(std::int64_t z, std::int64_t y, std::int64_t x) const noexcept {
    return static_cast<std::size_t>((z * h + y) * w + x);
  }
  friend bool operator==(const Dims3&, const Dims3&) = default;
};

/// Millimetres per voxel along (z, y, x). Metadata only.
struct Spacing3 {
  double z = 1.0;
  double y = 1.0;
  double x = 1.0;
  friend bool operator==(const Spacing3&, const Spacing3&) = default;
};

class Volume {
 public:
  Volume() = default;
  Volume(Dims3 dims, std::vector<float> data, Spacing3 spacing = {});
  /// Zero-filled volume.
  explicit Volume(Dims3 dims, Spacing3 spacing = {});

  const Dims3& dims() const noexcept { return dims_; }
  const Spacing3& spacing() const noexcept { return spacing_; }
  std::span<const float> data() const noexcept { return data_; }
  std::span<float> data() noexcept { return data_; }

  float at(std::int64_t z, std::int64_t y, std::int64_t x) const { return data_[dims_.index(z, y, x)]; }
  float& at(std::int64_t z, std::int64_t y, std::int64_t x) { return data_[dims_.index(z, y, x)]; }

  friend bool operator==(const Volume&, const Volume&) = default;

 private:
  Dims3 dims_;
  Spacing3 spacing_;
  std::vector<float> data_;
};

class SegMask {
 public:
  SegMask() = default;
  SegMask(Dims3 dims, std::vector<std::uint8_t> labels, std::uint8_t max_label = 255, Spacing3 spacing = {});

  const Dims3& dims() const noexcept { return dims_; }
  const Spacing3& spacing() const noexcept { return spacing_; }
  std::uint8_t max_label() const noexcept { return max_label_; }
  std::span<const std::uint8_t> labels() const noexcept { return labels_; }

  std::uint8_t at(std::int64_t z, std::int64_t y, std::int64_t x) const { return labels_[dims_.index(z, y, x)]; }
  bool any_nonzero() const noexcept;

  /// Compares geometry and payload; the declared max-label is not persisted.
  friend bool operator==(const SegMask& a, const SegMask& b) {
    return a.dims_ == b.dims_ && a.spacing_ == b.spacing_ && a.labels_ == b.labels_;
  }

 private:
  Dims3 dims_;
  Spacing3 spacing_;
  std::uint8_t max_label_ = 255;
  std::vector<std::uint8_t> labels_;
};

/// Half-open voxel box [lo, hi) per axis.
struct Box3 {
  std::array<std::int64_t, 3> lo{};
  std::array<std::int64_t, 3> hi{};
};

/// Partition of a volume into equal axis-aligned blocks. Patch indices run
/// z-block major, then y-block, then x-block.
class PatchGrid {
 public:
  PatchGrid(Dims3 volume_dims, Dims3 patch_size);

  const Dims3& volume_dims() const noexcept { return volume_; }
  const Dims3& patch_size() const noexcept { return patch_; }
  const Dims3& grid_dims() const noexcept { return grid_; }
  std::size_t size() const noexcept { return grid_.voxels(); }
  std::size_t voxels_per_patch() const noexcept { return patch_.voxels(); }

  std::size_t patch_index(std::int64_t bz, std::int64_t by, std::int64_t bx) const noexcept {
    return grid_.index(bz, by, bx);
  }
  std::array<std::int64_t, 3> block_of(std::size_t patch) const noexcept;
  Box3 voxel_box(std::size_t patch) const noexcept;
  std::size_t patch_of_voxel(std::int64_t z, std::int64_t y, std::int64_t x) const noexcept;

  friend bool operator==(const PatchGrid&, const PatchGrid&) = default;

 private:
  Dims3 volume_;
  Dims3 patch_;
  Dims3 grid_;
};

/// Throws ZeroDim or NonDivisible.
PatchGrid partition(Dims3 volume_dims, Dims3 patch_size);

/// Sorted set of nonzero labels present in one patch.
using LabelSet = std::vector<std::uint8_t>;

/// For each patch, the nonzero labels that cover at least `min_voxels` of its
/// voxels. An empty set marks a background patch.
std::vector<LabelSet> organ_patches(const SegMask& mask, const PatchGrid& grid, std::size_t min_voxels = 1);

/// Indices of patches with a non-empty label set.
std::vector<std::size_t> organ_patch_indices(const SegMask& mask, const PatchGrid& grid,
                                             std::size_t min_voxels = 1);

inline constexpr std::int64_t kDefaultCropMargin = 2;

/// Bounding box of all nonzero mask voxels, dilated by `margin` and clamped.
Box3 organ_bounding_box(const SegMask& mask, std::int64_t margin);

/// Crops the volume to the dilated organ bounding box and resamples it to
/// `out_dims` with trilinear interpolation.
Volume crop_to_organ(const Volume& volume, const SegMask& mask, std::int64_t margin, Dims3 out_dims);

/// Trilinear resample of the sub-box `box` of `volume` onto `out_dims`.
Volume resample_box(const Volume& volume, const Box3& box, Dims3 out_dims);

// VVOL v1: "VVOL1 <D> <H> <W> <dtype> <sz> <sy> <sx>\n" + little-endian payload.
void save_volume(const Volume& volume, const std::filesystem::path& path);
Volume load_volume(const std::filesystem::path& path);
void save_mask(const SegMask& mask, const std::filesystem::path& path);
SegMask load_mask(const std::filesystem::path& path);

}  // namespace ofa

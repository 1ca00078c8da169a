// Copyright 2026 The OFA3D Authors
// SPDX-License-Identifier: Apache-2.0

#include "ofa/volgrid.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <sstream>
#include <string>

#include "ofa/error.hpp"

namespace ofa {

static_assert(std::endian::native == std::endian::little, "VVOL payloads are written in host order");

namespace {

std::string dims_str(const Dims3& d) {
  return "(" + std::to_string(d.d) + "," + std::to_string(d.h) + "," + std::to_string(d.w) + ")";
}

bool positive(const Dims3& d) { return d.d > 0 && d.h > 0 && d.w > 0; }

}  // namespace

Volume::Volume(Dims3 dims, std::vector<float> data, Spacing3 spacing)
    : dims_(dims), spacing_(spacing), data_(std::move(data)) {
  if (!positive(dims_)) throw Error(ErrorKind::ZeroDim, "volume dims " + dims_str(dims_));
  if (data_.size() != dims_.voxels()) {
    throw Error(ErrorKind::PayloadMismatch, "volume has " + std::to_string(data_.size()) + " values for dims " +
                                                dims_str(dims_));
  }
  for (float v : data_) {
    if (!std::isfinite(v)) throw Error(ErrorKind::NonFinite, "volume contains a non-finite value");
  }
}

Volume::Volume(Dims3 dims, Spacing3 spacing) : dims_(dims), spacing_(spacing) {
  if (!positive(dims_)) throw Error(ErrorKind::ZeroDim, "volume dims " + dims_str(dims_));
  data_.assign(dims_.voxels(), 0.0f);
}

SegMask::SegMask(Dims3 dims, std::vector<std::uint8_t> labels, std::uint8_t max_label, Spacing3 spacing)
    : dims_(dims), spacing_(spacing), max_label_(max_label), labels_(std::move(labels)) {
  if (!positive(dims_)) throw Error(ErrorKind::ZeroDim, "mask dims " + dims_str(dims_));
  if (labels_.size() != dims_.voxels()) {
    throw Error(ErrorKind::PayloadMismatch, "mask has " + std::to_string(labels_.size()) + " labels for dims " +
                                                dims_str(dims_));
  }
  for (auto l : labels_) {
    if (l > max_label_) {
      throw Error(ErrorKind::BadConfig, "label " + std::to_string(l) + " exceeds max label " +
                                            std::to_string(max_label_));
    }
  }
}

bool SegMask::any_nonzero() const noexcept {
  return std::any_of(labels_.begin(), labels_.end(), [](std::uint8_t l) { return l != 0; });
}

// ---------------------------------------------------------------------------
// PatchGrid

PatchGrid::PatchGrid(Dims3 volume_dims, Dims3 patch_size) : volume_(volume_dims), patch_(patch_size) {
  if (!positive(volume_) || !positive(patch_)) {
    throw Error(ErrorKind::ZeroDim, "volume " + dims_str(volume_) + " patch " + dims_str(patch_));
  }
  const char* axis = volume_.d % patch_.d ? "D" : volume_.h % patch_.h ? "H" : volume_.w % patch_.w ? "W" : nullptr;
  if (axis) {
    throw Error(ErrorKind::NonDivisible, std::string("dimension ") + axis + " of " + dims_str(volume_) +
                                             " is not a multiple of patch " + dims_str(patch_));
  }
  grid_ = {volume_.d / patch_.d, volume_.h / patch_.h, volume_.w / patch_.w};
}

std::array<std::int64_t, 3> PatchGrid::block_of(std::size_t patch) const noexcept {
  const auto p = static_cast<std::int64_t>(patch);
  return {p / (grid_.h * grid_.w), (p / grid_.w) % grid_.h, p % grid_.w};
}

Box3 PatchGrid::voxel_box(std::size_t patch) const noexcept {
  const auto b = block_of(patch);
  Box3 box;
  box.lo = {b[0] * patch_.d, b[1] * patch_.h, b[2] * patch_.w};
  box.hi = {box.lo[0] + patch_.d, box.lo[1] + patch_.h, box.lo[2] + patch_.w};
  return box;
}

std::size_t PatchGrid::patch_of_voxel(std::int64_t z, std::int64_t y, std::int64_t x) const noexcept {
  return patch_index(z / patch_.d, y / patch_.h, x / patch_.w);
}

PatchGrid partition(Dims3 volume_dims, Dims3 patch_size) { return PatchGrid(volume_dims, patch_size); }

// ---------------------------------------------------------------------------
// Organ patches

std::vector<LabelSet> organ_patches(const SegMask& mask, const PatchGrid& grid, std::size_t min_voxels) {
  if (mask.dims() != grid.volume_dims()) {
    throw Error(ErrorKind::DimMismatch,
                "mask " + dims_str(mask.dims()) + " vs grid volume " + dims_str(grid.volume_dims()));
  }
  min_voxels = std::max<std::size_t>(min_voxels, 1);
  std::vector<LabelSet> out(grid.size());
  std::array<std::size_t, 256> counts{};
  for (std::size_t p = 0; p < grid.size(); ++p) {
    counts.fill(0);
    const Box3 box = grid.voxel_box(p);
    for (auto z = box.lo[0]; z < box.hi[0]; ++z) {
      for (auto y = box.lo[1]; y < box.hi[1]; ++y) {
        for (auto x = box.lo[2]; x < box.hi[2]; ++x) ++counts[mask.at(z, y, x)];
      }
    }
    for (std::size_t label = 1; label < counts.size(); ++label) {
      if (counts[label] >= min_voxels) out[p].push_back(static_cast<std::uint8_t>(label));
    }
  }
  return out;
}

std::vector<std::size_t> organ_patch_indices(const SegMask& mask, const PatchGrid& grid, std::size_t min_voxels) {
  const auto sets = organ_patches(mask, grid, min_voxels);
  std::vector<std::size_t> out;
  for (std::size_t p = 0; p < sets.size(); ++p) {
    if (!sets[p].empty()) out.push_back(p);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Segmentation-based cropping

Box3 organ_bounding_box(const SegMask& mask, std::int64_t margin) {
  const Dims3& d = mask.dims();
  std::array<std::int64_t, 3> lo{d.d, d.h, d.w};
  std::array<std::int64_t, 3> hi{-1, -1, -1};
  for (std::int64_t z = 0; z < d.d; ++z) {
    for (std::int64_t y = 0; y < d.h; ++y) {
      for (std::int64_t x = 0; x < d.w; ++x) {
        if (mask.at(z, y, x) == 0) continue;
        lo = {std::min(lo[0], z), std::min(lo[1], y), std::min(lo[2], x)};
        hi = {std::max(hi[0], z), std::max(hi[1], y), std::max(hi[2], x)};
      }
    }
  }
  if (hi[0] < 0) throw Error(ErrorKind::EmptyMask, "mask has no nonzero voxel");
  const std::array<std::int64_t, 3> extent{d.d, d.h, d.w};
  Box3 box;
  for (int a = 0; a < 3; ++a) {
    box.lo[a] = std::max<std::int64_t>(0, lo[a] - margin);
    box.hi[a] = std::min<std::int64_t>(extent[a], hi[a] + 1 + margin);
  }
  return box;
}

Volume resample_box(const Volume& volume, const Box3& box, Dims3 out_dims) {
  if (!positive(out_dims)) throw Error(ErrorKind::ZeroDim, "output dims " + dims_str(out_dims));
  const std::array<std::int64_t, 3> out_ext{out_dims.d, out_dims.h, out_dims.w};

  // Per axis: lower sample index and interpolation weight for each output index.
  std::array<std::vector<std::int64_t>, 3> idx;
  std::array<std::vector<double>, 3> frac;
  for (int a = 0; a < 3; ++a) {
    const auto n_src = box.hi[a] - box.lo[a];
    const double step = static_cast<double>(n_src) / static_cast<double>(out_ext[a]);
    idx[a].resize(static_cast<std::size_t>(out_ext[a]));
    frac[a].resize(static_cast<std::size_t>(out_ext[a]));
    for (std::int64_t o = 0; o < out_ext[a]; ++o) {
      // Align voxel centres of the source box and the output grid.
      double s = (static_cast<double>(o) + 0.5) * step - 0.5;
      s = std::clamp(s, 0.0, static_cast<double>(n_src - 1));
      auto i0 = static_cast<std::int64_t>(std::floor(s));
      if (i0 >= n_src - 1) i0 = std::max<std::int64_t>(n_src - 2, 0);
      idx[a][o] = i0;
      frac[a][o] = n_src > 1 ? s - static_cast<double>(i0) : 0.0;
    }
  }

  const auto& src = volume.dims();
  auto sample = [&](std::int64_t z, std::int64_t y, std::int64_t x) -> double {
    z = std::min(z + box.lo[0], src.d - 1);
    y = std::min(y + box.lo[1], src.h - 1);
    x = std::min(x + box.lo[2], src.w - 1);
    return volume.at(z, y, x);
  };

  Volume out(out_dims, volume.spacing());
  for (std::int64_t z = 0; z < out_dims.d; ++z) {
    const auto z0 = idx[0][z];
    const double fz = frac[0][z];
    for (std::int64_t y = 0; y < out_dims.h; ++y) {
      const auto y0 = idx[1][y];
      const double fy = frac[1][y];
      for (std::int64_t x = 0; x < out_dims.w; ++x) {
        const auto x0 = idx[2][x];
        const double fx = frac[2][x];
        double acc = 0.0;
        for (int dz = 0; dz < 2; ++dz) {
          const double wz = dz ? fz : 1.0 - fz;
          if (wz == 0.0) continue;
          for (int dy = 0; dy < 2; ++dy) {
            const double wy = dy ? fy : 1.0 - fy;
            if (wy == 0.0) continue;
            for (int dx = 0; dx < 2; ++dx) {
              const double wx = dx ? fx : 1.0 - fx;
              if (wx == 0.0) continue;
              acc += wz * wy * wx * sample(z0 + dz, y0 + dy, x0 + dx);
            }
          }
        }
        out.at(z, y, x) = static_cast<float>(acc);
      }
    }
  }
  return out;
}

Volume crop_to_organ(const Volume& volume, const SegMask& mask, std::int64_t margin, Dims3 out_dims) {
  if (volume.dims() != mask.dims()) {
    throw Error(ErrorKind::DimMismatch, "volume " + dims_str(volume.dims()) + " vs mask " + dims_str(mask.dims()));
  }
  return resample_box(volume, organ_bounding_box(mask, margin), out_dims);
}

// ---------------------------------------------------------------------------
// VVOL I/O

namespace {

struct VvolHeader {
  Dims3 dims;
  std::string dtype;
  Spacing3 spacing;
};

std::string format_header(const Dims3& d, const char* dtype, const Spacing3& s) {
  char buf[256];
  std::snprintf(buf, sizeof buf, "VVOL1 %lld %lld %lld %s %.17g %.17g %.17g\n", static_cast<long long>(d.d),
                static_cast<long long>(d.h), static_cast<long long>(d.w), dtype, s.z, s.y, s.x);
  return buf;
}

VvolHeader read_header(std::istream& in, const std::filesystem::path& path) {
  std::string line;
  if (!std::getline(in, line) || in.eof()) {
    throw Error(ErrorKind::BadHeader, path.string() + ": missing header line");
  }
  std::istringstream ss(line);
  std::string magic;
  VvolHeader h;
  ss >> magic >> h.dims.d >> h.dims.h >> h.dims.w >> h.dtype >> h.spacing.z >> h.spacing.y >> h.spacing.x;
  std::string rest;
  if (!ss || magic != "VVOL1" || (ss >> rest)) {
    throw Error(ErrorKind::BadHeader, path.string() + ": cannot parse '" + line + "'");
  }
  if (!positive(h.dims)) throw Error(ErrorKind::BadHeader, path.string() + ": non-positive dims");
  if (h.dtype != "f32" && h.dtype != "u8") throw Error(ErrorKind::BadHeader, path.string() + ": dtype " + h.dtype);
  return h;
}

std::vector<char> read_payload(std::istream& in, std::size_t bytes, const std::filesystem::path& path) {
  std::vector<char> buf(bytes);
  in.read(buf.data(), static_cast<std::streamsize>(bytes));
  if (static_cast<std::size_t>(in.gcount()) != bytes) {
    throw Error(ErrorKind::PayloadMismatch, path.string() + ": expected " + std::to_string(bytes) +
                                                " payload bytes, got " + std::to_string(in.gcount()));
  }
  if (in.peek() != std::char_traits<char>::eof()) {
    throw Error(ErrorKind::PayloadMismatch, path.string() + ": trailing bytes after payload");
  }
  return buf;
}

std::ofstream open_out(const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error(ErrorKind::Io, "cannot open " + path.string() + " for writing");
  return out;
}

std::ifstream open_in(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorKind::Io, "cannot open " + path.string());
  return in;
}

void finish(std::ofstream& out, const std::filesystem::path& path) {
  out.flush();
  if (!out) throw Error(ErrorKind::Io, "write failed for " + path.string());
}

}  // namespace

void save_volume(const Volume& volume, const std::filesystem::path& path) {
  auto out = open_out(path);
  out << format_header(volume.dims(), "f32", volume.spacing());
  const auto data = volume.data();
  out.write(reinterpret_cast<const char*>(data.data()), static_cast<std::streamsize>(data.size_bytes()));
  finish(out, path);
}

Volume load_volume(const std::filesystem::path& path) {
  auto in = open_in(path);
  const auto h = read_header(in, path);
  if (h.dtype != "f32") throw Error(ErrorKind::BadHeader, path.string() + ": volume payload must be f32");
  const auto raw = read_payload(in, h.dims.voxels() * sizeof(float), path);
  std::vector<float> data(h.dims.voxels());
  std::memcpy(data.data(), raw.data(), raw.size());
  return Volume(h.dims, std::move(data), h.spacing);
}

void save_mask(const SegMask& mask, const std::filesystem::path& path) {
  auto out = open_out(path);
  out << format_header(mask.dims(), "u8", mask.spacing());
  const auto labels = mask.labels();
  out.write(reinterpret_cast<const char*>(labels.data()), static_cast<std::streamsize>(labels.size()));
  finish(out, path);
}

SegMask load_mask(const std::filesystem::path& path) {
  auto in = open_in(path);
  const auto h = read_header(in, path);
  if (h.dtype != "u8") throw Error(ErrorKind::BadHeader, path.string() + ": mask payload must be u8");
  const auto raw = read_payload(in, h.dims.voxels(), path);
  std::vector<std::uint8_t> labels(raw.begin(), raw.end());
  return SegMask(h.dims, std::move(labels), 255, h.spacing);
}

}  // namespace ofa

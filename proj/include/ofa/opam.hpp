// Copyright 2026 The OFA3D Authors
// SPDX-License-Identifier: Apache-2.0
//
// Organ patch attention matrix: which patch pairs share an organ label, and
// the row-softmax of that binary matrix used as an attention target.

#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

#include "ofa/volgrid.hpp"

namespace ofa {

/// Binary, symmetric N x N co-membership matrix, row-major.
class Opam {
 public:
  Opam() = default;
  Opam(std::size_t n, std::vector<std::uint8_t> m);

  std::size_t n() const noexcept { return n_; }
  std::uint8_t at(std::size_t i, std::size_t j) const { return m_[i * n_ + j]; }
  std::span<const std::uint8_t> values() const noexcept { return m_; }

  friend bool operator==(const Opam&, const Opam&) = default;

 private:
  std::size_t n_ = 0;
  std::vector<std::uint8_t> m_;
};

/// Row-stochastic soft target: row-wise softmax of an Opam.
class OpamTarget {
 public:
  OpamTarget() = default;
  OpamTarget(std::size_t n, std::vector<double> t) : n_(n), t_(std::move(t)) {}

  std::size_t n() const noexcept { return n_; }
  double at(std::size_t i, std::size_t j) const { return t_[i * n_ + j]; }
  std::span<const double> values() const noexcept { return t_; }

 private:
  std::size_t n_ = 0;
  std::vector<double> t_;
};

/// m_ij = 1 iff some label k > 0 is present in both patch i and patch j.
Opam build_opam(std::span<const LabelSet> patch_labels);
Opam build_opam(const SegMask& mask, const PatchGrid& grid, std::size_t min_voxels = 1);

/// A row with k ones over N columns maps to e/(k e + N - k) on the ones and
/// 1/(k e + N - k) elsewhere; an all-zero row becomes uniform.
OpamTarget softmax_target(const Opam& opam);

/// "VMAT1 <rows> <cols> f32\n" followed by a row-major little-endian payload.
void save_matrix(std::span<const double> values, std::size_t rows, std::size_t cols,
                 const std::filesystem::path& path);

struct Matrix32 {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<float> values;
};
Matrix32 load_matrix(const std::filesystem::path& path);

}  // namespace ofa

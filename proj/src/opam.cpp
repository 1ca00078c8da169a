// Copyright 2026 The OFA3D Authors
// SPDX-License-Identifier: Apache-2.0

#include "ofa/opam.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <iterator>
#include <sstream>
#include <string>

#include "ofa/error.hpp"

namespace ofa {

Opam::Opam(std::size_t n, std::vector<std::uint8_t> m) : n_(n), m_(std::move(m)) {
  if (m_.size() != n_ * n_) throw Error(ErrorKind::SizeMismatch, "opam payload is not N x N");
}

Opam build_opam(std::span<const LabelSet> patch_labels) {
  const std::size_t n = patch_labels.size();
  std::vector<std::uint8_t> m(n * n, 0);
  for (std::size_t i = 0; i < n; ++i) {
    const auto& a = patch_labels[i];
    if (a.empty()) continue;
    for (std::size_t j = i; j < n; ++j) {
      const auto& b = patch_labels[j];
      // Both sets are sorted; any common element connects the pair.
      auto ia = a.begin();
      auto ib = b.begin();
      bool shared = false;
      while (ia != a.end() && ib != b.end()) {
        if (*ia == *ib) {
          shared = true;
          break;
        }
        if (*ia < *ib) ++ia; else ++ib;
      }
      if (shared) m[i * n + j] = m[j * n + i] = 1;
    }
  }
  return Opam(n, std::move(m));
}

Opam build_opam(const SegMask& mask, const PatchGrid& grid, std::size_t min_voxels) {
  const auto labels = organ_patches(mask, grid, min_voxels);
  return build_opam(labels);
}

OpamTarget softmax_target(const Opam& opam) {
  const std::size_t n = opam.n();
  const double e = std::exp(1.0);
  std::vector<double> t(n * n);
  for (std::size_t i = 0; i < n; ++i) {
    std::size_t k = 0;
    for (std::size_t j = 0; j < n; ++j) k += opam.at(i, j);
    const double z = static_cast<double>(k) * e + static_cast<double>(n - k);
    const double hi = e / z;
    const double lo = 1.0 / z;
    for (std::size_t j = 0; j < n; ++j) t[i * n + j] = opam.at(i, j) ? hi : lo;
  }
  return OpamTarget(n, std::move(t));
}

void save_matrix(std::span<const double> values, std::size_t rows, std::size_t cols,
                 const std::filesystem::path& path) {
  if (values.size() != rows * cols) throw Error(ErrorKind::SizeMismatch, "matrix payload is not rows x cols");
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error(ErrorKind::Io, "cannot open " + path.string() + " for writing");
  out << "VMAT1 " << rows << ' ' << cols << " f32\n";
  std::vector<float> f(values.begin(), values.end());
  out.write(reinterpret_cast<const char*>(f.data()), static_cast<std::streamsize>(f.size() * sizeof(float)));
  if (!out) throw Error(ErrorKind::Io, "write failed for " + path.string());
}

Matrix32 load_matrix(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorKind::Io, "cannot open " + path.string());
  std::string line;
  if (!std::getline(in, line)) throw Error(ErrorKind::BadHeader, path.string() + ": missing header");
  std::istringstream ss(line);
  std::string magic, dtype;
  Matrix32 m;
  ss >> magic >> m.rows >> m.cols >> dtype;
  if (!ss || magic != "VMAT1" || dtype != "f32") {
    throw Error(ErrorKind::BadHeader, path.string() + ": cannot parse '" + line + "'");
  }
  m.values.resize(m.rows * m.cols);
  const auto bytes = static_cast<std::streamsize>(m.values.size() * sizeof(float));
  in.read(reinterpret_cast<char*>(m.values.data()), bytes);
  if (in.gcount() != bytes || in.peek() != std::char_traits<char>::eof()) {
    throw Error(ErrorKind::PayloadMismatch, path.string() + ": payload does not match header");
  }
  return m;
}

}  // namespace ofa

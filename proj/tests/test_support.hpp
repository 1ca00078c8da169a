// Copyright 2026 The OFA3D Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <atomic>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <random>
#include <string>
#include <vector>

#include <unistd.h>

#include "ofa/volgrid.hpp"

namespace ofa::testing {

/// Fresh directory under the system temp dir, removed on destruction.
class TempDir {
 public:
  explicit TempDir(const std::string& tag = "t") {
    static std::atomic<int> counter{0};
    path_ = std::filesystem::temp_directory_path() /
            ("ofa_" + tag + "_" + std::to_string(::getpid()) + "_" + std::to_string(counter++));
    std::filesystem::remove_all(path_);
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;

  const std::filesystem::path& path() const { return path_; }
  std::filesystem::path operator/(const std::string& name) const { return path_ / name; }

 private:
  std::filesystem::path path_;
};

inline std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

/// Sparse random labels in [0, max_label]; roughly `density` of voxels nonzero.
inline SegMask random_mask(Dims3 dims, std::uint8_t max_label, double density, std::mt19937_64& rng) {
  std::bernoulli_distribution on(density);
  std::uniform_int_distribution<int> lab(1, max_label);
  std::vector<std::uint8_t> v(dims.voxels(), 0);
  for (auto& x : v) {
    if (on(rng)) x = static_cast<std::uint8_t>(lab(rng));
  }
  return SegMask(dims, std::move(v), max_label);
}

inline Volume random_volume(Dims3 dims, std::mt19937_64& rng) {
  std::normal_distribution<float> g(0.0f, 1.0f);
  std::vector<float> v(dims.voxels());
  for (auto& x : v) x = g(rng);
  return Volume(dims, std::move(v));
}

}  // namespace ofa::testing

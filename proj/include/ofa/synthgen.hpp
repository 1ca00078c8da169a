// Copyright 2026 The OFA3D Authors
// SPDX-License-Identifier: Apache-2.0
//
// Deterministic phantom volumes: a bright ellipsoidal organ, a dark lesion
// inside it for positive samples only, and lesion-like distractors outside
// the organ in every sample.

#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include <json.hpp>

#include "ofa/volgrid.hpp"

namespace ofa {

struct PhantomConfig {
  Dims3 dims{24, 24, 24};
  double organ_radius_min = 4.5;
  double organ_radius_max = 6.0;
  double lesion_radius_min = 2.5;
  double lesion_radius_max = 3.5;
  double background_intensity = 0.3;
  double organ_intensity = 0.7;
  double organ_intensity_jitter = 0.05;
  /// Lesion intensity = organ intensity - lesion_contrast.
  double lesion_contrast = 0.6;
  std::size_t distractor_count = 3;
  /// Distractor intensity = background intensity - distractor_contrast.
  double distractor_contrast = 0.6;
  double noise_std = 0.05;
  double class_balance = 0.5;
  std::size_t count = 280;
  std::uint64_t seed = 0;

  /// Throws BadConfig or ConfigInfeasible.
  void validate() const;
};

void to_json(nlohmann::json& j, const PhantomConfig& c);
void from_json(const nlohmann::json& j, PhantomConfig& c);

struct Blob {
  std::array<double, 3> centre{};
  double radius = 0.0;
};

struct PhantomSample {
  Volume volume;
  SegMask mask;
  int label = 0;
  /// Geometry in voxel-index coordinates (z, y, x).
  std::array<double, 3> organ_centre{};
  std::array<double, 3> organ_radii{};
  std::vector<Blob> lesions;
  std::vector<Blob> distractors;
};

struct ManifestEntry {
  std::string volume;
  std::string mask;  // empty when absent
  int label = 0;
};

using Manifest = std::vector<ManifestEntry>;

/// Labels for all samples; exactly round(balance * count) positives.
std::vector<int> phantom_labels(const PhantomConfig& config);

/// Sample `index`, seeded from (seed, index) only, so any subset can be
/// generated independently and in any order.
PhantomSample generate_sample(const PhantomConfig& config, std::size_t index, int label);

/// All samples in memory.
std::vector<PhantomSample> generate_all(const PhantomConfig& config);

/// Writes vol_XXXX.vvol, mask_XXXX.vvol and manifest.json into `out_dir`.
Manifest generate(const PhantomConfig& config, const std::filesystem::path& out_dir);

/// JSON array of {volume, mask|null, label}; relative paths resolve against
/// the manifest's directory.
void save_manifest(const Manifest& manifest, const std::filesystem::path& path);
Manifest load_manifest(const std::filesystem::path& path);

struct BayesReport {
  double organ_oracle_auc = 0.0;
  double background_oracle_auc = 0.0;
  bool learnable() const { return organ_oracle_auc >= 0.95 && background_oracle_auc <= 0.65; }
};

/// AUC of two hand-written classifiers on a fresh draw of `samples` phantoms:
/// median minus mean intensity inside the true organ, and the same statistic
/// over background voxels.
BayesReport bayes_check(const PhantomConfig& config, std::size_t samples = 500);

}  // namespace ofa

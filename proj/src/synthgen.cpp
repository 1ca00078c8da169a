// Copyright 2026 The OFA3D Authors
// SPDX-License-Identifier: Apache-2.0

#include "ofa/synthgen.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>
#include <random>

#include "ofa/error.hpp"
#include "ofa/metrics.hpp"

namespace ofa {

namespace {

std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

std::uint64_t stream_seed(std::uint64_t seed, std::uint64_t index, std::uint64_t stream) {
  return splitmix64(splitmix64(splitmix64(seed) ^ index) ^ stream);
}

constexpr int kMaxPlacementTries = 2000;

struct Sphere {
  std::array<double, 3> c;
  double r;
};

bool inside_ellipsoid(const std::array<double, 3>& c, const std::array<double, 3>& r, double z, double y, double x) {
  const double dz = (z - c[0]) / r[0], dy = (y - c[1]) / r[1], dx = (x - c[2]) / r[2];
  return dz * dz + dy * dy + dx * dx <= 1.0;
}

bool inside_sphere(const Sphere& s, double z, double y, double x) {
  const double dz = z - s.c[0], dy = y - s.c[1], dx = x - s.c[2];
  return dz * dz + dy * dy + dx * dx <= s.r * s.r;
}

template <typename Fn>
void for_each_in_box(const Dims3& d, const Sphere& s, Fn&& fn) {
  const auto lo = [&](int a, std::int64_t n) {
    return std::clamp<std::int64_t>(static_cast<std::int64_t>(std::floor(s.c[a] - s.r)), 0, n - 1);
  };
  const auto hi = [&](int a, std::int64_t n) {
    return std::clamp<std::int64_t>(static_cast<std::int64_t>(std::ceil(s.c[a] + s.r)), 0, n - 1);
  };
  for (auto z = lo(0, d.d); z <= hi(0, d.d); ++z) {
    for (auto y = lo(1, d.h); y <= hi(1, d.h); ++y) {
      for (auto x = lo(2, d.w); x <= hi(2, d.w); ++x) {
        if (inside_sphere(s, static_cast<double>(z), static_cast<double>(y), static_cast<double>(x))) fn(z, y, x);
      }
    }
  }
}

double median_of(std::vector<double> v) {
  const auto mid = v.size() / 2;
  std::nth_element(v.begin(), v.begin() + static_cast<std::ptrdiff_t>(mid), v.end());
  double m = v[mid];
  if (v.size() % 2 == 0) {
    m = 0.5 * (m + *std::max_element(v.begin(), v.begin() + static_cast<std::ptrdiff_t>(mid)));
  }
  return m;
}

double median_minus_mean(const std::vector<double>& v) {
  if (v.empty()) return 0.0;
  const double mean = std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
  return median_of(v) - mean;
}

}  // namespace

void PhantomConfig::validate() const {
  if (dims.d <= 0 || dims.h <= 0 || dims.w <= 0) throw Error(ErrorKind::BadConfig, "phantom dims must be positive");
  if (!(organ_radius_min > 0 && organ_radius_min <= organ_radius_max)) {
    throw Error(ErrorKind::BadConfig, "organ radius range must be positive and ordered");
  }
  if (!(lesion_radius_min > 0 && lesion_radius_min <= lesion_radius_max)) {
    throw Error(ErrorKind::BadConfig, "lesion radius range must be positive and ordered");
  }
  if (!(class_balance > 0.0 && class_balance < 1.0)) throw Error(ErrorKind::BadConfig, "class balance must be in (0, 1)");
  if (noise_std < 0.0) throw Error(ErrorKind::BadConfig, "noise std must be non-negative");
  if (count == 0) throw Error(ErrorKind::BadConfig, "sample count must be positive");
  const auto smallest = std::min({dims.d, dims.h, dims.w});
  // Centre range [r + 1, n - 2 - r] must be non-empty on every axis.
  if (static_cast<double>(smallest) - 3.0 - 2.0 * organ_radius_max < 0.0) {
    throw Error(ErrorKind::ConfigInfeasible, "organ radius " + std::to_string(organ_radius_max) +
                                                 " does not fit in the volume with a one-voxel margin");
  }
  if (lesion_radius_max >= organ_radius_min) {
    throw Error(ErrorKind::ConfigInfeasible, "lesion must be smaller than the smallest organ");
  }
}

void to_json(nlohmann::json& j, const PhantomConfig& c) {
  j = nlohmann::json{{"dims", {c.dims.d, c.dims.h, c.dims.w}},
                     {"organ_radius", {c.organ_radius_min, c.organ_radius_max}},
                     {"lesion_radius", {c.lesion_radius_min, c.lesion_radius_max}},
                     {"background_intensity", c.background_intensity},
                     {"organ_intensity", c.organ_intensity},
                     {"organ_intensity_jitter", c.organ_intensity_jitter},
                     {"lesion_contrast", c.lesion_contrast},
                     {"distractor_count", c.distractor_count},
                     {"distractor_contrast", c.distractor_contrast},
                     {"noise_std", c.noise_std},
                     {"class_balance", c.class_balance},
                     {"count", c.count},
                     {"seed", c.seed}};
}

void from_json(const nlohmann::json& j, PhantomConfig& c) {
  PhantomConfig d;
  if (j.contains("dims")) {
    const auto& a = j.at("dims");
    c.dims = a.is_array() ? Dims3{a.at(0).get<std::int64_t>(), a.at(1).get<std::int64_t>(), a.at(2).get<std::int64_t>()}
                          : Dims3{a.get<std::int64_t>(), a.get<std::int64_t>(), a.get<std::int64_t>()};
  } else {
    c.dims = d.dims;
  }
  auto range = [&](const char* key, double& lo, double& hi, double dlo, double dhi) {
    lo = dlo;
    hi = dhi;
    if (j.contains(key)) {
      lo = j.at(key).at(0).get<double>();
      hi = j.at(key).at(1).get<double>();
    }
  };
  range("organ_radius", c.organ_radius_min, c.organ_radius_max, d.organ_radius_min, d.organ_radius_max);
  range("lesion_radius", c.lesion_radius_min, c.lesion_radius_max, d.lesion_radius_min, d.lesion_radius_max);
  c.background_intensity = j.value("background_intensity", d.background_intensity);
  c.organ_intensity = j.value("organ_intensity", d.organ_intensity);
  c.organ_intensity_jitter = j.value("organ_intensity_jitter", d.organ_intensity_jitter);
  c.lesion_contrast = j.value("lesion_contrast", d.lesion_contrast);
  c.distractor_count = j.value("distractor_count", d.distractor_count);
  c.distractor_contrast = j.value("distractor_contrast", d.distractor_contrast);
  c.noise_std = j.value("noise_std", d.noise_std);
  c.class_balance = j.value("class_balance", d.class_balance);
  c.count = j.value("count", d.count);
  c.seed = j.value("seed", d.seed);
}

std::vector<int> phantom_labels(const PhantomConfig& config) {
  config.validate();
  const auto n_pos = static_cast<std::size_t>(std::llround(config.class_balance * static_cast<double>(config.count)));
  std::vector<std::size_t> order(config.count);
  std::iota(order.begin(), order.end(), 0);
  std::mt19937_64 rng(stream_seed(config.seed, ~0ULL, 0));
  std::shuffle(order.begin(), order.end(), rng);
  std::vector<int> labels(config.count, 0);
  for (std::size_t k = 0; k < n_pos && k < order.size(); ++k) labels[order[k]] = 1;
  return labels;
}

PhantomSample generate_sample(const PhantomConfig& config, std::size_t index, int label) {
  config.validate();
  const Dims3 d = config.dims;
  const std::array<std::int64_t, 3> ext{d.d, d.h, d.w};
  std::mt19937_64 geo(stream_seed(config.seed, index, 1));
  std::mt19937_64 lesion_rng(stream_seed(config.seed, index, 2));
  std::mt19937_64 noise_rng(stream_seed(config.seed, index, 3));
  auto uniform = [](std::mt19937_64& rng, double lo, double hi) {
    return std::uniform_real_distribution<double>(lo, hi)(rng);
  };

  // Organ ellipsoid, axis-aligned, with a one-voxel margin to the border.
  std::array<double, 3> radius{}, centre{};
  for (int a = 0; a < 3; ++a) radius[a] = uniform(geo, config.organ_radius_min, config.organ_radius_max);
  for (int a = 0; a < 3; ++a) {
    centre[a] = uniform(geo, radius[a] + 1.0, static_cast<double>(ext[a]) - 2.0 - radius[a]);
  }
  const double organ_level = config.organ_intensity + uniform(geo, -config.organ_intensity_jitter,
                                                              config.organ_intensity_jitter);

  std::vector<std::uint8_t> labels(d.voxels(), 0);
  for (std::int64_t z = 0; z < d.d; ++z) {
    for (std::int64_t y = 0; y < d.h; ++y) {
      for (std::int64_t x = 0; x < d.w; ++x) {
        if (inside_ellipsoid(centre, radius, static_cast<double>(z), static_cast<double>(y), static_cast<double>(x))) {
          labels[d.index(z, y, x)] = 1;
        }
      }
    }
  }
  auto organ_near = [&](std::int64_t z, std::int64_t y, std::int64_t x) {
    for (std::int64_t dz = -1; dz <= 1; ++dz) {
      for (std::int64_t dy = -1; dy <= 1; ++dy) {
        for (std::int64_t dx = -1; dx <= 1; ++dx) {
          const auto zz = z + dz, yy = y + dy, xx = x + dx;
          if (zz < 0 || yy < 0 || xx < 0 || zz >= d.d || yy >= d.h || xx >= d.w) continue;
          if (labels[d.index(zz, yy, xx)]) return true;
        }
      }
    }
    return false;
  };

  // Distractors are drawn before the label is consulted, so their placement
  // is identically distributed in both classes.
  std::vector<Sphere> distractors;
  for (std::size_t k = 0; k < config.distractor_count; ++k) {
    bool placed = false;
    for (int attempt = 0; attempt < kMaxPlacementTries && !placed; ++attempt) {
      Sphere s;
      s.r = uniform(geo, config.lesion_radius_min, config.lesion_radius_max);
      for (int a = 0; a < 3; ++a) s.c[a] = uniform(geo, s.r, static_cast<double>(ext[a]) - 1.0 - s.r);
      bool clear = true;
      for_each_in_box(d, s, [&](std::int64_t z, std::int64_t y, std::int64_t x) { clear = clear && !organ_near(z, y, x); });
      if (clear) {
        distractors.push_back(s);
        placed = true;
      }
    }
    if (!placed) throw Error(ErrorKind::ConfigInfeasible, "no room for a distractor outside the organ");
  }

  std::vector<Sphere> lesions;
  if (label) {
    bool placed = false;
    for (int attempt = 0; attempt < kMaxPlacementTries && !placed; ++attempt) {
      Sphere s;
      s.r = uniform(lesion_rng, config.lesion_radius_min, config.lesion_radius_max);
      for (int a = 0; a < 3; ++a) s.c[a] = uniform(lesion_rng, centre[a] - radius[a], centre[a] + radius[a]);
      bool inside = true;
      std::size_t voxels = 0;
      for_each_in_box(d, s, [&](std::int64_t z, std::int64_t y, std::int64_t x) {
        inside = inside && labels[d.index(z, y, x)] != 0;
        ++voxels;
      });
      if (inside && voxels > 0) {
        lesions.push_back(s);
        placed = true;
      }
    }
    if (!placed) throw Error(ErrorKind::ConfigInfeasible, "could not place a lesion inside the organ");
  }

  std::vector<float> data(d.voxels());
  std::normal_distribution<double> noise(0.0, 1.0);
  for (std::size_t i = 0; i < data.size(); ++i) {
    const double base = labels[i] ? organ_level : config.background_intensity;
    data[i] = static_cast<float>(base);
  }
  for (const auto& s : distractors) {
    for_each_in_box(d, s, [&](std::int64_t z, std::int64_t y, std::int64_t x) {
      data[d.index(z, y, x)] = static_cast<float>(config.background_intensity - config.distractor_contrast);
    });
  }
  for (const auto& s : lesions) {
    for_each_in_box(d, s, [&](std::int64_t z, std::int64_t y, std::int64_t x) {
      data[d.index(z, y, x)] = static_cast<float>(organ_level - config.lesion_contrast);
    });
  }
  for (auto& v : data) v = static_cast<float>(v + config.noise_std * noise(noise_rng));

  PhantomSample sample;
  sample.volume = Volume(d, std::move(data));
  sample.mask = SegMask(d, std::move(labels), 1);
  sample.label = label;
  sample.organ_centre = centre;
  sample.organ_radii = radius;
  for (const auto& l : lesions) sample.lesions.push_back({l.c, l.r});
  for (const auto& b : distractors) sample.distractors.push_back({b.c, b.r});
  return sample;
}

std::vector<PhantomSample> generate_all(const PhantomConfig& config) {
  const auto labels = phantom_labels(config);
  std::vector<PhantomSample> out;
  out.reserve(labels.size());
  for (std::size_t i = 0; i < labels.size(); ++i) out.push_back(generate_sample(config, i, labels[i]));
  return out;
}

Manifest generate(const PhantomConfig& config, const std::filesystem::path& out_dir) {
  const auto labels = phantom_labels(config);
  std::error_code ec;
  std::filesystem::create_directories(out_dir, ec);
  if (ec) throw Error(ErrorKind::Io, "cannot create " + out_dir.string() + ": " + ec.message());
  Manifest manifest;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    const auto sample = generate_sample(config, i, labels[i]);
    char vol_name[32], mask_name[32];
    std::snprintf(vol_name, sizeof vol_name, "vol_%04zu.vvol", i);
    std::snprintf(mask_name, sizeof mask_name, "mask_%04zu.vvol", i);
    save_volume(sample.volume, out_dir / vol_name);
    save_mask(sample.mask, out_dir / mask_name);
    manifest.push_back({vol_name, mask_name, sample.label});
  }
  save_manifest(manifest, out_dir / "manifest.json");
  return manifest;
}

void save_manifest(const Manifest& manifest, const std::filesystem::path& path) {
  nlohmann::json j = nlohmann::json::array();
  for (const auto& e : manifest) {
    j.push_back({{"volume", e.volume},
                 {"mask", e.mask.empty() ? nlohmann::json(nullptr) : nlohmann::json(e.mask)},
                 {"label", e.label}});
  }
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw Error(ErrorKind::Io, "cannot open " + path.string() + " for writing");
  out << j.dump(1) << '\n';
  if (!out) throw Error(ErrorKind::Io, "write failed for " + path.string());
}

Manifest load_manifest(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorKind::ManifestError, "cannot open manifest " + path.string());
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorKind::ManifestError, path.string() + ": " + e.what());
  }
  if (!j.is_array()) throw Error(ErrorKind::ManifestError, path.string() + ": expected a JSON array");
  Manifest manifest;
  for (const auto& e : j) {
    if (!e.is_object() || !e.contains("volume") || !e.contains("label") || !e.at("volume").is_string()) {
      throw Error(ErrorKind::ManifestError, path.string() + ": entries need 'volume' and 'label'");
    }
    ManifestEntry entry;
    entry.volume = e.at("volume").get<std::string>();
    if (e.contains("mask") && !e.at("mask").is_null()) entry.mask = e.at("mask").get<std::string>();
    const auto& label = e.at("label");
    if (!label.is_number_integer() || (label.get<int>() != 0 && label.get<int>() != 1)) {
      throw Error(ErrorKind::ManifestError, path.string() + ": label must be 0 or 1");
    }
    entry.label = label.get<int>();
    manifest.push_back(std::move(entry));
  }
  return manifest;
}

BayesReport bayes_check(const PhantomConfig& config, std::size_t samples) {
  PhantomConfig fresh = config;
  fresh.count = samples;
  fresh.seed = splitmix64(config.seed ^ 0x0ddba11ULL);
  const auto labels = phantom_labels(fresh);
  ScoredSet organ, background;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    const auto s = generate_sample(fresh, i, labels[i]);
    std::vector<double> inside, outside;
    const auto vals = s.volume.data();
    const auto mask = s.mask.labels();
    for (std::size_t v = 0; v < vals.size(); ++v) (mask[v] ? inside : outside).push_back(vals[v]);
    organ.scores.push_back(median_minus_mean(inside));
    background.scores.push_back(median_minus_mean(outside));
    organ.labels.push_back(labels[i]);
    background.labels.push_back(labels[i]);
  }
  return {roc_auc(organ), roc_auc(background)};
}

}  // namespace ofa

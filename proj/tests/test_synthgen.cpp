// Copyright 2026 The OFA3D Authors
// SPDX-License-Identifier: Apache-2.0

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>

#include <doctest.h>

#include "ofa/error.hpp"
#include "ofa/synthgen.hpp"
#include "test_support.hpp"

using namespace ofa;

namespace {

bool in_ellipsoid(const PhantomSample& s, std::int64_t z, std::int64_t y, std::int64_t x) {
  const double p[3] = {static_cast<double>(z), static_cast<double>(y), static_cast<double>(x)};
  double q = 0.0;
  for (int a = 0; a < 3; ++a) {
    const double t = (p[a] - s.organ_centre[a]) / s.organ_radii[a];
    q += t * t;
  }
  return q <= 1.0;
}

double dist2(const std::array<double, 3>& c, std::int64_t z, std::int64_t y, std::int64_t x) {
  const double dz = static_cast<double>(z) - c[0], dy = static_cast<double>(y) - c[1], dx = static_cast<double>(x) - c[2];
  return dz * dz + dy * dy + dx * dx;
}

PhantomConfig small_config(std::size_t count) {
  PhantomConfig c;
  c.count = count;
  c.seed = 5;
  return c;
}

}  // namespace

TEST_SUITE("synthgen") {

TEST_CASE("same seed gives a byte-identical dataset") {
  ofa::testing::TempDir a("synth"), b("synth");
  const auto cfg = small_config(6);
  const auto ma = generate(cfg, a.path());
  const auto mb = generate(cfg, b.path());
  REQUIRE(ma.size() == 6);
  for (const auto& e : ma) {
    CHECK(ofa::testing::read_file(a / e.volume) == ofa::testing::read_file(b / e.volume));
    CHECK(ofa::testing::read_file(a / e.mask) == ofa::testing::read_file(b / e.mask));
  }
  CHECK(ofa::testing::read_file(a / "manifest.json") == ofa::testing::read_file(b / "manifest.json"));
}

TEST_CASE("different seeds differ") {
  auto cfg = small_config(2);
  const auto s0 = generate_sample(cfg, 0, 1);
  cfg.seed = 6;
  const auto s1 = generate_sample(cfg, 0, 1);
  CHECK_FALSE(s0.volume == s1.volume);
}

TEST_CASE("class balance is exact") {
  auto cfg = small_config(200);
  const auto labels = phantom_labels(cfg);
  CHECK(std::count(labels.begin(), labels.end(), 1) == 100);
  CHECK(std::count(labels.begin(), labels.end(), 0) == 100);
  cfg.class_balance = 0.3;
  cfg.count = 50;
  const auto skew = phantom_labels(cfg);
  CHECK(std::count(skew.begin(), skew.end(), 1) == 15);
}

TEST_CASE("mask is exactly the organ ellipsoid") {
  const auto cfg = small_config(40);
  const auto labels = phantom_labels(cfg);
  const Dims3 d = cfg.dims;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    const auto s = generate_sample(cfg, i, labels[i]);
    std::size_t mismatches = 0;
    for (std::int64_t z = 0; z < d.d; ++z)
      for (std::int64_t y = 0; y < d.h; ++y)
        for (std::int64_t x = 0; x < d.w; ++x)
          mismatches += (s.mask.at(z, y, x) != 0) != in_ellipsoid(s, z, y, x);
    CHECK(mismatches == 0);
    const std::array<std::int64_t, 3> ext{d.d, d.h, d.w};
    for (int a = 0; a < 3; ++a) {
      CHECK(s.organ_radii[a] >= cfg.organ_radius_min);
      CHECK(s.organ_radii[a] <= cfg.organ_radius_max);
      CHECK(s.organ_centre[a] - s.organ_radii[a] >= 1.0);
      CHECK(s.organ_centre[a] + s.organ_radii[a] <= static_cast<double>(ext[a]) - 2.0);
    }
  }
}

TEST_CASE("lesions sit inside the organ and distractors outside") {
  const auto cfg = small_config(30);
  const auto labels = phantom_labels(cfg);
  const Dims3 d = cfg.dims;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    const auto s = generate_sample(cfg, i, labels[i]);
    CHECK(s.lesions.size() == static_cast<std::size_t>(labels[i]));
    CHECK(s.distractors.size() == cfg.distractor_count);
    for (std::int64_t z = 0; z < d.d; ++z)
      for (std::int64_t y = 0; y < d.h; ++y)
        for (std::int64_t x = 0; x < d.w; ++x) {
          for (const auto& l : s.lesions)
            if (dist2(l.centre, z, y, x) <= l.radius * l.radius) CHECK(s.mask.at(z, y, x) != 0);
          for (const auto& b : s.distractors)
            if (dist2(b.centre, z, y, x) <= b.radius * b.radius) CHECK(s.mask.at(z, y, x) == 0);
        }
  }
}

TEST_CASE("the label only adds the lesion") {
  auto cfg = small_config(4);
  cfg.noise_std = 0.0;
  const auto neg = generate_sample(cfg, 2, 0);
  const auto pos = generate_sample(cfg, 2, 1);
  CHECK(neg.mask == pos.mask);
  REQUIRE(pos.lesions.size() == 1);
  const auto& l = pos.lesions.front();
  const Dims3 d = cfg.dims;
  for (std::int64_t z = 0; z < d.d; ++z)
    for (std::int64_t y = 0; y < d.h; ++y)
      for (std::int64_t x = 0; x < d.w; ++x) {
        const bool lesion = dist2(l.centre, z, y, x) <= l.radius * l.radius;
        CHECK((neg.volume.at(z, y, x) != pos.volume.at(z, y, x)) == lesion);
      }
  // Noise-free levels.
  const float organ = neg.volume.at(static_cast<std::int64_t>(std::lround(neg.organ_centre[0])),
                                    static_cast<std::int64_t>(std::lround(neg.organ_centre[1])),
                                    static_cast<std::int64_t>(std::lround(neg.organ_centre[2])));
  CHECK(organ >= cfg.organ_intensity - cfg.organ_intensity_jitter - 1e-6);
  CHECK(organ <= cfg.organ_intensity + cfg.organ_intensity_jitter + 1e-6);
  CHECK(neg.volume.at(0, 0, 0) == doctest::Approx(cfg.background_intensity));
}

TEST_CASE("infeasible geometry") {
  auto kind = [](const PhantomConfig& c) {
    try {
      c.validate();
    } catch (const Error& e) {
      return e.kind();
    }
    return ErrorKind::Io;
  };
  PhantomConfig big;
  big.organ_radius_min = 10.0;
  big.organ_radius_max = 11.0;
  CHECK(kind(big) == ErrorKind::ConfigInfeasible);
  PhantomConfig lesion;
  lesion.lesion_radius_max = 5.0;
  CHECK(kind(lesion) == ErrorKind::ConfigInfeasible);
  PhantomConfig bad;
  bad.class_balance = 1.0;
  CHECK(kind(bad) == ErrorKind::BadConfig);
  PhantomConfig ok;
  CHECK(kind(ok) == ErrorKind::Io);
}

TEST_CASE("config json round trip") {
  PhantomConfig c;
  c.dims = {16, 24, 32};
  c.organ_radius_min = 4.0;
  c.noise_std = 0.2;
  c.seed = 99;
  nlohmann::json j = c;
  const auto back = j.get<PhantomConfig>();
  CHECK(back.dims == c.dims);
  CHECK(back.organ_radius_min == 4.0);
  CHECK(back.noise_std == 0.2);
  CHECK(back.seed == 99);
  const auto partial = nlohmann::json{{"count", 12}}.get<PhantomConfig>();
  CHECK(partial.count == 12);
  CHECK(partial.lesion_radius_max == PhantomConfig{}.lesion_radius_max);
}

TEST_CASE("manifest round trip") {
  ofa::testing::TempDir tmp("manifest");
  const Manifest m{{"a.vvol", "ma.vvol", 1}, {"b.vvol", "", 0}};
  save_manifest(m, tmp / "manifest.json");
  const auto j = nlohmann::json::parse(ofa::testing::read_file(tmp / "manifest.json"));
  CHECK(j[1]["mask"].is_null());
  const auto back = load_manifest(tmp / "manifest.json");
  REQUIRE(back.size() == 2);
  CHECK(back[0].mask == "ma.vvol");
  CHECK(back[1].mask.empty());
  CHECK(back[1].label == 0);
  {
    std::ofstream out(tmp / "bad.json");
    out << R"([{"volume": "a.vvol", "label": 2}])";
  }
  try {
    load_manifest(tmp / "bad.json");
    FAIL("bad label accepted");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::ManifestError);
  }
}

TEST_CASE("bayes check") {
  PhantomConfig clean;
  clean.noise_std = 0.0;
  clean.lesion_contrast = 0.6;
  CHECK(bayes_check(clean, 200).organ_oracle_auc == 1.0);

  PhantomConfig blind;
  blind.lesion_contrast = 0.0;
  CHECK(std::abs(bayes_check(blind, 500).organ_oracle_auc - 0.5) <= 0.07);

  const auto def = bayes_check(PhantomConfig{}, 500);
  CHECK(def.organ_oracle_auc >= 0.95);
  CHECK(def.background_oracle_auc <= 0.65);
  CHECK(def.learnable());
}

}  // TEST_SUITE

// Copyright 2026 The OFA3D Authors
// SPDX-License-Identifier: Apache-2.0
//
// Checkpoint file: a text manifest followed by raw little-endian doubles.
//
//   OFACKPT1
//   config {...VitConfig json...}
//   meta {...free-form json...}
//   adam <t> <lr> <beta1> <beta2> <eps>      (only when optimizer state is saved)
//   tensors <count>
//   <name> <rows> <cols> <byte offset into payload>
//   ...
//   payload
//   <payload bytes>
//
// Optimizer moments are stored as tensors named adam.m.<param> / adam.v.<param>.

#pragma once

#include <filesystem>
#include <optional>

#include <json.hpp>

#include "ofa/optim.hpp"
#include "ofa/vit3d.hpp"

namespace ofa {

struct Checkpoint {
  VitParams params;
  std::optional<AdamState> optimizer;
  nlohmann::json meta = nlohmann::json::object();
};

void save_checkpoint(const std::filesystem::path& path, const VitParams& params, const AdamState* optimizer = nullptr,
                     const nlohmann::json& meta = nlohmann::json::object());

/// Throws BadHeader, PayloadMismatch or Io.
Checkpoint load_checkpoint(const std::filesystem::path& path);

}  // namespace ofa

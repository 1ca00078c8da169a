// Copyright 2026 The OFA3D Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

namespace ofa::cli {

/// Every declared key with its default. Keys whose default is null accept any
/// value; `phantom.seed` and `data.split_seed` fall back to the global seed.
nlohmann::json default_config();

/// defaults <- config file <- `key=value` overrides <- seed. Unknown keys are
/// rejected with BadConfig. Values are parsed as JSON, falling back to a
/// plain string.
nlohmann::json resolve_config(const std::optional<std::filesystem::path>& file,
                              const std::vector<std::string>& overrides, std::optional<std::uint64_t> seed,
                              std::optional<std::size_t> threads);

/// Entry point of the `ofa` tool. Returns the process exit code:
/// 0 success, 1 runtime failure, 2 configuration or usage error.
int run(int argc, const char* const* argv);

}  // namespace ofa::cli

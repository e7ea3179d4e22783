// Copyright (c) 2026 The mvdit Authors
// SPDX-License-Identifier: Apache-2.0
//
// Checkpoint file:
//   "MVDT" | u16 version | text config snapshot | u64 step | u64 optimizer steps
//   | u32 record count | records | f32 arrays
// Each record is u32 byte length followed by: text name, u32 rank, u64 dims,
// u64 offset into the array section, u64 fnv1a64 of the array bytes.
// Parameter records come first in canonical order, then "adam.m/<name>" and
// "adam.v/<name>" for each parameter.

#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <vector>

#include "mvdit/app/run_config.hpp"
#include "mvdit/model/param_store.hpp"

namespace mvdit::app {

inline constexpr std::uint16_t kCheckpointVersion = 1;

struct Checkpoint {
    RunConfig config;  // paths are not stored and stay empty on load
    std::int64_t step = 0;
    model::ParamStore<float> params;
    std::int64_t optimizer_steps = 0;
    std::vector<std::vector<float>> adam_m, adam_v;  // empty or one per parameter
};

std::vector<std::uint8_t> encode_checkpoint(const Checkpoint& checkpoint);

/// Throws FormatError on corruption, ConfigError when `expected` is given and
/// differs from the stored model config (checked before any array is read).
Checkpoint decode_checkpoint(std::span<const std::uint8_t> bytes,
                             const std::optional<model::ModelConfig>& expected = {});

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& checkpoint);
Checkpoint load_checkpoint(const std::filesystem::path& path, const std::optional<model::ModelConfig>& expected = {});

}  // namespace mvdit::app

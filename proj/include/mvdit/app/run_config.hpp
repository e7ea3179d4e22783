// Copyright (c) 2026 The mvdit Authors
// SPDX-License-Identifier: Apache-2.0
//
// Plain-text run configuration: INI sections [model], [optimizer], [train],
// [data] and [sampler] with `key = value` lines. Relative paths resolve
// against the config file's directory.

#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "mvdit/flow/flow.hpp"
#include "mvdit/model/config.hpp"
#include "mvdit/toyworld/scene_io.hpp"
#include "mvdit/train/adam.hpp"

namespace mvdit::app {

struct TrainSettings {
    std::int64_t batch_size = 2;
    std::int64_t grad_accum = 1;
    std::int64_t steps = 200;
    std::int64_t log_every = 10;
    std::int64_t checkpoint_every = 100;
    std::int64_t holdout = 16;  // trailing manifest entries kept out of training
    std::uint64_t seed = 0;
};

struct SamplerDefaults {
    std::int64_t steps = 30;
    flow::Guidance guidance;
    std::int64_t k = 0;
};

struct RunConfig {
    model::ModelConfig model;
    train::AdamConfig optimizer;
    TrainSettings train;
    std::filesystem::path dataset;
    std::filesystem::path out_dir;
    std::vector<toyworld::Bucket> buckets{{32, 32, 16}, {32, 32, 8}};
    SamplerDefaults sampler;

    /// Every violated rule, including missing paths when `check_paths`.
    std::vector<std::string> violations(bool check_paths = true) const;
    /// Throws ConfigError listing every violation.
    void validate(bool check_paths = true) const;

    /// Canonical text of everything but paths; stored in checkpoints.
    std::string snapshot() const;
    /// Full INI text including paths.
    std::string to_ini() const;
};

struct ConfigError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

/// Parses INI text. Unknown keys, malformed numbers and missing sections are
/// collected and reported together as one ConfigError.
RunConfig parse_run_config(const std::string& text, const std::filesystem::path& base_dir = {});
RunConfig load_run_config(const std::filesystem::path& path);

}  // namespace mvdit::app

// Copyright (c) 2026 The mvdit Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <ostream>
#include <stdexcept>
#include <string>
#include <vector>

#include "mvdit/app/checkpoint.hpp"
#include "mvdit/app/run_config.hpp"
#include "mvdit/conditioning/condition.hpp"
#include "mvdit/toyworld/scene_io.hpp"

namespace mvdit::app {

struct TrainingError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

/// Decoded scenes of a dataset, cached as latents with their conditions.
class SceneCache {
  public:
    SceneCache(toyworld::Manifest manifest, std::int64_t codec_factor)
        : manifest_(std::move(manifest)), codec_factor_(codec_factor) {}

    struct Item {
        TensorF latent;  // (V, T, C, h, w)
        conditioning::ConditionTriple condition;
    };
    const Item& get(std::size_t index);
    const toyworld::Manifest& manifest() const { return manifest_; }

  private:
    toyworld::Manifest manifest_;
    std::int64_t codec_factor_;
    std::map<std::size_t, Item> items_;
};

/// Problems with the dataset for this config (shapes, empty buckets).
std::vector<std::string> dataset_violations(const RunConfig& config, const toyworld::Manifest& manifest);

/// Manifest entries of `bucket` usable for training (holdout excluded).
std::vector<std::size_t> training_indices(const RunConfig& config, const toyworld::Manifest& manifest,
                                          const toyworld::Bucket& bucket);

std::filesystem::path checkpoint_path(const std::filesystem::path& out_dir, std::int64_t step);
inline constexpr const char* kLatestCheckpoint = "latest.mvdt";
inline constexpr const char* kMetricsLog = "metrics.log";

struct TrainLogLine {
    std::int64_t step = 0;
    double loss = 0;
    double wall_ms = 0;
};

struct TrainResult {
    Checkpoint checkpoint;
    std::vector<TrainLogLine> log;
};

/// Validates config and dataset, then trains. Writes checkpoints every
/// `checkpoint_every` steps and at the end (also as latest.mvdt), and
/// mirrors every log line to `out` and out_dir/metrics.log.
TrainResult run_training(const RunConfig& config, std::ostream& out);

/// Fresh (step 0) checkpoint with initial parameters.
Checkpoint initial_checkpoint(const RunConfig& config);

}  // namespace mvdit::app

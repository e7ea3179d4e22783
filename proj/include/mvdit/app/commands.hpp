// Copyright (c) 2026 The mvdit Authors
// SPDX-License-Identifier: Apache-2.0
//
// Command implementations behind the CLI. Each validates all of its inputs
// before writing anything.

#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include "mvdit/app/checkpoint.hpp"
#include "mvdit/flow/flow.hpp"
#include "mvdit/model/stdit.hpp"
#include "mvdit/tensor/grad_check.hpp"
#include "mvdit/toyworld/scene_io.hpp"

namespace mvdit::app {

struct UsageError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

/// Guidance overrides; unset scales come from the checkpoint's sampler
/// defaults, and lambda_t drops to 1.0 for night captions unless given.
struct GuidanceFlags {
    std::optional<double> lambda_t, lambda_l, lambda_r;
    flow::Guidance resolve(const flow::Guidance& defaults, const conditioning::ConditionTriple& cond) const;
};

/// Generates one clip for the conditions of `scene` (optionally with a
/// replaced caption), clamping the first k frames to the scene's frames.
codec::VideoTensor generate_clip(const model::StditModel<float>& net, const toyworld::SceneFile& scene,
                                 const flow::SamplerConfig& sampler, std::int64_t k);

/// Replaces the caption of a scene when `caption` is set.
toyworld::SceneFile with_caption(toyworld::SceneFile scene, const std::optional<std::string>& caption);

/// Replaces the leading two words of a toy caption ("day clear", "night
/// dark") with `weather`, keeping the rest. Throws UsageError on captions of
/// fewer than two words.
std::string with_weather(const std::string& caption, const std::string& weather);

struct SampleOptions {
    std::filesystem::path checkpoint, scene, out;
    std::optional<std::int64_t> steps;
    GuidanceFlags guidance;
    std::optional<std::int64_t> k;
    std::uint64_t seed = 0;
    std::optional<std::string> caption;
};
/// Writes `out` (scene file) and `out` with a .png extension (contact sheet).
toyworld::SceneFile cmd_sample(const SampleOptions& options, std::ostream& log);

struct RolloutOptions {
    std::filesystem::path checkpoint, out;
    std::vector<std::filesystem::path> scenes;  // one per clip; the last repeats
    std::vector<std::string> captions;          // optional per-clip captions; the last repeats
    std::int64_t clips = 1;
    std::int64_t k = 4;
    bool seed_frames = false;  // clamp clip 0 to the first scene's first k frames
    std::optional<std::int64_t> steps;
    GuidanceFlags guidance;
    std::uint64_t seed = 0;
};
toyworld::SceneFile cmd_rollout(const RolloutOptions& options, std::ostream& log);

struct EvalOptions {
    std::filesystem::path checkpoint;  // unused with ground_truth
    std::filesystem::path dataset;
    std::int64_t n = 16;
    std::uint64_t seed = 0;
    std::optional<std::int64_t> steps;
    GuidanceFlags guidance;
    std::optional<std::string> caption;
    std::optional<std::string> weather;  // applied after `caption`, see with_weather
    bool ground_truth = false;  // score the ground-truth clips themselves
};

struct EvalReport {
    double feat_dist = 0;
    double layout_adherence = 0;
    double temp_consistency = 0;
    double background_intensity = 0;
    std::int64_t n = 0;
    std::uint64_t seed = 0;
    std::int64_t steps = 0;
    std::int64_t checkpoint_step = -1;
    /// key=value lines; always includes feat_dist, layout_adherence,
    /// temp_consistency, n and seed.
    std::string to_text() const;
};
/// Scores the last n manifest entries.
EvalReport cmd_eval(const EvalOptions& options, std::ostream& log);

struct GradCheckGroup {
    std::string group;
    double max_error = 0;
};
struct GradCheckReport {
    std::vector<GradCheckGroup> groups;
    double max_error = 0;
    double threshold = 1e-4;
    bool passed() const { return max_error < threshold; }
    std::string to_text() const;
};
/// Full model + rectified-flow loss in 64-bit on a toy scene of the model's
/// shape, against Richardson-extrapolated central differences.
GradCheckReport full_model_grad_check(const model::ModelConfig& config, std::uint64_t seed,
                                      const ad::GradCheckOptions& options = ad::kNetworkCheck);

struct MakeDatasetOptions {
    std::int64_t n = 256;
    std::uint64_t seed = 0;
    std::filesystem::path out;
    std::vector<toyworld::Bucket> buckets{{32, 32, 16}, {32, 32, 8}};
    std::int64_t views = 6;
};
toyworld::Manifest cmd_make_dataset(const MakeDatasetOptions& options);

}  // namespace mvdit::app

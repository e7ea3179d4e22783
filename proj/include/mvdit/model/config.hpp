// Copyright (c) 2026 The mvdit Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "mvdit/tensor/tensor.hpp"

namespace mvdit::model {

/// Architecture and data-shape hyperparameters. `frames` is the longest clip
/// the model accepts; shorter clips (other buckets) use a prefix of the
/// temporal embedding table.
struct ModelConfig {
    std::int64_t blocks = 8;
    std::int64_t hidden = 128;
    std::int64_t heads = 4;
    std::int64_t patch = 2;
    std::int64_t patch_t = 1;
    std::int64_t codec_factor = 2;
    std::int64_t views = 6;
    std::int64_t frames = 16;
    std::int64_t height = 32;
    std::int64_t width = 32;
    std::int64_t text_len = 16;
    std::int64_t max_instances = 8;
    std::int64_t control_depth = 4;
    std::int64_t mlp_ratio = 4;
    std::int64_t time_embed_dim = 128;
    std::int64_t category_dim = 16;
    std::int64_t instance_dim = 16;

    static constexpr std::int64_t kPixelChannels = 3;

    std::int64_t latent_channels() const { return kPixelChannels * codec_factor * codec_factor; }
    std::int64_t latent_height() const { return height / codec_factor; }
    std::int64_t latent_width() const { return width / codec_factor; }
    std::int64_t grid_height() const { return latent_height() / patch; }
    std::int64_t grid_width() const { return latent_width() / patch; }
    std::int64_t tokens_per_frame() const { return grid_height() * grid_width(); }
    std::int64_t patch_dim() const { return patch * patch * patch_t * latent_channels(); }

    /// Latent clip shape (V, T, C_lat, h, w) for `clip_frames` frames.
    Shape latent_shape(std::int64_t clip_frames) const;

    /// Every violated invariant, human readable; empty when valid.
    std::vector<std::string> violations() const;
    void validate() const;

    bool operator==(const ModelConfig&) const = default;
};

/// V=2, T=2, 8x8 frames, two blocks, D=16: the gradient-check configuration.
ModelConfig micro_config();

}  // namespace mvdit::model

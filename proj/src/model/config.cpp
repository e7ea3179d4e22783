// Copyright (c) 2026 The mvdit Authors
// SPDX-License-Identifier: Apache-2.0

#include "mvdit/model/config.hpp"

#include <stdexcept>

#include "mvdit/conditioning/caption.hpp"
#include "mvdit/conditioning/layout.hpp"

namespace mvdit::model {

Shape ModelConfig::latent_shape(std::int64_t clip_frames) const {
    return {views, clip_frames, latent_channels(), latent_height(), latent_width()};
}

std::vector<std::string> ModelConfig::violations() const {
    std::vector<std::string> out;
    auto positive = [&](std::int64_t v, const char* name) {
        if (v < 1) out.push_back(std::string(name) + " must be >= 1");
    };
    positive(blocks, "blocks");
    positive(hidden, "hidden");
    positive(heads, "heads");
    positive(patch, "patch");
    positive(patch_t, "patch_t");
    positive(codec_factor, "codec_factor");
    positive(views, "views");
    positive(frames, "frames");
    positive(height, "height");
    positive(width, "width");
    positive(mlp_ratio, "mlp_ratio");
    positive(time_embed_dim, "time_embed_dim");
    positive(category_dim, "category_dim");
    positive(instance_dim, "instance_dim");
    if (!out.empty()) return out;
    if (hidden % heads != 0) out.push_back("hidden must be divisible by heads");
    if (time_embed_dim % 2 != 0) out.push_back("time_embed_dim must be even");
    if (height % codec_factor != 0 || width % codec_factor != 0) {
        out.push_back("height and width must be divisible by codec_factor");
    } else if (latent_height() % patch != 0 || latent_width() % patch != 0) {
        out.push_back("latent height and width must be divisible by patch");
    }
    if (frames % patch_t != 0) out.push_back("frames must be divisible by patch_t");
    if (control_depth < 0 || control_depth > blocks) out.push_back("control_depth must lie in [0, blocks]");
    if (text_len != conditioning::kCaptionLength) out.push_back("text_len must equal the caption length (16)");
    if (max_instances != conditioning::kMaxInstances) out.push_back("max_instances must equal 8");
    return out;
}

void ModelConfig::validate() const {
    const auto problems = violations();
    if (problems.empty()) return;
    std::string message = "invalid model config:";
    for (const auto& p : problems) message += "\n  - " + p;
    throw std::invalid_argument(message);
}

ModelConfig micro_config() {
    ModelConfig c;
    c.blocks = 2;
    c.hidden = 16;
    c.heads = 2;
    c.views = 2;
    c.frames = 2;
    c.height = 8;
    c.width = 8;
    c.control_depth = 1;
    c.time_embed_dim = 16;
    c.category_dim = 4;
    c.instance_dim = 4;
    return c;
}

}  // namespace mvdit::model

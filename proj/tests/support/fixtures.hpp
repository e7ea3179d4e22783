// Copyright (c) 2026 The mvdit Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <random>
#include <vector>

#include "mvdit/conditioning/condition.hpp"
#include "mvdit/model/config.hpp"
#include "mvdit/tensor/tensor.hpp"

namespace mvdit::fixtures {

template <typename T>
Tensor<T> random_latent(const model::ModelConfig& c, std::int64_t batch, std::int64_t frames, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    Shape shape{batch, c.views, frames, c.latent_channels(), c.latent_height(), c.latent_width()};
    return Tensor<T>::randn(shape, rng);
}

inline conditioning::ConditionTriple random_condition(const model::ModelConfig& c, std::int64_t frames,
                                                      std::uint64_t seed, const char* caption = "day clear busy highway") {
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<float> u(0.1f, 0.9f);
    std::uniform_int_distribution<int> count(0, 3);
    std::vector<conditioning::LayoutEntry> entries;
    for (std::int64_t t = 0; t < frames; ++t) {
        for (std::int64_t v = 0; v < c.views; ++v) {
            const int n = count(rng);
            for (int i = 0; i < n; ++i) {
                conditioning::LayoutEntry e;
                e.frame = static_cast<std::uint16_t>(t);
                e.view = static_cast<std::uint16_t>(v);
                e.cx = u(rng);
                e.cy = u(rng);
                e.sw = u(rng) * 0.3f;
                e.sh = u(rng) * 0.3f;
                e.heading = (u(rng) - 0.5f) * 6.f;
                e.instance = static_cast<std::uint32_t>(i + 1);
                e.category = static_cast<std::uint16_t>(i % 5);
                entries.push_back(e);
            }
        }
    }
    auto sketch = conditioning::RoadSketch::zeros(c.views, frames, c.height, c.width);
    std::bernoulli_distribution bit(0.15);
    for (auto& b : sketch.bits) b = bit(rng) ? 1 : 0;
    return conditioning::make_condition(conditioning::tokenize_caption(caption), std::move(entries),
                                        std::move(sketch));
}

}  // namespace mvdit::fixtures

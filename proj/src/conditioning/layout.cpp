// Copyright (c) 2026 The mvdit Authors
// SPDX-License-Identifier: Apache-2.0

#include "mvdit/conditioning/layout.hpp"

#include <cmath>
#include <numbers>
#include <stdexcept>

namespace mvdit::conditioning {

double normalize_heading(double radians) {
    constexpr double two_pi = 2.0 * std::numbers::pi;
    double wrapped = std::fmod(radians + std::numbers::pi, two_pi);
    if (wrapped < 0) wrapped += two_pi;
    wrapped -= std::numbers::pi;
    return wrapped >= std::numbers::pi ? -std::numbers::pi : wrapped;
}

std::vector<double> fourier_encode(std::span<const double> values, std::int64_t bands) {
    if (bands < 1) {
        throw std::invalid_argument("fourier_encode: bands must be >= 1");
    }
    std::vector<double> features;
    features.reserve(values.size() * static_cast<std::size_t>(2 * bands));
    for (double v : values) {
        for (std::int64_t b = 0; b < bands; ++b) {
            const double arg = std::ldexp(std::numbers::pi * v, static_cast<int>(b));
            features.push_back(std::sin(arg));
            features.push_back(std::cos(arg));
        }
    }
    return features;
}

std::vector<double> layout_geometry_features(const LayoutEntry& entry) {
    const double geometry[kLayoutGeometryValues] = {entry.cx, entry.cy, entry.sw, entry.sh,
                                                    normalize_heading(entry.heading) / std::numbers::pi};
    return fourier_encode(geometry, kFourierBands);
}

std::vector<LayoutEntry> entries_for(std::span<const LayoutEntry> entries, std::int64_t frame, std::int64_t view) {
    std::vector<LayoutEntry> out;
    for (const auto& e : entries) {
        if (e.frame == frame && e.view == view) out.push_back(e);
    }
    return out;
}

}  // namespace mvdit::conditioning

// Copyright (c) 2026 The mvdit Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <vector>

namespace mvdit::conditioning {

struct Point2 {
    double x = 0;
    double y = 0;
};

using Polyline = std::vector<Point2>;

/// A view of the 2-D world: a W x H crop centred at `center`, rotated by
/// `rotation` radians. View pixel (px, py) covers the unit square at
/// (px, py); its centre maps to center + R(rotation) (px + 0.5 - W/2, py + 0.5 - H/2).
struct CameraRig {
    Point2 center;
    double rotation = 0;

    Point2 to_view(Point2 world, std::int64_t height, std::int64_t width) const;
    Point2 to_world(Point2 view, std::int64_t height, std::int64_t width) const;
};

/// Binary lane raster with axes (V, T, 1, H, W).
struct RoadSketch {
    std::int64_t views = 0, frames = 0, height = 0, width = 0;
    std::vector<std::uint8_t> bits;

    static RoadSketch zeros(std::int64_t views, std::int64_t frames, std::int64_t height, std::int64_t width);

    std::uint8_t at(std::int64_t v, std::int64_t t, std::int64_t y, std::int64_t x) const {
        return bits[static_cast<std::size_t>(((v * frames + t) * height + y) * width + x)];
    }
    std::uint8_t& at(std::int64_t v, std::int64_t t, std::int64_t y, std::int64_t x) {
        return bits[static_cast<std::size_t>(((v * frames + t) * height + y) * width + x)];
    }
    bool operator==(const RoadSketch&) const = default;
};

/// Projects each polyline into every view and draws 1-pixel Bresenham lines,
/// clipped to the frame. Lanes are static, so every frame gets the same raster.
RoadSketch rasterize_sketch(const std::vector<Polyline>& lanes, std::int64_t views, std::int64_t frames,
                            std::int64_t height, std::int64_t width, const std::vector<CameraRig>& rigs);

}  // namespace mvdit::conditioning

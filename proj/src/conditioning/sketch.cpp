// Copyright (c) 2026 The mvdit Authors
// SPDX-License-Identifier: Apache-2.0

#include "mvdit/conditioning/sketch.hpp"

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <stdexcept>

namespace mvdit::conditioning {

Point2 CameraRig::to_view(Point2 world, std::int64_t height, std::int64_t width) const {
    const double dx = world.x - center.x;
    const double dy = world.y - center.y;
    const double c = std::cos(rotation);
    const double s = std::sin(rotation);
    // Inverse rotation.
    return {c * dx + s * dy + 0.5 * static_cast<double>(width), -s * dx + c * dy + 0.5 * static_cast<double>(height)};
}

Point2 CameraRig::to_world(Point2 view, std::int64_t height, std::int64_t width) const {
    const double dx = view.x - 0.5 * static_cast<double>(width);
    const double dy = view.y - 0.5 * static_cast<double>(height);
    const double c = std::cos(rotation);
    const double s = std::sin(rotation);
    return {center.x + c * dx - s * dy, center.y + s * dx + c * dy};
}

RoadSketch RoadSketch::zeros(std::int64_t views, std::int64_t frames, std::int64_t height, std::int64_t width) {
    RoadSketch sketch{views, frames, height, width, {}};
    sketch.bits.assign(static_cast<std::size_t>(views * frames * height * width), 0);
    return sketch;
}

namespace {

void draw_line(std::vector<std::uint8_t>& raster, std::int64_t height, std::int64_t width, std::int64_t x0,
               std::int64_t y0, std::int64_t x1, std::int64_t y1) {
    const std::int64_t dx = std::llabs(x1 - x0);
    const std::int64_t dy = -std::llabs(y1 - y0);
    const std::int64_t sx = x0 < x1 ? 1 : -1;
    const std::int64_t sy = y0 < y1 ? 1 : -1;
    std::int64_t err = dx + dy;
    while (true) {
        if (x0 >= 0 && x0 < width && y0 >= 0 && y0 < height) {
            raster[static_cast<std::size_t>(y0 * width + x0)] = 1;
        }
        if (x0 == x1 && y0 == y1) break;
        const std::int64_t e2 = 2 * err;
        if (e2 >= dy) {
            err += dy;
            x0 += sx;
        }
        if (e2 <= dx) {
            err += dx;
            y0 += sy;
        }
    }
}

}  // namespace

RoadSketch rasterize_sketch(const std::vector<Polyline>& lanes, std::int64_t views, std::int64_t frames,
                            std::int64_t height, std::int64_t width, const std::vector<CameraRig>& rigs) {
    if (static_cast<std::int64_t>(rigs.size()) != views) {
        throw std::invalid_argument("rasterize_sketch: one camera rig per view required");
    }
    auto sketch = RoadSketch::zeros(views, frames, height, width);
    std::vector<std::uint8_t> raster(static_cast<std::size_t>(height * width));
    for (std::int64_t v = 0; v < views; ++v) {
        std::fill(raster.begin(), raster.end(), 0);
        for (const auto& lane : lanes) {
            for (std::size_t i = 0; i + 1 < lane.size(); ++i) {
                const auto a = rigs[v].to_view(lane[i], height, width);
                const auto b = rigs[v].to_view(lane[i + 1], height, width);
                draw_line(raster, height, width, static_cast<std::int64_t>(std::floor(a.x)),
                          static_cast<std::int64_t>(std::floor(a.y)), static_cast<std::int64_t>(std::floor(b.x)),
                          static_cast<std::int64_t>(std::floor(b.y)));
            }
        }
        for (std::int64_t t = 0; t < frames; ++t) {
            std::copy(raster.begin(), raster.end(), sketch.bits.begin() + ((v * frames + t) * height * width));
        }
    }
    return sketch;
}

}  // namespace mvdit::conditioning

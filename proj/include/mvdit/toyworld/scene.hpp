// Copyright (c) 2026 The mvdit Authors
// SPDX-License-Identifier: Apache-2.0
//
// Procedural 2-D traffic scenes seen by several overlapping cameras. Pixels,
// layout boxes and the road sketch are all derived from the same world state.
//
// World frame: x grows along the road, y across it. Vehicles wrap around in x
// with period `world_length`.

#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

#include "mvdit/codec/latent_codec.hpp"
#include "mvdit/conditioning/layout.hpp"
#include "mvdit/conditioning/sketch.hpp"

namespace mvdit::toyworld {

using conditioning::CameraRig;
using conditioning::LayoutEntry;
using conditioning::Point2;
using conditioning::Polyline;
using conditioning::RoadSketch;

enum class Weather { kClear, kRain, kFog, kNight };

std::string_view weather_word(Weather w);
/// Throws invalid_argument for unknown words.
Weather parse_weather(std::string_view word);

/// Background colour and noise levels for one weather word.
struct Palette {
    std::array<float, 3> background;
    std::array<float, 3> lane;
    float texture_sigma;  // static per-pixel noise
    float frame_sigma;    // fresh noise every frame
};
Palette palette(Weather w);

struct Vehicle {
    std::uint16_t category = 0;
    std::array<float, 3> color{};
    double length = 6, width = 3;
    std::size_t lane = 0;
    double speed = 1;  // world units per frame along x; negative drives backwards
    double offset = 0; // x at frame 0
    std::uint32_t instance = 0;
};

struct ToySceneSpec {
    std::uint64_t seed = 0;
    std::vector<Polyline> lanes;  // monotone in x, spanning the world
    std::vector<Vehicle> vehicles;
    Weather weather = Weather::kClear;
    std::vector<CameraRig> rigs;
    std::int64_t frames = 16, height = 32, width = 32;
    double world_start = 0, world_length = 0;

    std::int64_t views() const { return static_cast<std::int64_t>(rigs.size()); }
    /// Lists every violated rule; empty when valid.
    std::vector<std::string> violations() const;
};

/// Position and heading of a vehicle at a frame.
struct VehiclePose {
    Point2 center;
    double heading = 0;
};
VehiclePose vehicle_pose(const ToySceneSpec& spec, const Vehicle& vehicle, std::int64_t frame);

/// y of a lane polyline at x (clamped to its ends).
double lane_y(const Polyline& lane, double x);

struct RenderedScene {
    codec::VideoTensor video;  // (V, T, 3, H, W)
    std::vector<LayoutEntry> layouts;
    RoadSketch sketch;
    std::string caption;
    ToySceneSpec spec;
};

RenderedScene generate_scene(const ToySceneSpec& spec);

/// Fraction of view a's pixel centres that land inside view b.
double view_overlap(const CameraRig& a, const CameraRig& b, std::int64_t height, std::int64_t width);

struct SceneShape {
    std::int64_t views = 6, frames = 16, height = 32, width = 32;
};

/// Randomized but valid spec; fully determined by (seed, shape).
ToySceneSpec random_scene_spec(std::uint64_t seed, const SceneShape& shape);

/// "day <clear|rain|fog> <busy|quiet> highway" or "night dark <busy|quiet> highway".
std::string scene_caption(const ToySceneSpec& spec);

}  // namespace mvdit::toyworld

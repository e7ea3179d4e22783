// Copyright (c) 2026 The mvdit Authors
// SPDX-License-Identifier: Apache-2.0

#include "mvdit/toyworld/scene.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <random>
#include <set>
#include <stdexcept>

#include "mvdit/util/rng.hpp"

namespace mvdit::toyworld {
namespace {

constexpr double kPi = std::numbers::pi;
constexpr std::int64_t kMaxVehicles = conditioning::kMaxInstances;
constexpr double kMinOverlap = 0.25;
constexpr double kRigSpacing = 0.6;  // fraction of the view width

// Random streams of one scene.
enum Stream : std::uint64_t { kLayoutStream = 1, kVehicleStream, kRigStream, kTextureStream, kFrameNoiseStream };

double wrap(double x, double start, double length) {
    double r = std::fmod(x - start, length);
    if (r < 0) r += length;
    return start + r;
}

bool inside_box(Point2 p, Point2 center, double heading, double length, double width) {
    const double dx = p.x - center.x, dy = p.y - center.y;
    const double c = std::cos(heading), s = std::sin(heading);
    const double along = c * dx + s * dy;
    const double across = -s * dx + c * dy;
    return std::abs(along) <= 0.5 * length && std::abs(across) <= 0.5 * width;
}

}  // namespace

std::string_view weather_word(Weather w) {
    switch (w) {
        case Weather::kClear: return "clear";
        case Weather::kRain: return "rain";
        case Weather::kFog: return "fog";
        case Weather::kNight: return "night";
    }
    return "clear";
}

Weather parse_weather(std::string_view word) {
    for (auto w : {Weather::kClear, Weather::kRain, Weather::kFog, Weather::kNight}) {
        if (weather_word(w) == word) return w;
    }
    throw std::invalid_argument("unknown weather word: " + std::string(word));
}

Palette palette(Weather w) {
    switch (w) {
        case Weather::kClear: return {{0.50f, 0.56f, 0.50f}, {0.80f, 0.80f, 0.72f}, 0.02f, 0.01f};
        case Weather::kRain: return {{0.38f, 0.42f, 0.48f}, {0.65f, 0.65f, 0.62f}, 0.025f, 0.025f};
        case Weather::kFog: return {{0.72f, 0.72f, 0.74f}, {0.90f, 0.90f, 0.88f}, 0.02f, 0.01f};
        case Weather::kNight: return {{0.08f, 0.08f, 0.15f}, {0.40f, 0.40f, 0.32f}, 0.02f, 0.01f};
    }
    return palette(Weather::kClear);
}

double lane_y(const Polyline& lane, double x) {
    if (lane.empty()) throw std::invalid_argument("lane_y: empty lane");
    if (x <= lane.front().x) return lane.front().y;
    for (std::size_t i = 0; i + 1 < lane.size(); ++i) {
        const auto& a = lane[i];
        const auto& b = lane[i + 1];
        if (x <= b.x) {
            const double u = b.x > a.x ? (x - a.x) / (b.x - a.x) : 0.0;
            return a.y + u * (b.y - a.y);
        }
    }
    return lane.back().y;
}

VehiclePose vehicle_pose(const ToySceneSpec& spec, const Vehicle& vehicle, std::int64_t frame) {
    const auto& lane = spec.lanes.at(vehicle.lane);
    const double x = wrap(vehicle.offset + vehicle.speed * static_cast<double>(frame), spec.world_start,
                          spec.world_length);
    const double h = 0.5;
    const double slope = (lane_y(lane, x + h) - lane_y(lane, x - h)) / (2 * h);
    double heading = std::atan2(slope, 1.0);
    if (vehicle.speed < 0) heading += kPi;
    return {{x, lane_y(lane, x)}, conditioning::normalize_heading(heading)};
}

double view_overlap(const CameraRig& a, const CameraRig& b, std::int64_t height, std::int64_t width) {
    std::int64_t hits = 0;
    for (std::int64_t y = 0; y < height; ++y) {
        for (std::int64_t x = 0; x < width; ++x) {
            const auto w = a.to_world({x + 0.5, y + 0.5}, height, width);
            const auto v = b.to_view(w, height, width);
            hits += v.x >= 0 && v.x < static_cast<double>(width) && v.y >= 0 && v.y < static_cast<double>(height);
        }
    }
    return static_cast<double>(hits) / static_cast<double>(height * width);
}

std::vector<std::string> ToySceneSpec::violations() const {
    std::vector<std::string> out;
    if (rigs.empty()) out.push_back("at least one camera rig required");
    if (frames < 1 || height < 1 || width < 1) out.push_back("frames, height and width must be positive");
    if (!(world_length > 0)) out.push_back("world_length must be positive");
    if (static_cast<std::int64_t>(vehicles.size()) > kMaxVehicles) {
        out.push_back("at most " + std::to_string(kMaxVehicles) + " vehicles");
    }
    std::set<std::uint32_t> ids;
    for (const auto& v : vehicles) {
        if (v.lane >= lanes.size()) out.push_back("vehicle " + std::to_string(v.instance) + " on a missing lane");
        if (v.category >= conditioning::kCategoryCount) {
            out.push_back("vehicle " + std::to_string(v.instance) + " has category >= " +
                          std::to_string(conditioning::kCategoryCount));
        }
        if (!ids.insert(v.instance).second) out.push_back("duplicate instance id " + std::to_string(v.instance));
    }
    for (const auto& lane : lanes) {
        if (lane.size() < 2) out.push_back("lanes need at least two points");
    }
    if (height >= 1 && width >= 1) {
        for (std::size_t i = 0; i + 1 < rigs.size(); ++i) {
            if (view_overlap(rigs[i], rigs[i + 1], height, width) < kMinOverlap) {
                out.push_back("views " + std::to_string(i) + " and " + std::to_string(i + 1) + " overlap below 25%");
            }
        }
    }
    return out;
}

std::string scene_caption(const ToySceneSpec& spec) {
    const std::string density = spec.vehicles.size() >= 5 ? "busy" : "quiet";
    if (spec.weather == Weather::kNight) return "night dark " + density + " highway";
    return "day " + std::string(weather_word(spec.weather)) + " " + density + " highway";
}

RenderedScene generate_scene(const ToySceneSpec& spec) {
    if (const auto v = spec.violations(); !v.empty()) {
        std::string msg = "invalid scene spec:";
        for (const auto& s : v) msg += " " + s + ";";
        throw std::invalid_argument(msg);
    }
    const auto V = spec.views(), T = spec.frames, H = spec.height, W = spec.width;
    RenderedScene scene;
    scene.spec = spec;
    scene.caption = scene_caption(spec);
    scene.sketch = conditioning::rasterize_sketch(spec.lanes, V, T, H, W, spec.rigs);

    // Poses and wrapped copies that may be visible.
    struct Placed {
        const Vehicle* vehicle;
        Point2 center;
        double heading;
    };
    std::vector<std::vector<Placed>> placed(static_cast<std::size_t>(T));
    for (std::int64_t t = 0; t < T; ++t) {
        for (const auto& v : spec.vehicles) {
            const auto pose = vehicle_pose(spec, v, t);
            for (double shift : {-spec.world_length, 0.0, spec.world_length}) {
                placed[t].push_back({&v, {pose.center.x + shift, pose.center.y}, pose.heading});
            }
        }
    }

    const auto pal = palette(spec.weather);
    std::vector<float> pixels(static_cast<std::size_t>(V * T * 3 * H * W));
    auto texture_rng = make_rng(spec.seed, kTextureStream);
    auto frame_rng = make_rng(spec.seed, kFrameNoiseStream);
    std::normal_distribution<float> normal;
    std::vector<float> texture(static_cast<std::size_t>(V * 3 * H * W));
    for (auto& x : texture) x = pal.texture_sigma * normal(texture_rng);

    for (std::int64_t v = 0; v < V; ++v) {
        const auto& rig = spec.rigs[static_cast<std::size_t>(v)];
        for (std::int64_t t = 0; t < T; ++t) {
            for (std::int64_t y = 0; y < H; ++y) {
                for (std::int64_t x = 0; x < W; ++x) {
                    const auto world = rig.to_world({x + 0.5, y + 0.5}, H, W);
                    std::array<float, 3> rgb = pal.background;
                    bool painted = false;
                    for (const auto& p : placed[t]) {
                        if (inside_box(world, p.center, p.heading, p.vehicle->length, p.vehicle->width)) {
                            rgb = p.vehicle->color;
                            painted = true;
                        }
                    }
                    if (!painted && scene.sketch.at(v, t, y, x)) rgb = pal.lane;
                    for (std::int64_t c = 0; c < 3; ++c) {
                        float value = rgb[c] + pal.frame_sigma * normal(frame_rng);
                        if (!painted) value += texture[static_cast<std::size_t>(((v * 3 + c) * H + y) * W + x)];
                        pixels[static_cast<std::size_t>((((v * T + t) * 3 + c) * H + y) * W + x)] = value;
                    }
                }
            }
        }
    }
    scene.video = codec::VideoTensor({V, T, 3, H, W}, std::move(pixels));

    for (std::int64_t t = 0; t < T; ++t) {
        for (std::int64_t v = 0; v < V; ++v) {
            const auto& rig = spec.rigs[static_cast<std::size_t>(v)];
            for (const auto& p : placed[t]) {
                // View-space bounding box of the rotated rectangle.
                double lo_x = INFINITY, hi_x = -INFINITY, lo_y = INFINITY, hi_y = -INFINITY;
                const double c = std::cos(p.heading), s = std::sin(p.heading);
                for (double a : {-0.5, 0.5}) {
                    for (double b : {-0.5, 0.5}) {
                        const Point2 corner{p.center.x + a * p.vehicle->length * c - b * p.vehicle->width * s,
                                            p.center.y + a * p.vehicle->length * s + b * p.vehicle->width * c};
                        const auto q = rig.to_view(corner, H, W);
                        lo_x = std::min(lo_x, q.x);
                        hi_x = std::max(hi_x, q.x);
                        lo_y = std::min(lo_y, q.y);
                        hi_y = std::max(hi_y, q.y);
                    }
                }
                if (hi_x <= 0 || lo_x >= static_cast<double>(W) || hi_y <= 0 || lo_y >= static_cast<double>(H)) continue;
                const auto centre = rig.to_view(p.center, H, W);
                LayoutEntry e;
                e.frame = static_cast<std::uint16_t>(t);
                e.view = static_cast<std::uint16_t>(v);
                e.cx = static_cast<float>(centre.x / static_cast<double>(W));
                e.cy = static_cast<float>(centre.y / static_cast<double>(H));
                e.sw = static_cast<float>(std::min(1.0, p.vehicle->length / static_cast<double>(W)));
                e.sh = static_cast<float>(std::min(1.0, p.vehicle->width / static_cast<double>(H)));
                e.heading = static_cast<float>(conditioning::normalize_heading(p.heading - rig.rotation));
                e.instance = p.vehicle->instance;
                e.category = p.vehicle->category;
                scene.layouts.push_back(e);
            }
        }
    }
    return scene;
}

ToySceneSpec random_scene_spec(std::uint64_t seed, const SceneShape& shape) {
    ToySceneSpec spec;
    spec.seed = seed;
    spec.frames = shape.frames;
    spec.height = shape.height;
    spec.width = shape.width;
    const double H = static_cast<double>(shape.height), W = static_cast<double>(shape.width);
    const double spacing = kRigSpacing * W;
    spec.world_start = -W;
    spec.world_length = static_cast<double>(shape.views - 1) * spacing + 2 * W;

    auto rig_rng = make_rng(seed, kRigStream);
    std::uniform_real_distribution<double> tilt(-0.1, 0.1), jitter(-1.0, 1.0);
    for (std::int64_t v = 0; v < shape.views; ++v) {
        spec.rigs.push_back({{static_cast<double>(v) * spacing, jitter(rig_rng)}, tilt(rig_rng)});
    }

    auto layout_rng = make_rng(seed, kLayoutStream);
    std::uniform_int_distribution<int> lane_count(2, 4);
    std::uniform_int_distribution<int> weather(0, 3);
    spec.weather = static_cast<Weather>(weather(layout_rng));
    const int lanes = lane_count(layout_rng);
    std::uniform_real_distribution<double> amp(0.0, 2.0), phase(0.0, 2 * kPi), wobble(-1.0, 1.0);
    const double margin = 5.0;
    const double band = (H - 2 * margin) / static_cast<double>(lanes);
    for (int i = 0; i < lanes; ++i) {
        const double y0 = -0.5 * H + margin + (i + 0.5) * band + wobble(layout_rng);
        const double a = amp(layout_rng), ph = phase(layout_rng);
        Polyline lane;
        const int points = 17;
        for (int j = 0; j < points; ++j) {
            const double x = spec.world_start + spec.world_length * j / (points - 1);
            lane.push_back({x, y0 + a * std::sin(2 * kPi * (x - spec.world_start) / spec.world_length + ph)});
        }
        spec.lanes.push_back(std::move(lane));
    }

    static constexpr std::array<std::array<float, 3>, 6> kColors{{
        {0.90f, 0.12f, 0.10f},
        {0.12f, 0.25f, 0.90f},
        {0.95f, 0.85f, 0.10f},
        {0.97f, 0.97f, 0.97f},
        {0.10f, 0.80f, 0.25f},
        {0.95f, 0.45f, 0.05f},
    }};
    auto vehicle_rng = make_rng(seed, kVehicleStream);
    std::uniform_int_distribution<int> count(1, static_cast<int>(kMaxVehicles));
    std::uniform_int_distribution<std::size_t> lane_pick(0, spec.lanes.size() - 1), color(0, kColors.size() - 1);
    std::uniform_int_distribution<int> category(0, 4);
    std::uniform_real_distribution<double> speed(0.5, 1.5), offset(0.0, spec.world_length), length(5.0, 8.0),
        width(2.5, 3.5);
    const int n = count(vehicle_rng);
    for (int i = 0; i < n; ++i) {
        Vehicle v;
        v.lane = lane_pick(vehicle_rng);
        v.category = static_cast<std::uint16_t>(category(vehicle_rng));
        v.color = kColors[color(vehicle_rng)];
        v.length = length(vehicle_rng);
        v.width = width(vehicle_rng);
        // Lanes above the middle drive backwards.
        v.speed = speed(vehicle_rng) * (2 * v.lane < spec.lanes.size() ? -1.0 : 1.0);
        v.offset = spec.world_start + offset(vehicle_rng);
        v.instance = static_cast<std::uint32_t>(i + 1);
        spec.vehicles.push_back(v);
    }
    return spec;
}

}  // namespace mvdit::toyworld

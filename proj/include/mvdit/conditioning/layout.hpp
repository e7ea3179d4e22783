// Copyright (c) 2026 The mvdit Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <span>
#include <vector>

namespace mvdit::conditioning {

inline constexpr std::int64_t kMaxInstances = 8;
inline constexpr std::int64_t kCategoryCount = 8;
inline constexpr std::int64_t kInstanceTableSize = 32;
inline constexpr std::int64_t kFourierBands = 6;
// cx, cy, sw, sh, heading / pi
inline constexpr std::int64_t kLayoutGeometryValues = 5;
inline constexpr std::int64_t kLayoutFourierWidth = 2 * kFourierBands * kLayoutGeometryValues;

/// One object box as seen by one view in one frame. Geometry is normalized to
/// the view: size in [0, 1], heading in [-pi, pi). The center lies in [0, 1]
/// unless the box is only partly visible.
struct LayoutEntry {
    std::uint16_t frame = 0;
    std::uint16_t view = 0;
    float cx = 0, cy = 0, sw = 0, sh = 0;
    float heading = 0;
    std::uint32_t instance = 0;
    std::uint16_t category = 0;

    bool operator==(const LayoutEntry&) const = default;
};

/// Wraps an angle into [-pi, pi).
double normalize_heading(double radians);

/// sin(2^b pi v), cos(2^b pi v) for each value v and band b, value-major.
std::vector<double> fourier_encode(std::span<const double> values, std::int64_t bands);

/// Fourier features of one entry's geometry (heading normalized first).
std::vector<double> layout_geometry_features(const LayoutEntry& entry);

/// Entries belonging to (frame, view), in input order.
std::vector<LayoutEntry> entries_for(std::span<const LayoutEntry> entries, std::int64_t frame, std::int64_t view);

}  // namespace mvdit::conditioning

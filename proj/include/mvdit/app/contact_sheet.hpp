// Copyright (c) 2026 The mvdit Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <filesystem>
#include <vector>

#include "mvdit/codec/latent_codec.hpp"

namespace mvdit::app {

/// RGB8 grid of a clip: one row per view, one column per frame.
struct Image {
    std::int64_t width = 0, height = 0;
    std::vector<std::uint8_t> rgb;  // row-major, 3 bytes per pixel
};

Image contact_sheet(const codec::VideoTensor& video);

/// Encodes to PNG bytes; deterministic (no timestamps or text chunks).
std::vector<std::uint8_t> encode_png(const Image& image);
void write_png(const std::filesystem::path& path, const Image& image);

}  // namespace mvdit::app

// Copyright (c) 2026 The mvdit Authors
// SPDX-License-Identifier: Apache-2.0

#include "mvdit/app/contact_sheet.hpp"

#include <png.h>

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "mvdit/util/binary_io.hpp"

namespace mvdit::app {

Image contact_sheet(const codec::VideoTensor& video) {
    if (video.channels() != 3) throw std::invalid_argument("contact_sheet: expected 3 channels");
    const auto V = video.views(), T = video.frames(), H = video.height(), W = video.width();
    Image img{T * W, V * H, {}};
    img.rgb.resize(static_cast<std::size_t>(img.width * img.height * 3));
    for (std::int64_t v = 0; v < V; ++v) {
        for (std::int64_t t = 0; t < T; ++t) {
            for (std::int64_t y = 0; y < H; ++y) {
                for (std::int64_t x = 0; x < W; ++x) {
                    const auto row = v * H + y, col = t * W + x;
                    for (std::int64_t c = 0; c < 3; ++c) {
                        const float p = video.at(v, t, c, y, x);
                        img.rgb[static_cast<std::size_t>((row * img.width + col) * 3 + c)] =
                            static_cast<std::uint8_t>(std::lround(std::clamp(p, 0.0f, 1.0f) * 255.0f));
                    }
                }
            }
        }
    }
    return img;
}

namespace {

void append_bytes(png_structp png, png_bytep data, png_size_t length) {
    auto* out = static_cast<std::vector<std::uint8_t>*>(png_get_io_ptr(png));
    out->insert(out->end(), data, data + length);
}

void flush_nothing(png_structp) {}

}  // namespace

std::vector<std::uint8_t> encode_png(const Image& image) {
    if (image.width < 1 || image.height < 1 ||
        image.rgb.size() != static_cast<std::size_t>(image.width * image.height * 3)) {
        throw std::invalid_argument("encode_png: bad image dimensions");
    }
    png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    if (!png) throw std::runtime_error("encode_png: libpng init failed");
    png_infop info = png_create_info_struct(png);
    std::vector<std::uint8_t> out;
    if (!info || setjmp(png_jmpbuf(png))) {
        png_destroy_write_struct(&png, &info);
        throw std::runtime_error("encode_png: libpng error");
    }
    png_set_write_fn(png, &out, append_bytes, flush_nothing);
    png_set_IHDR(png, info, static_cast<png_uint_32>(image.width), static_cast<png_uint_32>(image.height), 8,
                 PNG_COLOR_TYPE_RGB, PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
    png_write_info(png, info);
    for (std::int64_t y = 0; y < image.height; ++y) {
        png_write_row(png, const_cast<png_bytep>(image.rgb.data() + y * image.width * 3));
    }
    png_write_end(png, nullptr);
    png_destroy_write_struct(&png, &info);
    return out;
}

void write_png(const std::filesystem::path& path, const Image& image) { write_file(path, encode_png(image)); }

}  // namespace mvdit::app

// Copyright (c) 2026 The mvdit Authors
// SPDX-License-Identifier: Apache-2.0
//
// Lossless space-to-depth codec standing in for a learned video autoencoder.
// Pixel (c, y, x) of each frame maps to latent channel c*f*f + (y%f)*f + (x%f)
// at (y/f, x/f). The map is a permutation, so decode(encode(x)) == x bitwise.

#pragma once

#include <cstdint>
#include <vector>

#include "mvdit/tensor/tensor.hpp"

namespace mvdit::codec {

/// Multi-view clip with axes (V, T, C, H, W); pixels clamped to [0, 1].
class VideoTensor {
  public:
    VideoTensor() = default;
    VideoTensor(Shape shape, std::vector<float> pixels);

    static VideoTensor zeros(std::int64_t views, std::int64_t frames, std::int64_t channels, std::int64_t height,
                             std::int64_t width);

    const Shape& shape() const { return shape_; }
    std::int64_t views() const { return shape_[0]; }
    std::int64_t frames() const { return shape_[1]; }
    std::int64_t channels() const { return shape_[2]; }
    std::int64_t height() const { return shape_[3]; }
    std::int64_t width() const { return shape_[4]; }

    const std::vector<float>& pixels() const { return pixels_; }
    float at(std::int64_t v, std::int64_t t, std::int64_t c, std::int64_t y, std::int64_t x) const {
        return pixels_[static_cast<std::size_t>((((v * shape_[1] + t) * shape_[2] + c) * shape_[3] + y) * shape_[4] + x)];
    }

    TensorF tensor() const { return TensorF::from(shape_, pixels_); }

  private:
    Shape shape_{0, 0, 0, 0, 0};
    std::vector<float> pixels_;
};

/// Latent axes for a given pixel shape: (..., C*f*f, H/f, W/f).
Shape latent_shape(const Shape& pixel_shape, std::int64_t factor);

/// Space-to-depth over the last three axes [..., C, H, W]; any leading axes.
template <typename T>
Tensor<T> space_to_depth(const Tensor<T>& pixels, std::int64_t factor);

/// Exact inverse of space_to_depth over [..., C*f*f, h, w].
template <typename T>
Tensor<T> depth_to_space(const Tensor<T>& latent, std::int64_t factor);

TensorF encode(const VideoTensor& video, std::int64_t factor);
VideoTensor decode(const TensorF& latent, std::int64_t factor);

}  // namespace mvdit::codec

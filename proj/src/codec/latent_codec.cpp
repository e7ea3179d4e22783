// Copyright (c) 2026 The mvdit Authors
// SPDX-License-Identifier: Apache-2.0

#include "mvdit/codec/latent_codec.hpp"

#include <algorithm>

namespace mvdit::codec {

VideoTensor::VideoTensor(Shape shape, std::vector<float> pixels) : shape_(std::move(shape)), pixels_(std::move(pixels)) {
    if (shape_.size() != 5) {
        throw ShapeError("video", "(V, T, C, H, W)", to_string(shape_));
    }
    if (numel(shape_) != static_cast<std::int64_t>(pixels_.size())) {
        throw ShapeError("video", std::to_string(numel(shape_)) + " pixels", std::to_string(pixels_.size()));
    }
    for (auto& p : pixels_) {
        p = std::clamp(p, 0.0f, 1.0f);
    }
}

VideoTensor VideoTensor::zeros(std::int64_t views, std::int64_t frames, std::int64_t channels, std::int64_t height,
                               std::int64_t width) {
    Shape s{views, frames, channels, height, width};
    return VideoTensor(s, std::vector<float>(static_cast<std::size_t>(numel(s)), 0.0f));
}

Shape latent_shape(const Shape& pixel_shape, std::int64_t factor) {
    const auto rank = pixel_shape.size();
    if (rank < 3 || factor < 1) {
        throw ShapeError("encode", "[..., C, H, W] and factor >= 1", to_string(pixel_shape));
    }
    const auto h = pixel_shape[rank - 2];
    const auto w = pixel_shape[rank - 1];
    if (h % factor != 0 || w % factor != 0) {
        throw ShapeError("encode", "H and W divisible by " + std::to_string(factor), to_string(pixel_shape));
    }
    Shape out = pixel_shape;
    out[rank - 3] *= factor * factor;
    out[rank - 2] = h / factor;
    out[rank - 1] = w / factor;
    return out;
}

template <typename T>
Tensor<T> space_to_depth(const Tensor<T>& pixels, std::int64_t factor) {
    const Shape out_shape = latent_shape(pixels.shape(), factor);
    const auto rank = out_shape.size();
    const auto c = pixels.shape()[rank - 3];
    const auto h = pixels.shape()[rank - 2];
    const auto w = pixels.shape()[rank - 1];
    const auto frames = pixels.numel() / (c * h * w);
    const auto lh = h / factor;
    const auto lw = w / factor;
    std::vector<T> out(pixels.values().size());
    const T* src = pixels.data().data();
    for (std::int64_t n = 0; n < frames; ++n) {
        const T* frame = src + n * c * h * w;
        T* dst = out.data() + n * c * h * w;
        for (std::int64_t ch = 0; ch < c; ++ch) {
            for (std::int64_t y = 0; y < h; ++y) {
                for (std::int64_t x = 0; x < w; ++x) {
                    const auto lc = ch * factor * factor + (y % factor) * factor + (x % factor);
                    dst[(lc * lh + y / factor) * lw + x / factor] = frame[(ch * h + y) * w + x];
                }
            }
        }
    }
    return Tensor<T>::from(out_shape, std::move(out));
}

template <typename T>
Tensor<T> depth_to_space(const Tensor<T>& latent, std::int64_t factor) {
    const auto rank = latent.rank();
    if (rank < 3 || factor < 1 || latent.shape()[rank - 3] % (factor * factor) != 0) {
        throw ShapeError("decode", "[..., C*f*f, h, w] with f=" + std::to_string(factor), to_string(latent.shape()));
    }
    Shape out_shape = latent.shape();
    const auto c = out_shape[rank - 3] / (factor * factor);
    const auto lh = out_shape[rank - 2];
    const auto lw = out_shape[rank - 1];
    out_shape[rank - 3] = c;
    out_shape[rank - 2] = lh * factor;
    out_shape[rank - 1] = lw * factor;
    const auto h = lh * factor;
    const auto w = lw * factor;
    const auto frames = latent.numel() / (c * h * w);
    std::vector<T> out(latent.values().size());
    const T* src = latent.data().data();
    for (std::int64_t n = 0; n < frames; ++n) {
        const T* lat = src + n * c * h * w;
        T* frame = out.data() + n * c * h * w;
        for (std::int64_t ch = 0; ch < c; ++ch) {
            for (std::int64_t y = 0; y < h; ++y) {
                for (std::int64_t x = 0; x < w; ++x) {
                    const auto lc = ch * factor * factor + (y % factor) * factor + (x % factor);
                    frame[(ch * h + y) * w + x] = lat[(lc * lh + y / factor) * lw + x / factor];
                }
            }
        }
    }
    return Tensor<T>::from(out_shape, std::move(out));
}

TensorF encode(const VideoTensor& video, std::int64_t factor) { return space_to_depth(video.tensor(), factor); }

VideoTensor decode(const TensorF& latent, std::int64_t factor) {
    auto pixels = depth_to_space(latent, factor);
    if (pixels.rank() != 5) {
        throw ShapeError("decode", "(V, T, C_lat, h, w)", to_string(latent.shape()));
    }
    return VideoTensor(pixels.shape(), pixels.values());
}

template Tensor<float> space_to_depth(const Tensor<float>&, std::int64_t);
template Tensor<double> space_to_depth(const Tensor<double>&, std::int64_t);
template Tensor<float> depth_to_space(const Tensor<float>&, std::int64_t);
template Tensor<double> depth_to_space(const Tensor<double>&, std::int64_t);

}  // namespace mvdit::codec

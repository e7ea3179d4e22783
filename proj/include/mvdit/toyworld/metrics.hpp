// Copyright (c) 2026 The mvdit Authors
// SPDX-License-Identifier: Apache-2.0
//
// Desk-scale video metrics built on fixed, untrained random convolution
// probes (two 3x3 stride-2 layers). Values are only comparable between runs
// that share the probe seed.

#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "mvdit/codec/latent_codec.hpp"
#include "mvdit/conditioning/layout.hpp"

namespace mvdit::toyworld {

inline constexpr std::int64_t kClipFeatureDim = 64;
inline constexpr std::size_t kMinFeatureSet = 16;

/// 64-dim clip descriptor: ReLU probe, spatial mean, then mean over views and frames.
std::vector<double> clip_features(const codec::VideoTensor& video, std::uint64_t probe_seed);

struct FeatureStats {
    std::vector<double> mean;
    std::vector<double> var;  // population variance per dimension
};
FeatureStats feature_stats(std::span<const std::vector<double>> features);

/// ||mu_a - mu_b||^2 + sum(var_a + var_b - 2 sqrt(var_a var_b)).
double frechet_diagonal(const FeatureStats& a, const FeatureStats& b);

/// Needs at least kMinFeatureSet videos per set.
double metric_feature_distance(std::span<const codec::VideoTensor> a, std::span<const codec::VideoTensor> b,
                               std::uint64_t probe_seed);

/// Mean deviation from the per-frame background (channel median) inside the
/// layout boxes over the mean outside; 1.0 when either region is empty or the
/// outside deviation vanishes. Throws on an empty layout set.
double metric_layout_adherence(const codec::VideoTensor& video, std::span<const conditioning::LayoutEntry> layouts);

/// Mean cosine similarity of consecutive-frame embeddings (tanh probe on
/// mean-centred frames, 2x2 pooled), averaged over views. Needs T >= 2.
/// 1 where some box of that (view, frame) covers the pixel centre; (V, T, H, W).
std::vector<std::uint8_t> layout_coverage(const Shape& video_shape, std::span<const conditioning::LayoutEntry> layouts);

/// Mean pixel value (all channels) outside every layout box; 0 if none.
double background_intensity(const codec::VideoTensor& video, std::span<const conditioning::LayoutEntry> layouts);

double metric_temporal_consistency(const codec::VideoTensor& video, std::uint64_t probe_seed);

}  // namespace mvdit::toyworld

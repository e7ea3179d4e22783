// Copyright (c) 2026 The mvdit Authors
// SPDX-License-Identifier: Apache-2.0
//
// Rectified-flow objective, Euler sampling, first-k frame masking and
// three-way guided sampling.
//
// Convention: x_t = (1 - t) * x0 + t * x1 with x0 the clean sample and x1 the
// Gaussian noise. The regression target is x1 - x0 and the sampler integrates
// from pure noise at t = 1 down to t = 0. Batched latents have axes
// (B, V, T, C, h, w); the frame axis is 2.

#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <random>
#include <span>
#include <type_traits>
#include <vector>

#include "mvdit/conditioning/condition.hpp"
#include "mvdit/tensor/tensor.hpp"

namespace mvdit::model {
template <typename T>
class StditModel;
}

namespace mvdit::flow {

using conditioning::ConditionTriple;

inline constexpr std::size_t kFrameAxis = 2;

/// v(x_t, t, conditions): one t and one condition per batch item. Point data
/// without conditions is passed an empty span.
template <typename T>
using VelocityFn =
    std::function<Tensor<T>(const Tensor<T>& x_t, std::span<const double> t, std::span<const ConditionTriple> conds)>;

template <typename T>
VelocityFn<T> velocity_of(const model::StditModel<T>& model);

/// First-k frame mask.
struct MaskSpec {
    std::int64_t k = 0;
    /// m over `frames` frames, 1 on 0..k-1. Throws when k is outside [0, frames).
    std::vector<std::uint8_t> mask(std::int64_t frames) const;
};

struct Guidance {
    double caption = 7.0;
    double layout = 2.0;
    double sketch = 2.0;
    /// Defaults for a caption: caption scale 1.0 when it mentions "night".
    static Guidance for_condition(const ConditionTriple& cond);
};

struct SamplerConfig {
    std::int64_t steps = 30;
    std::optional<Guidance> guidance;  // unset: Guidance::for_condition
    std::uint64_t seed = 0;
    void validate() const;
};

/// (1 - t) * x0 + t * x1, differentiable in both endpoints.
template <typename T>
Tensor<T> interpolate(const Tensor<T>& x0, const Tensor<T>& x1, double t);

/// Per-item t along the leading axis; constant result.
template <typename T>
Tensor<T> interpolate_batch(const Tensor<T>& x0, const Tensor<T>& x1, std::span<const double> t);

/// x_t on frames with m = 0, clean on frames with m = 1; constant result.
template <typename T>
Tensor<T> apply_frame_mask(const Tensor<T>& x_t, const Tensor<T>& clean, std::span<const std::uint8_t> mask);

/// Mean squared error over frames with m = 0. An empty mask averages over
/// every element (point data).
template <typename T>
Tensor<T> masked_mse(const Tensor<T>& predicted, const Tensor<T>& target, std::span<const std::uint8_t> mask);

template <typename T>
struct FlowBatch {
    Tensor<T> clean;                     // (B, V, T, C, h, w), or (B, d) for point data
    std::vector<ConditionTriple> conds;  // B entries, or empty for point data
};

struct LossOptions {
    // Unset: drawn uniformly from {0, ..., T/2} (capped at T - 1) per batch.
    std::optional<std::int64_t> k;
    bool drop_conditions = true;
    conditioning::DropoutRates dropout;
};

/// Inputs of one objective evaluation, kept for inspection.
template <typename T>
struct FlowDraw {
    Tensor<T> noise;
    std::vector<double> t;
    std::vector<ConditionTriple> conds;
    std::vector<std::uint8_t> mask;
    Tensor<T> x_t;
    Tensor<T> target;
};

/// Draws noise, t ~ U(0, 1) per item, condition dropout and k, then builds
/// the clamped x_t and the target noise - clean.
template <typename T>
FlowDraw<T> draw_flow_inputs(const FlowBatch<T>& batch, std::mt19937_64& rng, const LossOptions& options = {});

/// Rectified-flow loss with losses only on unmasked frames.
template <typename T>
Tensor<T> rf_loss(const VelocityFn<T>& velocity, const FlowBatch<T>& batch, std::mt19937_64& rng,
                  const LossOptions& options = {}, FlowDraw<T>* draw = nullptr);

/// Guided velocity from exactly four passes:
/// v(∅∅∅) + λT [v(TLR) - v(∅LR)] + λL [v(∅LR) - v(∅∅R)] + λR [v(∅∅R) - v(∅∅∅)].
template <typename T>
Tensor<T> cfg_velocity(const VelocityFn<T>& velocity, const Tensor<T>& x_t, std::span<const double> t,
                       std::span<const ConditionTriple> conds, const Guidance& guidance);

/// x - v / N.
template <typename T>
Tensor<T> euler_step(const Tensor<T>& x, const Tensor<T>& v, std::int64_t steps);

/// One clip, batch 1. `latent_shape` is (1, V, T, C, h, w). With k > 0 the
/// first k frames of `frames` (at least k frames, otherwise the same shape)
/// are clamped before every step and after the last.
template <typename T>
Tensor<T> generate(const VelocityFn<T>& velocity, const ConditionTriple& cond, const SamplerConfig& sampler,
                   const MaskSpec& mask, const Shape& latent_shape,
                   const std::optional<std::type_identity_t<Tensor<T>>>& frames = {});

/// Autoregressive clips: clip i > 0 is clamped to the last k frames of clip
/// i - 1 and the overlap is dropped. Clip 0 uses `seed_frames` (its first k
/// frames) when given. Output has T + (n - 1)(T - k) frames. A non-empty
/// `clip_guidance` (one per clip) overrides the sampler's guidance.
template <typename T>
Tensor<T> rollout(const VelocityFn<T>& velocity, std::span<const ConditionTriple> clip_conds,
                  const SamplerConfig& sampler, std::int64_t k, const Shape& latent_shape,
                  const std::optional<std::type_identity_t<Tensor<T>>>& seed_frames = {},
                  std::span<const Guidance> clip_guidance = {});

/// Frames [begin, end) along the frame axis.
template <typename T>
Tensor<T> slice_frames(const Tensor<T>& x, std::int64_t begin, std::int64_t end);

/// Sampler seed of clip `index`; clip 0 uses the sampler seed itself.
std::uint64_t clip_seed(std::uint64_t seed, std::int64_t index);

}  // namespace mvdit::flow

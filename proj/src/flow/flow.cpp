// Copyright (c) 2026 The mvdit Authors
// SPDX-License-Identifier: Apache-2.0

#include "mvdit/flow/flow.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <string>

#include "mvdit/conditioning/caption.hpp"
#include "mvdit/model/stdit.hpp"
#include "mvdit/tensor/ops.hpp"
#include "mvdit/util/rng.hpp"

namespace mvdit::flow {
namespace {

void require_same_shape(const char* op, const Shape& a, const Shape& b) {
    if (a != b) {
        throw ShapeError(op, "matching shapes", to_string(a) + " vs " + to_string(b));
    }
}

void require_clip(const char* op, const Shape& shape) {
    if (shape.size() != 6) throw ShapeError(op, "(B, V, T, C, h, w)", to_string(shape));
}

// Elements per frame and number of (B, V) groups of a clip tensor.
struct FrameLayout {
    std::int64_t groups;
    std::int64_t frames;
    std::int64_t frame_size;
};

FrameLayout frame_layout(const Shape& shape) {
    return {shape[0] * shape[1], shape[2], shape[3] * shape[4] * shape[5]};
}

}  // namespace

template <typename T>
VelocityFn<T> velocity_of(const model::StditModel<T>& model) {
    return [&model](const Tensor<T>& x_t, std::span<const double> t, std::span<const ConditionTriple> conds) {
        return model.forward(x_t, t, conds);
    };
}

std::vector<std::uint8_t> MaskSpec::mask(std::int64_t frames) const {
    if (k < 0 || k >= frames) {
        throw std::invalid_argument("mask: k=" + std::to_string(k) + " must lie in [0, " + std::to_string(frames) + ")");
    }
    std::vector<std::uint8_t> m(static_cast<std::size_t>(frames), 0);
    std::fill(m.begin(), m.begin() + k, 1);
    return m;
}

Guidance Guidance::for_condition(const ConditionTriple& cond) {
    Guidance g;
    if (cond.caption) {
        const auto night = conditioning::word_id("night");
        const auto& ids = cond.caption->ids;
        if (std::find(ids.begin(), ids.end(), night) != ids.end()) g.caption = 1.0;
    }
    return g;
}

void SamplerConfig::validate() const {
    if (steps < 1) throw std::invalid_argument("sampler: steps must be >= 1");
    if (guidance) {
        for (double s : {guidance->caption, guidance->layout, guidance->sketch}) {
            if (!std::isfinite(s) || s < 0) throw std::invalid_argument("sampler: guidance scales must be finite and >= 0");
        }
    }
}

template <typename T>
Tensor<T> interpolate(const Tensor<T>& x0, const Tensor<T>& x1, double t) {
    require_same_shape("interpolate", x0.shape(), x1.shape());
    if (!(t >= 0.0 && t <= 1.0)) throw std::out_of_range("interpolate: t outside [0, 1]");
    return ad::add(ad::scale(x0, static_cast<T>(1.0 - t)), ad::scale(x1, static_cast<T>(t)));
}

template <typename T>
Tensor<T> interpolate_batch(const Tensor<T>& x0, const Tensor<T>& x1, std::span<const double> t) {
    require_same_shape("interpolate_batch", x0.shape(), x1.shape());
    if (x0.rank() == 0 || static_cast<std::size_t>(x0.dim(0)) != t.size()) {
        throw ShapeError("interpolate_batch", "one t per leading index", to_string(x0.shape()));
    }
    const auto per_item = x0.numel() / x0.dim(0);
    std::vector<T> out(static_cast<std::size_t>(x0.numel()));
    for (std::size_t b = 0; b < t.size(); ++b) {
        if (!(t[b] >= 0.0 && t[b] <= 1.0)) throw std::out_of_range("interpolate_batch: t outside [0, 1]");
        const T a = static_cast<T>(1.0 - t[b]);
        const T c = static_cast<T>(t[b]);
        for (std::int64_t i = 0; i < per_item; ++i) {
            const auto j = static_cast<std::int64_t>(b) * per_item + i;
            out[static_cast<std::size_t>(j)] = a * x0[j] + c * x1[j];
        }
    }
    return Tensor<T>::from(x0.shape(), std::move(out));
}

template <typename T>
Tensor<T> apply_frame_mask(const Tensor<T>& x_t, const Tensor<T>& clean, std::span<const std::uint8_t> mask) {
    require_clip("apply_frame_mask", x_t.shape());
    require_same_shape("apply_frame_mask", x_t.shape(), clean.shape());
    const auto lay = frame_layout(x_t.shape());
    if (static_cast<std::int64_t>(mask.size()) != lay.frames) {
        throw ShapeError("apply_frame_mask", "mask length " + std::to_string(lay.frames),
                         "mask length " + std::to_string(mask.size()));
    }
    std::vector<T> out(x_t.values());
    for (std::int64_t g = 0; g < lay.groups; ++g) {
        for (std::int64_t f = 0; f < lay.frames; ++f) {
            if (!mask[static_cast<std::size_t>(f)]) continue;
            const auto offset = (g * lay.frames + f) * lay.frame_size;
            std::copy_n(clean.data().begin() + offset, lay.frame_size, out.begin() + offset);
        }
    }
    return Tensor<T>::from(x_t.shape(), std::move(out));
}

template <typename T>
Tensor<T> masked_mse(const Tensor<T>& predicted, const Tensor<T>& target, std::span<const std::uint8_t> mask) {
    require_same_shape("masked_mse", predicted.shape(), target.shape());
    auto diff = ad::sub(predicted, target);
    if (mask.empty()) return ad::scale(ad::sum_sq(diff), T(1) / static_cast<T>(diff.numel()));
    require_clip("masked_mse", predicted.shape());
    const auto lay = frame_layout(predicted.shape());
    if (static_cast<std::int64_t>(mask.size()) != lay.frames) {
        throw ShapeError("masked_mse", "mask length " + std::to_string(lay.frames),
                         "mask length " + std::to_string(mask.size()));
    }
    const auto open = std::count(mask.begin(), mask.end(), std::uint8_t{0});
    if (open == 0) throw std::invalid_argument("masked_mse: every frame is masked");
    std::vector<T> weights(static_cast<std::size_t>(diff.numel()), T(0));
    for (std::int64_t g = 0; g < lay.groups; ++g) {
        for (std::int64_t f = 0; f < lay.frames; ++f) {
            if (mask[static_cast<std::size_t>(f)]) continue;
            std::fill_n(weights.begin() + (g * lay.frames + f) * lay.frame_size, lay.frame_size, T(1));
        }
    }
    const auto count = static_cast<T>(lay.groups * open * lay.frame_size);
    auto kept = ad::mul(diff, Tensor<T>::from(diff.shape(), std::move(weights)));
    return ad::scale(ad::sum_sq(kept), T(1) / count);
}

template <typename T>
FlowDraw<T> draw_flow_inputs(const FlowBatch<T>& batch, std::mt19937_64& rng, const LossOptions& options) {
    const auto& clean = batch.clean;
    if (clean.rank() < 2) throw ShapeError("rf_loss", "batched data", to_string(clean.shape()));
    const auto items = clean.dim(0);
    const bool is_clip = clean.rank() == 6;
    if (!batch.conds.empty() && static_cast<std::int64_t>(batch.conds.size()) != items) {
        throw ShapeError("rf_loss", std::to_string(items) + " conditions", std::to_string(batch.conds.size()));
    }
    FlowDraw<T> draw;
    if (is_clip) {
        const auto frames = clean.dim(kFrameAxis);
        std::int64_t k = 0;
        if (options.k) {
            k = *options.k;
        } else {
            const auto k_max = std::min(frames / 2, frames - 1);
            k = std::uniform_int_distribution<std::int64_t>(0, k_max)(rng);
        }
        draw.mask = MaskSpec{k}.mask(frames);
    } else if (options.k.value_or(0) != 0) {
        throw std::invalid_argument("rf_loss: frame masking needs clip data");
    }
    std::uniform_real_distribution<double> uniform(0.0, 1.0);
    draw.t.resize(static_cast<std::size_t>(items));
    for (auto& t : draw.t) {
        do {
            t = uniform(rng);
        } while (t == 0.0);
    }
    draw.conds = batch.conds;
    if (options.drop_conditions) {
        for (auto& c : draw.conds) c = conditioning::dropout_conditions(c, rng, options.dropout);
    }
    draw.noise = Tensor<T>::randn(clean.shape(), rng);
    draw.x_t = interpolate_batch(clean, draw.noise, draw.t);
    if (is_clip) draw.x_t = apply_frame_mask(draw.x_t, clean, draw.mask);
    ad::NoGradGuard no_grad;
    draw.target = ad::sub(draw.noise, clean.detach());
    return draw;
}

template <typename T>
Tensor<T> rf_loss(const VelocityFn<T>& velocity, const FlowBatch<T>& batch, std::mt19937_64& rng,
                  const LossOptions& options, FlowDraw<T>* draw) {
    auto d = draw_flow_inputs(batch, rng, options);
    const auto v = velocity(d.x_t, d.t, d.conds);
    auto loss = masked_mse(v, d.target, d.mask);
    if (draw) *draw = std::move(d);
    return loss;
}

template <typename T>
Tensor<T> cfg_velocity(const VelocityFn<T>& velocity, const Tensor<T>& x_t, std::span<const double> t,
                       std::span<const ConditionTriple> conds, const Guidance& guidance) {
    std::vector<ConditionTriple> no_caption, sketch_only, none;
    for (const auto& c : conds) {
        no_caption.push_back(c.without_caption());
        sketch_only.push_back(c.without_caption().without_layout());
        none.push_back(ConditionTriple::null());
    }
    const auto v_full = velocity(x_t, t, conds);
    const auto v_layout_sketch = velocity(x_t, t, no_caption);
    const auto v_sketch = velocity(x_t, t, sketch_only);
    const auto v_null = velocity(x_t, t, none);
    // Same sum regrouped by pass, so λ = (1, 1, 1) returns v_full exactly.
    const auto w_null = static_cast<T>(1.0 - guidance.sketch);
    const auto w_sketch = static_cast<T>(guidance.sketch - guidance.layout);
    const auto w_layout_sketch = static_cast<T>(guidance.layout - guidance.caption);
    const auto w_full = static_cast<T>(guidance.caption);
    auto out = ad::add(ad::scale(v_null, w_null), ad::scale(v_sketch, w_sketch));
    out = ad::add(out, ad::scale(v_layout_sketch, w_layout_sketch));
    return ad::add(out, ad::scale(v_full, w_full));
}

template <typename T>
Tensor<T> euler_step(const Tensor<T>& x, const Tensor<T>& v, std::int64_t steps) {
    require_same_shape("euler_step", x.shape(), v.shape());
    if (steps < 1) throw std::invalid_argument("euler_step: steps must be >= 1");
    const auto n = static_cast<T>(steps);
    std::vector<T> out(x.values());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] -= v.values()[i] / n;
    return Tensor<T>::from(x.shape(), std::move(out));
}

template <typename T>
Tensor<T> slice_frames(const Tensor<T>& x, std::int64_t begin, std::int64_t end) {
    require_clip("slice_frames", x.shape());
    const auto lay = frame_layout(x.shape());
    if (begin < 0 || end > lay.frames || begin > end) {
        throw ShapeError("slice_frames", "0 <= begin <= end <= " + std::to_string(lay.frames),
                         std::to_string(begin) + ".." + std::to_string(end));
    }
    auto shape = x.shape();
    shape[kFrameAxis] = end - begin;
    std::vector<T> out;
    out.reserve(static_cast<std::size_t>(numel(shape)));
    for (std::int64_t g = 0; g < lay.groups; ++g) {
        const auto first = x.data().begin() + (g * lay.frames + begin) * lay.frame_size;
        out.insert(out.end(), first, first + (end - begin) * lay.frame_size);
    }
    return Tensor<T>::from(shape, std::move(out));
}

std::uint64_t clip_seed(std::uint64_t seed, std::int64_t index) {
    return index == 0 ? seed : derive_seed(seed, static_cast<std::uint64_t>(index));
}

template <typename T>
Tensor<T> generate(const VelocityFn<T>& velocity, const ConditionTriple& cond, const SamplerConfig& sampler,
                   const MaskSpec& mask, const Shape& latent_shape,
                   const std::optional<std::type_identity_t<Tensor<T>>>& frames) {
    sampler.validate();
    require_clip("generate", latent_shape);
    if (latent_shape[0] != 1) throw ShapeError("generate", "batch 1", to_string(latent_shape));
    const auto m = mask.mask(latent_shape[kFrameAxis]);
    Tensor<T> clean;
    if (mask.k > 0) {
        if (!frames) throw std::invalid_argument("generate: k > 0 needs conditioning frames");
        auto expect = latent_shape;
        expect[kFrameAxis] = frames->rank() == 6 ? frames->dim(kFrameAxis) : -1;
        if (frames->shape() != expect || expect[kFrameAxis] < mask.k) {
            throw ShapeError("generate", "at least " + std::to_string(mask.k) + " frames of " + to_string(latent_shape),
                             to_string(frames->shape()));
        }
        auto prefix = slice_frames(*frames, 0, mask.k);
        auto pad = latent_shape;
        pad[kFrameAxis] -= mask.k;
        clean = ad::concat<T>({prefix, Tensor<T>::zeros(pad)}, kFrameAxis);
    }
    const auto guidance = sampler.guidance.value_or(Guidance::for_condition(cond));
    ad::NoGradGuard no_grad;
    std::mt19937_64 rng(sampler.seed);
    auto x = Tensor<T>::randn(latent_shape, rng);
    for (std::int64_t i = sampler.steps; i >= 1; --i) {
        const double t = static_cast<double>(i) / static_cast<double>(sampler.steps);
        if (mask.k > 0) x = apply_frame_mask(x, clean, m);
        const auto v = cfg_velocity<T>(velocity, x, std::span<const double>(&t, 1),
                                       std::span<const ConditionTriple>(&cond, 1), guidance);
        x = euler_step(x, v, sampler.steps);
    }
    if (mask.k > 0) x = apply_frame_mask(x, clean, m);
    return x;
}

template <typename T>
Tensor<T> rollout(const VelocityFn<T>& velocity, std::span<const ConditionTriple> clip_conds,
                  const SamplerConfig& sampler, std::int64_t k, const Shape& latent_shape,
                  const std::optional<std::type_identity_t<Tensor<T>>>& seed_frames,
                  std::span<const Guidance> clip_guidance) {
    require_clip("rollout", latent_shape);
    const auto frames = latent_shape[kFrameAxis];
    if (clip_conds.empty()) throw std::invalid_argument("rollout: needs at least one clip");
    if (k < 0 || k >= frames) {
        throw std::invalid_argument("rollout: k=" + std::to_string(k) + " must lie in [0, " + std::to_string(frames) +
                                    ")");
    }
    if (!clip_guidance.empty() && clip_guidance.size() != clip_conds.size()) {
        throw std::invalid_argument("rollout: one guidance per clip required");
    }
    std::vector<Tensor<T>> parts;
    Tensor<T> previous;
    for (std::size_t i = 0; i < clip_conds.size(); ++i) {
        auto clip_sampler = sampler;
        clip_sampler.seed = clip_seed(sampler.seed, static_cast<std::int64_t>(i));
        if (!clip_guidance.empty()) clip_sampler.guidance = clip_guidance[i];
        Tensor<T> clip;
        if (i == 0) {
            const MaskSpec mask{seed_frames ? k : 0};
            clip = generate(velocity, clip_conds[i], clip_sampler, mask, latent_shape, seed_frames);
            parts.push_back(clip);
        } else {
            auto tail = slice_frames(previous, frames - k, frames);
            clip = generate(velocity, clip_conds[i], clip_sampler, MaskSpec{k}, latent_shape,
                            k > 0 ? std::optional<Tensor<T>>(tail) : std::nullopt);
            parts.push_back(slice_frames(clip, k, frames));
        }
        previous = clip;
    }
    if (parts.size() == 1) return parts.front();
    ad::NoGradGuard no_grad;
    return ad::concat(parts, kFrameAxis);
}

#define MVDIT_INSTANTIATE_FLOW(T)                                                                                     \
    template VelocityFn<T> velocity_of(const model::StditModel<T>&);                                                  \
    template Tensor<T> interpolate(const Tensor<T>&, const Tensor<T>&, double);                                       \
    template Tensor<T> interpolate_batch(const Tensor<T>&, const Tensor<T>&, std::span<const double>);                \
    template Tensor<T> apply_frame_mask(const Tensor<T>&, const Tensor<T>&, std::span<const std::uint8_t>);           \
    template Tensor<T> masked_mse(const Tensor<T>&, const Tensor<T>&, std::span<const std::uint8_t>);                 \
    template FlowDraw<T> draw_flow_inputs(const FlowBatch<T>&, std::mt19937_64&, const LossOptions&);                 \
    template Tensor<T> rf_loss(const VelocityFn<T>&, const FlowBatch<T>&, std::mt19937_64&, const LossOptions&,       \
                               FlowDraw<T>*);                                                                         \
    template Tensor<T> cfg_velocity(const VelocityFn<T>&, const Tensor<T>&, std::span<const double>,                  \
                                    std::span<const ConditionTriple>, const Guidance&);                               \
    template Tensor<T> euler_step(const Tensor<T>&, const Tensor<T>&, std::int64_t);                                  \
    template Tensor<T> slice_frames(const Tensor<T>&, std::int64_t, std::int64_t);                                    \
    template Tensor<T> generate(const VelocityFn<T>&, const ConditionTriple&, const SamplerConfig&, const MaskSpec&,  \
                                const Shape&, const std::optional<Tensor<T>>&);                                       \
    template Tensor<T> rollout(const VelocityFn<T>&, std::span<const ConditionTriple>, const SamplerConfig&,          \
                               std::int64_t, const Shape&, const std::optional<Tensor<T>>&,                         \
                               std::span<const Guidance>);

MVDIT_INSTANTIATE_FLOW(float)
MVDIT_INSTANTIATE_FLOW(double)

#undef MVDIT_INSTANTIATE_FLOW

}  // namespace mvdit::flow

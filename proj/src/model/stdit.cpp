// Copyright (c) 2026 The mvdit Authors
// SPDX-License-Identifier: Apache-2.0

#include "mvdit/model/stdit.hpp"

#include <cmath>
#include <numbers>
#include <random>
#include <stdexcept>
#include <unordered_map>

#include "mvdit/codec/latent_codec.hpp"
#include "mvdit/tensor/ops.hpp"
#include "mvdit/util/rng.hpp"

namespace mvdit::model {

namespace {

using conditioning::ConditionTriple;
using conditioning::RoadSketch;

constexpr double kEmbeddingStd = 0.02;

std::string block_prefix(std::int64_t i) { return "blocks." + std::to_string(i); }
std::string control_prefix(std::int64_t i) { return "control.blocks." + std::to_string(i); }

void add_linear(std::vector<ParamSpec>& out, const std::string& name, std::int64_t in, std::int64_t width,
                bool bias = true, ParamSpec::Init init = ParamSpec::Init::kXavier) {
    out.push_back({name + ".weight", {in, width}, init, {}});
    if (bias) out.push_back({name + ".bias", {width}, ParamSpec::Init::kZero, {}});
}

void add_attention(std::vector<ParamSpec>& out, const std::string& prefix, std::int64_t d, bool zero_output) {
    add_linear(out, prefix + ".q", d, d);
    add_linear(out, prefix + ".k", d, d, false);
    add_linear(out, prefix + ".v", d, d);
    add_linear(out, prefix + ".o", d, d, true, zero_output ? ParamSpec::Init::kZero : ParamSpec::Init::kXavier);
}

void add_mlp(std::vector<ParamSpec>& out, const std::string& prefix, const ModelConfig& c) {
    add_linear(out, prefix + ".mlp.fc1", c.hidden, c.mlp_ratio * c.hidden);
    add_linear(out, prefix + ".mlp.fc2", c.mlp_ratio * c.hidden, c.hidden);
}

template <typename T>
std::vector<T> init_values(const ParamSpec& spec, std::mt19937_64& rng) {
    std::vector<T> v(static_cast<std::size_t>(numel(spec.shape)), T(0));
    switch (spec.init) {
        case ParamSpec::Init::kZero:
        case ParamSpec::Init::kCopy:
            break;
        case ParamSpec::Init::kXavier: {
            const double fan = static_cast<double>(spec.shape[0] + spec.shape[1]);
            std::uniform_real_distribution<double> dist(-std::sqrt(6.0 / fan), std::sqrt(6.0 / fan));
            for (auto& x : v) x = static_cast<T>(dist(rng));
            break;
        }
        case ParamSpec::Init::kEmbedding: {
            std::normal_distribution<double> dist(0.0, kEmbeddingStd);
            for (auto& x : v) x = static_cast<T>(dist(rng));
            break;
        }
    }
    return v;
}

std::vector<std::int64_t> iota_ids(std::int64_t n) {
    std::vector<std::int64_t> ids(static_cast<std::size_t>(n));
    for (std::int64_t i = 0; i < n; ++i) ids[static_cast<std::size_t>(i)] = i;
    return ids;
}

template <typename T>
Tensor<T> mlp(const Tensor<T>& x, const BlockWeights<T>& w) {
    return ad::linear(ad::gelu(ad::linear(x, w.fc1_w, w.fc1_b)), w.fc2_w, w.fc2_b);
}

void require_grid(const Shape& shape, const char* op) {
    if (shape.size() != 6) throw ShapeError(op, "token grid (B, V, T', H', W', D)", to_string(shape));
}

}  // namespace

std::vector<ParamSpec> parameter_layout(const ModelConfig& c) {
    c.validate();
    using Init = ParamSpec::Init;
    const auto d = c.hidden;
    const auto p = c.patch_dim();
    std::vector<ParamSpec> out;

    add_linear(out, "embed.patch", p, d);
    out.push_back({"embed.pos_spatial", {c.tokens_per_frame(), d}, Init::kEmbedding, {}});
    out.push_back({"embed.pos_temporal", {c.frames / c.patch_t, d}, Init::kEmbedding, {}});
    out.push_back({"embed.view", {c.views, d}, Init::kEmbedding, {}});

    add_linear(out, "time.mlp1", c.time_embed_dim, d);
    add_linear(out, "time.mlp2", d, d);

    out.push_back({"caption.table", {conditioning::kVocabSize, d}, Init::kEmbedding, {}});
    out.push_back({"caption.pos", {c.text_len, d}, Init::kEmbedding, {}});
    out.push_back({"caption.null", {c.text_len, d}, Init::kEmbedding, {}});

    out.push_back({"layout.category", {conditioning::kCategoryCount, c.category_dim}, Init::kEmbedding, {}});
    out.push_back({"layout.instance", {conditioning::kInstanceTableSize, c.instance_dim}, Init::kEmbedding, {}});
    add_linear(out, "layout.mlp1", conditioning::kLayoutFourierWidth + c.category_dim + c.instance_dim, d);
    add_linear(out, "layout.mlp2", d, d);
    out.push_back({"layout.null", {1, d}, Init::kEmbedding, {}});

    for (std::int64_t i = 0; i < c.blocks; ++i) {
        const auto b = block_prefix(i);
        add_linear(out, b + ".ada", d, 6 * d, true, Init::kZero);
        add_attention(out, b + ".spatial", d, false);
        add_attention(out, b + ".temporal", d, false);
        add_attention(out, b + ".cross", d, true);
        add_mlp(out, b, c);
    }

    if (c.control_depth > 0) add_linear(out, "control.sketch", p, d);
    for (std::int64_t i = 0; i < c.control_depth; ++i) {
        const auto src = block_prefix(i);
        const auto dst = control_prefix(i);
        const auto first = out.size();
        for (std::size_t j = 0; j < first; ++j) {
            const auto& spec = out[j];
            if (spec.name.rfind(src + ".", 0) != 0) continue;
            const auto rest = spec.name.substr(src.size());
            if (rest.rfind(".temporal", 0) == 0 || rest.rfind(".cross", 0) == 0) continue;
            out.push_back({dst + rest, spec.shape, Init::kCopy, spec.name});
        }
        add_linear(out, "control.connector." + std::to_string(i), d, d, true, Init::kZero);
    }

    add_linear(out, "final.ada", d, 2 * d, true, Init::kZero);
    add_linear(out, "final.linear", d, p);
    return out;
}

template <typename T>
ParamStore<T> init_params(const ModelConfig& config, std::uint64_t seed) {
    const auto layout = parameter_layout(config);
    ParamStore<T> store;
    for (std::size_t i = 0; i < layout.size(); ++i) {
        const auto& spec = layout[i];
        if (spec.init == ParamSpec::Init::kCopy) {
            store.add(spec.name, spec.shape, store.get(spec.source).values());
            continue;
        }
        auto rng = make_rng(seed, i);
        store.add(spec.name, spec.shape, init_values<T>(spec, rng));
    }
    return store;
}

template <typename T>
Tensor<T> self_attention(const Tensor<T>& seq, const AttentionWeights<T>& w, std::optional<double> logit_scale) {
    auto q = ad::linear(seq, w.wq, w.bq);
    auto k = ad::linear(seq, w.wk, Tensor<T>());
    auto v = ad::linear(seq, w.wv, w.bv);
    auto o = ad::scaled_dot_attention(q, k, v, ad::AttentionOptions{w.heads, logit_scale});
    return ad::linear(o, w.wo, w.bo);
}

template <typename T>
Tensor<T> spatial_update(const Tensor<T>& grid, const AttentionWeights<T>& w, std::optional<double> logit_scale) {
    require_grid(grid.shape(), "view_inflated_spatial_attention");
    const auto& s = grid.shape();
    const auto b = s[0], v = s[1], tp = s[2], hp = s[3], wp = s[4], d = s[5];
    auto seq = ad::reshape(ad::permute(grid, {0, 2, 1, 3, 4, 5}), {b * tp, v * hp * wp, d});
    auto out = self_attention(seq, w, logit_scale);
    return ad::permute(ad::reshape(out, {b, tp, v, hp, wp, d}), {0, 2, 1, 3, 4, 5});
}

template <typename T>
Tensor<T> temporal_update(const Tensor<T>& grid, const AttentionWeights<T>& w, std::optional<double> logit_scale) {
    require_grid(grid.shape(), "temporal_attention");
    const auto& s = grid.shape();
    const auto b = s[0], v = s[1], tp = s[2], hp = s[3], wp = s[4], d = s[5];
    auto seq = ad::reshape(ad::permute(grid, {0, 1, 3, 4, 2, 5}), {b * v * hp * wp, tp, d});
    auto out = self_attention(seq, w, logit_scale);
    return ad::permute(ad::reshape(out, {b, v, hp, wp, tp, d}), {0, 1, 4, 2, 3, 5});
}

template <typename T>
Tensor<T> cross_update(const Tensor<T>& grid, const CrossContext<T>& context, const AttentionWeights<T>& w) {
    constexpr const char* op = "joint_cross_attention";
    require_grid(grid.shape(), op);
    const auto& s = grid.shape();
    const auto groups = s[0] * s[1] * s[2];
    const auto d = s[5];
    if (context.tokens.rank() != 3 || context.tokens.dim(0) != groups || context.tokens.dim(2) != d) {
        throw ShapeError(op, "context [" + std::to_string(groups) + ", L, " + std::to_string(d) + "]",
                         to_string(context.tokens.shape()));
    }
    if (static_cast<std::int64_t>(context.mask.size()) != groups * context.tokens.dim(1)) {
        throw ShapeError(op, "mask of " + std::to_string(groups * context.tokens.dim(1)) + " entries",
                         std::to_string(context.mask.size()));
    }
    auto queries = ad::reshape(grid, {groups, s[3] * s[4], d});
    auto q = ad::linear(queries, w.wq, w.bq);
    auto k = ad::linear(context.tokens, w.wk, Tensor<T>());
    auto v = ad::linear(context.tokens, w.wv, w.bv);
    auto o = ad::scaled_dot_attention(q, k, v, ad::AttentionOptions{w.heads, std::nullopt},
                                      std::span<const T>(context.mask));
    return ad::reshape(ad::linear(o, w.wo, w.bo), s);
}

template <typename T>
Tensor<T> view_inflated_spatial_attention(const Tensor<T>& grid, const AttentionWeights<T>& w,
                                          std::optional<double> logit_scale) {
    return ad::add(grid, spatial_update(grid, w, logit_scale));
}

template <typename T>
Tensor<T> temporal_attention(const Tensor<T>& grid, const AttentionWeights<T>& w, std::optional<double> logit_scale) {
    return ad::add(grid, temporal_update(grid, w, logit_scale));
}

template <typename T>
Tensor<T> joint_cross_attention(const Tensor<T>& grid, const CrossContext<T>& context, const AttentionWeights<T>& w) {
    return ad::add(grid, cross_update(grid, context, w));
}

template <typename T>
Tensor<T> timestep_features(std::span<const double> t, std::int64_t dim) {
    if (dim < 2 || dim % 2 != 0) throw ShapeError("timestep_features", "even width >= 2", std::to_string(dim));
    const auto half = dim / 2;
    std::vector<T> out;
    out.reserve(t.size() * static_cast<std::size_t>(dim));
    for (double ti : t) {
        if (!(ti >= 0.0 && ti <= 1.0)) {
            throw std::out_of_range("timestep " + std::to_string(ti) + " outside [0, 1]");
        }
        const double scaled = ti * 1000.0;
        for (std::int64_t i = 0; i < half; ++i) {
            const double freq = std::exp(-std::log(10000.0) * static_cast<double>(i) / static_cast<double>(half));
            out.push_back(static_cast<T>(std::cos(scaled * freq)));
        }
        for (std::int64_t i = 0; i < half; ++i) {
            const double freq = std::exp(-std::log(10000.0) * static_cast<double>(i) / static_cast<double>(half));
            out.push_back(static_cast<T>(std::sin(scaled * freq)));
        }
    }
    return Tensor<T>::from({static_cast<std::int64_t>(t.size()), dim}, std::move(out));
}

template <typename T>
Modulation<T> block_modulation(const Tensor<T>& c, const Tensor<T>& ada_w, const Tensor<T>& ada_b) {
    const auto d = ada_w.dim(1) / 6;
    auto parts = ad::split(ad::linear(c, ada_w, ada_b), 1, {d, d, d, d, d, d});
    return {parts[0], parts[1], parts[2], parts[3], parts[4], parts[5]};
}

template <typename T>
Tensor<T> patch_vectors(const Tensor<T>& latent, std::int64_t patch, std::int64_t patch_t) {
    constexpr const char* op = "patchify_3d";
    const auto& s = latent.shape();
    if (s.size() != 6 || s[2] % patch_t != 0 || s[4] % patch != 0 || s[5] % patch != 0) {
        throw ShapeError(op,
                         "(B, V, T, C, h, w) with T % " + std::to_string(patch_t) + " == 0 and h, w % " +
                             std::to_string(patch) + " == 0",
                         to_string(s));
    }
    const auto b = s[0], v = s[1], tp = s[2] / patch_t, c = s[3], hp = s[4] / patch, wp = s[5] / patch;
    auto split_axes = ad::reshape(latent, {b, v, tp, patch_t, c, hp, patch, wp, patch});
    auto grouped = ad::permute(split_axes, {0, 1, 2, 5, 7, 3, 4, 6, 8});
    return ad::reshape(grouped, {b, v, tp, hp, wp, patch_t * c * patch * patch});
}

template <typename T>
Tensor<T> assemble_patches(const Tensor<T>& vectors, std::int64_t channels, std::int64_t patch,
                           std::int64_t patch_t) {
    const auto& s = vectors.shape();
    if (s.size() != 6 || s[5] != patch_t * channels * patch * patch) {
        throw ShapeError("unpatchify", "(B, V, T', H', W', " + std::to_string(patch_t * channels * patch * patch) + ")",
                         to_string(s));
    }
    const auto b = s[0], v = s[1], tp = s[2], hp = s[3], wp = s[4];
    auto split_axes = ad::reshape(vectors, {b, v, tp, hp, wp, patch_t, channels, patch, patch});
    auto grouped = ad::permute(split_axes, {0, 1, 2, 5, 6, 3, 7, 4, 8});
    return ad::reshape(grouped, {b, v, tp * patch_t, channels, hp * patch, wp * patch});
}

template <typename T>
StditModel<T>::StditModel(ModelConfig config, std::uint64_t seed)
    : config_(std::move(config)), params_(init_params<T>(config_, seed)) {}

template <typename T>
StditModel<T>::StditModel(ModelConfig config, ParamStore<T> params)
    : config_(std::move(config)), params_(std::move(params)) {
    const auto layout = parameter_layout(config_);
    if (layout.size() != params_.size()) {
        throw std::invalid_argument("parameter count " + std::to_string(params_.size()) + " does not match config (" +
                                    std::to_string(layout.size()) + ")");
    }
    for (std::size_t i = 0; i < layout.size(); ++i) {
        const auto& have = params_.entries()[i];
        if (have.name != layout[i].name || have.tensor.shape() != layout[i].shape) {
            throw std::invalid_argument("parameter " + std::to_string(i) + " is " + have.name + " " +
                                        to_string(have.tensor.shape()) + ", config expects " + layout[i].name + " " +
                                        to_string(layout[i].shape));
        }
    }
}

template <typename T>
AttentionWeights<T> StditModel<T>::attention(const std::string& prefix) const {
    const auto& p = params_;
    return {p.get(prefix + ".q.weight"), p.get(prefix + ".q.bias"), p.get(prefix + ".k.weight"),
            p.get(prefix + ".v.weight"), p.get(prefix + ".v.bias"), p.get(prefix + ".o.weight"),
            p.get(prefix + ".o.bias"),   config_.heads};
}

template <typename T>
BlockWeights<T> StditModel<T>::block_weights(const std::string& prefix, bool full) const {
    BlockWeights<T> w;
    w.ada_w = params_.get(prefix + ".ada.weight");
    w.ada_b = params_.get(prefix + ".ada.bias");
    w.spatial = attention(prefix + ".spatial");
    if (full) {
        w.temporal = attention(prefix + ".temporal");
        w.cross = attention(prefix + ".cross");
    }
    w.fc1_w = params_.get(prefix + ".mlp.fc1.weight");
    w.fc1_b = params_.get(prefix + ".mlp.fc1.bias");
    w.fc2_w = params_.get(prefix + ".mlp.fc2.weight");
    w.fc2_b = params_.get(prefix + ".mlp.fc2.bias");
    return w;
}

template <typename T>
BlockWeights<T> StditModel<T>::trunk_block(std::int64_t i) const {
    return block_weights(block_prefix(i), true);
}

template <typename T>
BlockWeights<T> StditModel<T>::control_block(std::int64_t i) const {
    if (i < 0 || i >= config_.control_depth) {
        throw std::out_of_range("control block " + std::to_string(i) + " outside [0, K)");
    }
    return block_weights(control_prefix(i), false);
}

template <typename T>
conditioning::CaptionEncoderParams<T> StditModel<T>::caption_params() const {
    return {params_.get("caption.table"), params_.get("caption.pos"), params_.get("caption.null")};
}

template <typename T>
conditioning::LayoutEncoderParams<T> StditModel<T>::layout_params() const {
    const auto& p = params_;
    return {p.get("layout.category"),    p.get("layout.instance"), p.get("layout.mlp1.weight"),
            p.get("layout.mlp1.bias"),   p.get("layout.mlp2.weight"), p.get("layout.mlp2.bias"),
            p.get("layout.null")};
}

template <typename T>
std::int64_t StditModel<T>::check_latent(const Tensor<T>& latent, const char* op) const {
    const auto& c = config_;
    const auto& s = latent.shape();
    const bool ok = s.size() == 6 && s[1] == c.views && s[2] >= 1 && s[2] % c.patch_t == 0 &&
                    s[2] <= c.frames && s[3] == c.latent_channels() && s[4] == c.latent_height() &&
                    s[5] == c.latent_width();
    if (!ok) {
        throw ShapeError(op,
                         "(B, " + std::to_string(c.views) + ", T <= " + std::to_string(c.frames) + ", " +
                             std::to_string(c.latent_channels()) + ", " + std::to_string(c.latent_height()) + ", " +
                             std::to_string(c.latent_width()) + ")",
                         to_string(s));
    }
    return s[2];
}

template <typename T>
Tensor<T> StditModel<T>::patchify(const Tensor<T>& latent) const {
    const auto frames = check_latent(latent, "patchify_3d");
    const auto& c = config_;
    auto tokens = ad::linear(patch_vectors(latent, c.patch, c.patch_t), params_.get("embed.patch.weight"),
                             params_.get("embed.patch.bias"));
    const auto b = latent.dim(0), tp = frames / c.patch_t;
    auto flat = ad::reshape(tokens, {b, c.views, tp, c.tokens_per_frame(), c.hidden});
    flat = ad::add_axis_embedding(flat, params_.get("embed.pos_spatial"), 3);
    flat = ad::add_axis_embedding(flat, ad::gather_rows(params_.get("embed.pos_temporal"), iota_ids(tp)), 2);
    flat = ad::add_axis_embedding(flat, params_.get("embed.view"), 1);
    return ad::reshape(flat, {b, c.views, tp, c.grid_height(), c.grid_width(), c.hidden});
}

template <typename T>
Tensor<T> StditModel<T>::unpatchify(const Tensor<T>& grid) const {
    require_grid(grid.shape(), "unpatchify");
    const auto& c = config_;
    auto vectors = ad::linear(grid, params_.get("final.linear.weight"), params_.get("final.linear.bias"));
    return assemble_patches(vectors, c.latent_channels(), c.patch, c.patch_t);
}

template <typename T>
Tensor<T> StditModel<T>::embed_sketch(std::span<const RoadSketch* const> sketches, std::int64_t frames) const {
    const auto& c = config_;
    if (c.control_depth == 0) throw std::logic_error("embed_sketch: model has no control branch");
    const auto b = static_cast<std::int64_t>(sketches.size());
    const auto plane = c.height * c.width;
    const auto per_item = c.views * frames * 3 * plane;
    std::vector<T> pixels(static_cast<std::size_t>(b * per_item), T(0));
    for (std::int64_t i = 0; i < b; ++i) {
        const RoadSketch* s = sketches[static_cast<std::size_t>(i)];
        if (!s) continue;
        if (s->views != c.views || s->frames != frames || s->height != c.height || s->width != c.width) {
            throw ShapeError("embed_sketch",
                             "sketch (" + std::to_string(c.views) + ", " + std::to_string(frames) + ", " +
                                 std::to_string(c.height) + ", " + std::to_string(c.width) + ")",
                             "(" + std::to_string(s->views) + ", " + std::to_string(s->frames) + ", " +
                                 std::to_string(s->height) + ", " + std::to_string(s->width) + ")");
        }
        for (std::int64_t vt = 0; vt < c.views * frames; ++vt) {
            const auto* src = s->bits.data() + vt * plane;
            T* dst = pixels.data() + i * per_item + vt * 3 * plane;
            for (std::int64_t ch = 0; ch < 3; ++ch) {
                for (std::int64_t k = 0; k < plane; ++k) dst[ch * plane + k] = static_cast<T>(src[k]);
            }
        }
    }
    auto raster = Tensor<T>::from({b, c.views, frames, 3, c.height, c.width}, std::move(pixels));
    auto latent = codec::space_to_depth(raster, c.codec_factor);
    return ad::linear(patch_vectors(latent, c.patch, c.patch_t), params_.get("control.sketch.weight"),
                      params_.get("control.sketch.bias"));
}

template <typename T>
Tensor<T> StditModel<T>::timestep_conditioning(std::span<const double> t) const {
    auto features = timestep_features<T>(t, config_.time_embed_dim);
    auto h = ad::gelu(ad::linear(features, params_.get("time.mlp1.weight"), params_.get("time.mlp1.bias")));
    auto temb = ad::linear(h, params_.get("time.mlp2.weight"), params_.get("time.mlp2.bias"));
    return ad::gelu(temb);
}

template <typename T>
Modulation<T> StditModel<T>::timestep_modulation(const Tensor<T>& c, std::int64_t block) const {
    const auto prefix = block_prefix(block);
    return block_modulation(c, params_.get(prefix + ".ada.weight"), params_.get(prefix + ".ada.bias"));
}

template <typename T>
CrossContext<T> StditModel<T>::cross_context(std::span<const ConditionTriple> conds, std::int64_t frames) const {
    const auto& c = config_;
    const auto tp = frames / c.patch_t;
    const auto groups_per_item = c.views * tp;
    const auto caption = caption_params();

    std::vector<std::vector<conditioning::LayoutEntry>> groups;
    groups.reserve(conds.size() * static_cast<std::size_t>(groups_per_item));
    std::vector<Tensor<T>> captions;
    for (const auto& cond : conds) {
        captions.push_back(ad::tile_leading(conditioning::encode_caption(cond.caption, caption), groups_per_item));
        for (std::int64_t v = 0; v < c.views; ++v) {
            for (std::int64_t tau = 0; tau < tp; ++tau) {
                if (cond.layout) {
                    groups.push_back(conditioning::entries_for(*cond.layout, tau * c.patch_t, v));
                } else {
                    groups.emplace_back();
                }
            }
        }
    }
    auto layout = conditioning::encode_layout_groups(groups, layout_params());
    CrossContext<T> out;
    out.tokens = ad::concat<T>({ad::concat(captions, 0), layout.tokens}, 1);
    const auto layout_mask = conditioning::additive_mask<T>(layout.valid);
    out.mask.reserve(groups.size() * static_cast<std::size_t>(c.text_len + conditioning::kMaxInstances));
    for (std::size_t g = 0; g < groups.size(); ++g) {
        out.mask.insert(out.mask.end(), static_cast<std::size_t>(c.text_len), T(0));
        const auto* m = layout_mask.data() + g * conditioning::kMaxInstances;
        out.mask.insert(out.mask.end(), m, m + conditioning::kMaxInstances);
    }
    return out;
}

template <typename T>
std::pair<Tensor<T>, Tensor<T>> StditModel<T>::control_step(std::int64_t i, const Tensor<T>& state,
                                                            const Tensor<T>& activation, const Tensor<T>& c) const {
    const auto w = control_block(i);
    const auto mod = block_modulation(c, w.ada_w, w.ada_b);
    auto x = ad::add(state, activation);
    x = ad::add_gated(x, spatial_update(ad::modulate(ad::layer_norm(x), mod.shift1, mod.scale1), w.spatial),
                      mod.gate1);
    x = ad::add_gated(x, mlp(ad::modulate(ad::layer_norm(x), mod.shift2, mod.scale2), w), mod.gate2);
    const auto conn = "control.connector." + std::to_string(i);
    auto residual = ad::linear(x, params_.get(conn + ".weight"), params_.get(conn + ".bias"));
    return {x, residual};
}

template <typename T>
std::vector<Tensor<T>> StditModel<T>::control_forward(const std::vector<Tensor<T>>& activations,
                                                      const Tensor<T>& sketch_tokens, const Tensor<T>& c) const {
    if (static_cast<std::int64_t>(activations.size()) != config_.control_depth) {
        throw std::invalid_argument("control_forward: " + std::to_string(activations.size()) +
                                    " activations for K = " + std::to_string(config_.control_depth));
    }
    std::vector<Tensor<T>> residuals;
    Tensor<T> state = sketch_tokens;
    for (std::int64_t i = 0; i < config_.control_depth; ++i) {
        auto [next, residual] = control_step(i, state, activations[static_cast<std::size_t>(i)], c);
        state = next;
        residuals.push_back(residual);
    }
    return residuals;
}

template <typename T>
Tensor<T> StditModel<T>::block_forward(std::int64_t i, const Tensor<T>& x_in, const Modulation<T>& mod,
                                       const Tensor<T>& residual, const CrossContext<T>& context) const {
    const auto w = trunk_block(i);
    auto x = ad::add_gated(x_in, spatial_update(ad::modulate(ad::layer_norm(x_in), mod.shift1, mod.scale1), w.spatial),
                           mod.gate1);
    if (residual.defined()) x = ad::add(x, residual);
    x = ad::add_gated(x, temporal_update(ad::modulate(ad::layer_norm(x), mod.shift1, mod.scale1), *w.temporal),
                      mod.gate1);
    x = ad::add(x, cross_update(ad::layer_norm(x), context, *w.cross));
    x = ad::add_gated(x, mlp(ad::modulate(ad::layer_norm(x), mod.shift2, mod.scale2), w), mod.gate2);
    return x;
}

template <typename T>
Tensor<T> StditModel<T>::forward(const Tensor<T>& x_t, std::span<const double> t, std::span<const ConditionTriple> conds,
                                 ForwardTrace<T>* trace) const {
    const auto frames = check_latent(x_t, "forward_velocity");
    const auto b = x_t.dim(0);
    if (static_cast<std::int64_t>(t.size()) != b || static_cast<std::int64_t>(conds.size()) != b) {
        throw ShapeError("forward_velocity", std::to_string(b) + " timesteps and conditions",
                         std::to_string(t.size()) + " timesteps, " + std::to_string(conds.size()) + " conditions");
    }
    const auto c = timestep_conditioning(t);
    auto x = patchify(x_t);
    const auto context = cross_context(conds, frames);

    Tensor<T> state;
    if (config_.control_depth > 0) {
        std::vector<const RoadSketch*> sketches;
        for (const auto& cond : conds) sketches.push_back(cond.sketch.get());
        state = embed_sketch(sketches, frames);
        if (trace) trace->sketch_tokens = state;
    }

    for (std::int64_t i = 0; i < config_.blocks; ++i) {
        try {
            if (trace) trace->block_inputs.push_back(x);
            Tensor<T> residual;
            if (i < config_.control_depth) {
                auto [next, r] = control_step(i, state, x, c);
                state = next;
                residual = r;
                if (trace) trace->residuals.push_back(residual);
            }
            x = block_forward(i, x, timestep_modulation(c, i), residual, context);
        } catch (const ShapeError& e) {
            throw e.in_context("block " + std::to_string(i));
        } catch (const NumericError& e) {
            throw NumericError("block " + std::to_string(i) + ": " + e.what());
        }
    }

    auto final_parts = ad::split(ad::linear(c, params_.get("final.ada.weight"), params_.get("final.ada.bias")), 1,
                                 {config_.hidden, config_.hidden});
    auto h = ad::modulate(ad::layer_norm(x), final_parts[0], final_parts[1]);
    return unpatchify(h);
}

#define MVDIT_INSTANTIATE_MODEL(T)                                                                                 \
    template ParamStore<T> init_params<T>(const ModelConfig&, std::uint64_t);                                     \
    template Tensor<T> self_attention(const Tensor<T>&, const AttentionWeights<T>&, std::optional<double>);       \
    template Tensor<T> spatial_update(const Tensor<T>&, const AttentionWeights<T>&, std::optional<double>);       \
    template Tensor<T> temporal_update(const Tensor<T>&, const AttentionWeights<T>&, std::optional<double>);      \
    template Tensor<T> cross_update(const Tensor<T>&, const CrossContext<T>&, const AttentionWeights<T>&);        \
    template Tensor<T> view_inflated_spatial_attention(const Tensor<T>&, const AttentionWeights<T>&,              \
                                                       std::optional<double>);                                    \
    template Tensor<T> temporal_attention(const Tensor<T>&, const AttentionWeights<T>&, std::optional<double>);   \
    template Tensor<T> joint_cross_attention(const Tensor<T>&, const CrossContext<T>&,                            \
                                             const AttentionWeights<T>&);                                         \
    template Tensor<T> timestep_features<T>(std::span<const double>, std::int64_t);                               \
    template Modulation<T> block_modulation(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&);                \
    template Tensor<T> patch_vectors(const Tensor<T>&, std::int64_t, std::int64_t);                               \
    template Tensor<T> assemble_patches(const Tensor<T>&, std::int64_t, std::int64_t, std::int64_t);              \
    template class StditModel<T>;

MVDIT_INSTANTIATE_MODEL(float)
MVDIT_INSTANTIATE_MODEL(double)

}  // namespace mvdit::model

// Copyright (c) 2026 The mvdit Authors
// SPDX-License-Identifier: Apache-2.0

#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <limits>
#include <set>

#include "fixtures.hpp"
#include "mvdit/model/stdit.hpp"
#include "mvdit/tensor/grad_check.hpp"
#include "mvdit/tensor/ops.hpp"

using namespace mvdit;
using namespace mvdit::model;
using conditioning::ConditionTriple;

namespace {

ModelConfig three_view_config() {
    auto c = micro_config();
    c.views = 3;
    c.control_depth = 2;
    return c;
}

template <typename T>
Tensor<T> random_grid(Shape shape, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    return Tensor<T>::randn(std::move(shape), rng);
}

template <typename T>
AttentionWeights<T> random_attention(std::int64_t d, std::int64_t heads, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    const T s = T(1) / std::sqrt(T(d));
    return {Tensor<T>::randn({d, d}, rng, s), Tensor<T>::randn({d}, rng, s), Tensor<T>::randn({d, d}, rng, s),
            Tensor<T>::randn({d, d}, rng, s), Tensor<T>::randn({d}, rng, s), Tensor<T>::randn({d, d}, rng, s),
            Tensor<T>::randn({d}, rng, s),    heads};
}

// out[:, i] = in[:, sigma[i]] along axis 1 of a [B, V, ...] tensor.
template <typename T>
Tensor<T> permute_views(const Tensor<T>& x, const std::vector<std::int64_t>& sigma) {
    const auto b = x.dim(0), v = x.dim(1);
    const auto inner = x.numel() / (b * v);
    std::vector<T> out(x.values().size());
    for (std::int64_t i = 0; i < b; ++i) {
        for (std::int64_t j = 0; j < v; ++j) {
            const auto* src = x.values().data() + (i * v + sigma[j]) * inner;
            std::copy(src, src + inner, out.begin() + (i * v + j) * inner);
        }
    }
    return Tensor<T>::from(x.shape(), std::move(out));
}

ConditionTriple permute_condition(const ConditionTriple& cond, const std::vector<std::int64_t>& sigma) {
    std::vector<std::int64_t> inverse(sigma.size());
    for (std::size_t i = 0; i < sigma.size(); ++i) inverse[static_cast<std::size_t>(sigma[i])] = static_cast<std::int64_t>(i);
    auto layout = *cond.layout;
    for (auto& e : layout) e.view = static_cast<std::uint16_t>(inverse[e.view]);
    const auto& s = *cond.sketch;
    auto sketch = s;
    const auto plane = s.frames * s.height * s.width;
    for (std::int64_t j = 0; j < s.views; ++j) {
        std::copy(s.bits.begin() + sigma[static_cast<std::size_t>(j)] * plane,
                  s.bits.begin() + (sigma[static_cast<std::size_t>(j)] + 1) * plane, sketch.bits.begin() + j * plane);
    }
    return conditioning::make_condition(cond.caption, layout, sketch);
}

template <typename T>
double max_abs_diff(const Tensor<T>& a, const Tensor<T>& b) {
    EXPECT_EQ(a.shape(), b.shape());
    double m = 0;
    for (std::int64_t i = 0; i < a.numel(); ++i) m = std::max(m, std::abs(double(a[i]) - double(b[i])));
    return m;
}

}  // namespace

TEST(ModelConfig, DefaultsAreValid) {
    ModelConfig c;
    EXPECT_TRUE(c.violations().empty());
    EXPECT_EQ(c.latent_channels(), 12);
    EXPECT_EQ(c.tokens_per_frame(), 64);
    EXPECT_EQ(c.patch_dim(), 48);
    EXPECT_TRUE(micro_config().violations().empty());
}

TEST(ModelConfig, ListsEveryViolation) {
    ModelConfig c;
    c.heads = 3;
    c.control_depth = 9;
    c.frames = 15;
    c.patch_t = 2;
    const auto v = c.violations();
    EXPECT_EQ(v.size(), 3u);
    EXPECT_THROW(c.validate(), std::invalid_argument);
}

TEST(ParamLayout, NamesUniqueAndOrdered) {
    const auto layout = parameter_layout(ModelConfig{});
    std::set<std::string> names;
    for (const auto& p : layout) EXPECT_TRUE(names.insert(p.name).second) << p.name;
    EXPECT_EQ(layout.front().name, "embed.patch.weight");
    EXPECT_EQ(layout.back().name, "final.linear.bias");
    EXPECT_TRUE(names.count("control.blocks.3.spatial.q.weight"));
    EXPECT_FALSE(names.count("control.blocks.3.temporal.q.weight"));
    EXPECT_FALSE(names.count("control.blocks.4.ada.weight"));
}

TEST(ParamLayout, InitIsSeededAndZeroWhereDocumented) {
    const auto a = init_params<float>(micro_config(), 5);
    const auto b = init_params<float>(micro_config(), 5);
    const auto c = init_params<float>(micro_config(), 6);
    for (std::size_t i = 0; i < a.size(); ++i) EXPECT_EQ(a.entries()[i].tensor.values(), b.entries()[i].tensor.values());
    EXPECT_NE(a.get("embed.patch.weight").values(), c.get("embed.patch.weight").values());
    for (const auto* name : {"blocks.0.ada.weight", "blocks.1.cross.o.weight", "control.connector.0.weight",
                             "control.connector.0.bias", "final.ada.weight"}) {
        for (float v : a.get(name).values()) ASSERT_EQ(v, 0.f) << name;
    }
    bool nonzero = false;
    for (float v : a.get("final.linear.weight").values()) nonzero = nonzero || v != 0.f;
    EXPECT_TRUE(nonzero);
}

TEST(ParamLayout, MismatchedParamsRejected) {
    auto params = init_params<float>(micro_config(), 1);
    auto other = micro_config();
    other.hidden = 32;
    EXPECT_THROW(StditModel<float>(other, params), std::invalid_argument);
    EXPECT_NO_THROW(StditModel<float>(micro_config(), params));
}

TEST(Patchify, TokenCountAndShape) {
    auto c = micro_config();
    c.patch_t = 2;
    StditModel<float> m(c, 1);
    auto grid = m.patchify(fixtures::random_latent<float>(c, 3, 2, 9));
    EXPECT_EQ(grid.shape(), (Shape{3, 2, 1, 2, 2, 16}));
    EXPECT_EQ(grid.numel() / c.hidden, 3 * c.views * (2 / c.patch_t) * c.tokens_per_frame());
}

TEST(Patchify, IdentityPaddedProjection) {
    auto c = micro_config();
    c.patch = 1;
    c.hidden = 16;
    StditModel<double> m(c, 1);
    const auto ch = c.latent_channels();
    std::vector<double> w(static_cast<std::size_t>(ch * c.hidden), 0.0);
    for (std::int64_t i = 0; i < ch; ++i) w[static_cast<std::size_t>(i * c.hidden + i)] = 1.0;
    m.params().assign("embed.patch.weight", w);
    for (const auto* name : {"embed.pos_spatial", "embed.pos_temporal", "embed.view"}) {
        m.params().assign(name, std::vector<double>(m.params().get(name).values().size(), 0.0));
    }
    auto z = fixtures::random_latent<double>(c, 1, 2, 3);
    auto grid = m.patchify(z);
    for (std::int64_t v = 0; v < c.views; ++v) {
        for (std::int64_t t = 0; t < 2; ++t) {
            for (std::int64_t y = 0; y < 4; ++y) {
                for (std::int64_t x = 0; x < 4; ++x) {
                    const auto token = ((v * 2 + t) * 4 + y) * 4 + x;
                    for (std::int64_t k = 0; k < c.hidden; ++k) {
                        const double expect =
                            k < ch ? z[(((v * 2 + t) * ch + k) * 4 + y) * 4 + x] : 0.0;
                        EXPECT_EQ(grid[token * c.hidden + k], expect);
                    }
                }
            }
        }
    }
}

TEST(Patchify, ViewEmbeddingDistinguishesIdenticalViews) {
    const auto c = micro_config();
    StditModel<double> m(c, 2);
    auto one = fixtures::random_latent<double>(c, 1, 2, 4);
    const auto half = one.numel() / 2;
    std::vector<double> same(one.values());
    std::copy(same.begin(), same.begin() + half, same.begin() + half);
    auto grid = m.patchify(TensorD::from(one.shape(), same));
    const auto& view = m.params().get("embed.view");
    const auto tokens = grid.numel() / 2;
    for (std::int64_t i = 0; i < tokens; ++i) {
        const auto d = i % c.hidden;
        EXPECT_NEAR(grid[tokens + i] - grid[i], view[c.hidden + d] - view[d], 1e-12);
    }
}

TEST(SpatialAttention, SingleViewIsPlainSpatialAttentionBitwise) {
    auto grid = random_grid<float>({2, 1, 3, 4, 4, 8}, 1);
    auto w = random_attention<float>(8, 2, 2);
    auto inflated = view_inflated_spatial_attention(grid, w);
    auto plain = ad::add(grid, ad::reshape(self_attention(ad::reshape(grid, {6, 16, 8}), w), grid.shape()));
    EXPECT_EQ(inflated.values(), plain.values());
}

TEST(SpatialAttention, ViewPermutationEquivariance) {
    auto grid = random_grid<double>({2, 3, 2, 2, 2, 8}, 3);
    auto w = random_attention<double>(8, 2, 4);
    const std::vector<std::int64_t> sigma{2, 0, 1};
    auto out = view_inflated_spatial_attention(grid, w);
    auto out_perm = view_inflated_spatial_attention(permute_views(grid, sigma), w);
    EXPECT_LT(max_abs_diff(out_perm, permute_views(out, sigma)), 1e-12);
}

TEST(SpatialAttention, ViewsInteract) {
    auto grid = random_grid<double>({1, 2, 1, 2, 2, 8}, 5);
    auto w = random_attention<double>(8, 2, 6);
    auto out = spatial_update(grid, w);
    auto other = grid.values();
    for (std::size_t i = other.size() / 2; i < other.size(); ++i) other[i] += 1.0;
    auto out2 = spatial_update(TensorD::from(grid.shape(), other), w);
    EXPECT_GT(std::abs(out[0] - out2[0]), 1e-6);
}

TEST(SpatialAttention, UniformWeightsGiveOneValuePerSlice) {
    auto grid = random_grid<double>({2, 3, 2, 2, 2, 8}, 7);
    auto w = random_attention<double>(8, 2, 8);
    auto update = spatial_update(grid, w, 0.0);
    // Positions of a (B, T') slice: all views and spatial positions.
    for (std::int64_t b = 0; b < 2; ++b) {
        for (std::int64_t t = 0; t < 2; ++t) {
            const auto ref = ((b * 3 + 0) * 2 + t) * 4 * 8;
            for (std::int64_t v = 0; v < 3; ++v) {
                for (std::int64_t s = 0; s < 4; ++s) {
                    const auto at = (((b * 3 + v) * 2 + t) * 4 + s) * 8;
                    for (std::int64_t d = 0; d < 8; ++d) EXPECT_NEAR(update[at + d], update[ref + d], 1e-12);
                }
            }
        }
    }
    EXPECT_GT(std::abs(update[0] - update[4 * 8 * 2 * 3]), 1e-6);  // differs across batch items
}

TEST(TemporalAttention, SingleFrameIsValueOutputPath) {
    auto grid = random_grid<double>({2, 2, 1, 2, 2, 8}, 9);
    auto w = random_attention<double>(8, 2, 10);
    auto update = temporal_update(grid, w);
    auto expect = ad::linear(ad::linear(grid, w.wv, w.bv), w.wo, w.bo);
    EXPECT_LT(max_abs_diff(update, expect), 1e-12);
}

TEST(TemporalAttention, FramePermutationEquivariance) {
    auto grid = random_grid<double>({1, 2, 3, 2, 2, 8}, 11);
    auto w = random_attention<double>(8, 2, 12);
    const std::vector<std::size_t> swap{0, 2, 1, 3, 4, 5};
    const std::vector<std::int64_t> sigma{1, 2, 0};
    auto permute_frames = [&](const TensorD& x) {
        return ad::permute(permute_views(ad::permute(x, swap), sigma), swap);
    };
    auto out = temporal_attention(grid, w);
    auto out_perm = temporal_attention(permute_frames(grid), w);
    EXPECT_LT(max_abs_diff(out_perm, permute_frames(out)), 1e-12);
    EXPECT_EQ(out.shape(), grid.shape());
}

TEST(TemporalAttention, ShapePreservedForRandomGrids) {
    std::mt19937_64 rng(13);
    std::uniform_int_distribution<std::int64_t> e(1, 3);
    for (int i = 0; i < 4; ++i) {
        Shape s{e(rng), e(rng), e(rng), e(rng), e(rng), 8};
        auto grid = random_grid<float>(s, i);
        EXPECT_EQ(temporal_attention(grid, random_attention<float>(8, 4, i)).shape(), s);
    }
}

TEST(CrossAttention, ZeroOutputProjectionIsIdentity) {
    auto grid = random_grid<float>({1, 2, 2, 2, 2, 8}, 14);
    auto w = random_attention<float>(8, 2, 15);
    w.wo = TensorF::zeros({8, 8});
    w.bo = TensorF::zeros({8});
    CrossContext<float> ctx{random_grid<float>({4, 5, 8}, 16), std::vector<float>(20, 0.f)};
    EXPECT_EQ(joint_cross_attention(grid, ctx, w).values(), grid.values());
}

TEST(CrossAttention, NullCaptionAndMaskedLayoutSeeOnlyNullTokens) {
    const auto c = micro_config();
    StditModel<double> m(c, 17);
    randomize(m.params(), 18, 0.3);
    ConditionTriple cond;  // all φ
    auto ctx = m.cross_context(std::span<const ConditionTriple>(&cond, 1), 2);
    const auto groups = c.views * 2;
    EXPECT_EQ(ctx.tokens.shape(), (Shape{groups, 24, c.hidden}));
    auto grid = random_grid<double>({1, c.views, 2, 2, 2, c.hidden}, 19);
    auto w = m.trunk_block(0).cross.value();
    auto full = cross_update(grid, ctx, w);
    CrossContext<double> null_only{ad::tile_leading(m.params().get("caption.null"), groups),
                                   std::vector<double>(static_cast<std::size_t>(groups * 16), 0.0)};
    EXPECT_LT(max_abs_diff(full, cross_update(grid, null_only, w)), 1e-12);
}

TEST(CrossAttention, DuplicatedLayoutTokenChangesOutput) {
    const auto c = micro_config();
    StditModel<double> m(c, 20);
    randomize(m.params(), 21, 0.3);
    auto cond = fixtures::random_condition(c, 2, 22);
    auto single = std::vector<conditioning::LayoutEntry>{};
    conditioning::LayoutEntry e;
    e.cx = 0.4f;
    e.cy = 0.6f;
    e.sw = 0.2f;
    e.sh = 0.2f;
    e.category = 2;
    single.push_back(e);
    auto doubled = single;
    doubled.push_back(e);
    auto a = conditioning::make_condition(cond.caption, single, std::nullopt);
    auto b = conditioning::make_condition(cond.caption, doubled, std::nullopt);
    auto grid = random_grid<double>({1, c.views, 2, 2, 2, c.hidden}, 23);
    auto w = m.trunk_block(0).cross.value();
    auto ya = cross_update(grid, m.cross_context(std::span<const ConditionTriple>(&a, 1), 2), w);
    auto yb = cross_update(grid, m.cross_context(std::span<const ConditionTriple>(&b, 1), 2), w);
    EXPECT_GT(max_abs_diff(ya, yb), 1e-8);
}

TEST(CrossAttention, MaskLengthMismatchRejected) {
    auto grid = random_grid<float>({1, 1, 1, 2, 2, 8}, 24);
    CrossContext<float> ctx{random_grid<float>({1, 5, 8}, 25), std::vector<float>(4, 0.f)};
    EXPECT_THROW(cross_update(grid, ctx, random_attention<float>(8, 2, 26)), ShapeError);
}

TEST(Timestep, OutOfRangeRejected) {
    StditModel<float> m(micro_config(), 1);
    const std::vector<double> bad{1.5};
    EXPECT_THROW(m.timestep_conditioning(bad), std::out_of_range);
}

TEST(Timestep, ModulationPerSampleAndDistinctAfterPerturbation) {
    const auto c = micro_config();
    StditModel<double> m(c, 27);
    const std::vector<double> ts{0.0, 1.0};
    auto zero_mod = m.timestep_modulation(m.timestep_conditioning(ts), 0);
    for (double v : zero_mod.gate1.values()) EXPECT_EQ(v, 0.0);
    std::mt19937_64 rng(28);
    auto perturbed = TensorD::randn({c.hidden, 6 * c.hidden}, rng, 0.1);
    m.params().assign("blocks.0.ada.weight", perturbed.values());
    auto mod = m.timestep_modulation(m.timestep_conditioning(ts), 0);
    EXPECT_EQ(mod.scale1.shape(), (Shape{2, c.hidden}));
    double diff = 0;
    for (std::int64_t d = 0; d < c.hidden; ++d) diff += std::abs(mod.scale1[d] - mod.scale1[c.hidden + d]);
    EXPECT_GT(diff, 1e-6);
}

TEST(Forward, ZeroGatesReduceToFinalProjection) {
    const auto c = micro_config();
    StditModel<float> m(c, 29);
    auto x = fixtures::random_latent<float>(c, 1, 2, 30);
    const std::vector<double> t{0.4};
    auto cond = fixtures::random_condition(c, 2, 31);
    auto out = m.forward(x, t, std::span<const ConditionTriple>(&cond, 1));
    auto expect = m.unpatchify(ad::layer_norm(m.patchify(x)));
    EXPECT_EQ(out.values(), expect.values());
}

TEST(Forward, OutputShapeMatchesInputForRandomConfigs) {
    std::vector<ModelConfig> configs(4, micro_config());
    configs[1].views = 3;
    configs[1].patch = 1;
    configs[2].patch_t = 2;
    configs[2].frames = 4;
    configs[2].control_depth = 0;
    configs[3].codec_factor = 1;
    configs[3].heads = 4;
    configs[3].blocks = 3;
    configs[3].control_depth = 3;
    for (std::size_t i = 0; i < configs.size(); ++i) {
        const auto& c = configs[i];
        StditModel<float> m(c, i);
        randomize(m.params(), 100 + i, 0.2);
        auto x = fixtures::random_latent<float>(c, 2, c.frames, i);
        const std::vector<double> t{0.1, 0.9};
        std::vector<ConditionTriple> conds{fixtures::random_condition(c, c.frames, i), ConditionTriple::null()};
        EXPECT_EQ(m.forward(x, t, conds).shape(), x.shape()) << i;
    }
}

TEST(Forward, ShorterClipUsesTemporalPrefix) {
    auto c = micro_config();
    c.frames = 4;
    StditModel<float> m(c, 3);
    auto x = fixtures::random_latent<float>(c, 1, 2, 4);
    const std::vector<double> t{0.5};
    auto cond = fixtures::random_condition(c, 2, 5);
    EXPECT_EQ(m.forward(x, t, std::span<const ConditionTriple>(&cond, 1)).shape(), x.shape());
    auto too_long = fixtures::random_latent<float>(c, 1, 6, 4);
    EXPECT_THROW(m.forward(too_long, t, std::span<const ConditionTriple>(&cond, 1)), ShapeError);
}

TEST(Forward, DeterministicBitwise) {
    const auto c = micro_config();
    StditModel<float> m(c, 32);
    randomize(m.params(), 33, 0.2);
    auto x = fixtures::random_latent<float>(c, 2, 2, 34);
    const std::vector<double> t{0.2, 0.7};
    std::vector<ConditionTriple> conds{fixtures::random_condition(c, 2, 35), fixtures::random_condition(c, 2, 36)};
    EXPECT_EQ(m.forward(x, t, conds).values(), m.forward(x, t, conds).values());
}

TEST(Forward, ConditionIndependentAtInit) {
    const auto c = micro_config();
    StditModel<float> m(c, 37);
    auto x = fixtures::random_latent<float>(c, 1, 2, 38);
    const std::vector<double> t{0.6};
    auto a = fixtures::random_condition(c, 2, 39, "day clear");
    auto b = fixtures::random_condition(c, 2, 40, "night rain busy");
    auto ya = m.forward(x, t, std::span<const ConditionTriple>(&a, 1));
    auto yb = m.forward(x, t, std::span<const ConditionTriple>(&b, 1));
    auto yn = m.forward(x, t, std::vector<ConditionTriple>{ConditionTriple::null()});
    EXPECT_EQ(ya.values(), yb.values());
    EXPECT_EQ(ya.values(), yn.values());
}

TEST(Forward, ConditionsMatterAfterRandomization) {
    const auto c = micro_config();
    StditModel<double> m(c, 41);
    randomize(m.params(), 42, 0.3);
    auto x = fixtures::random_latent<double>(c, 1, 2, 43);
    const std::vector<double> t{0.6};
    auto a = fixtures::random_condition(c, 2, 44);
    std::vector<ConditionTriple> variants{a, a.without_caption(), a.without_layout(), a.without_sketch()};
    auto base = m.forward(x, t, std::span<const ConditionTriple>(&variants[0], 1));
    for (std::size_t i = 1; i < variants.size(); ++i) {
        auto y = m.forward(x, t, std::span<const ConditionTriple>(&variants[i], 1));
        EXPECT_GT(max_abs_diff(base, y), 1e-8) << i;
    }
}

TEST(Forward, FullModelViewPermutationEquivariance) {
    const auto c = three_view_config();
    StditModel<double> m(c, 45);
    randomize(m.params(), 46, 0.3);
    const std::vector<std::int64_t> sigma{1, 2, 0};
    auto x = fixtures::random_latent<double>(c, 1, 2, 47);
    auto cond = fixtures::random_condition(c, 2, 48);
    const std::vector<double> t{0.3};
    auto out = m.forward(x, t, std::span<const ConditionTriple>(&cond, 1));

    StditModel<double> permuted(c, m.params().cast<double>());
    auto view = m.params().get("embed.view");
    permuted.params().assign("embed.view", permute_views(ad::reshape(view, {1, c.views, c.hidden}), sigma).values());
    auto pcond = permute_condition(cond, sigma);
    auto out_perm = permuted.forward(permute_views(x, sigma), t, std::span<const ConditionTriple>(&pcond, 1));
    EXPECT_LT(max_abs_diff(out_perm, permute_views(out, sigma)), 1e-10);
}

TEST(Forward, NumericErrorsNameTheBlock) {
    const auto c = micro_config();
    StditModel<float> m(c, 49);
    randomize(m.params(), 50, 0.2);
    auto bias = m.params().get("blocks.1.mlp.fc1.bias");
    bias.mutable_data()[3] = std::numeric_limits<float>::quiet_NaN();
    auto x = fixtures::random_latent<float>(c, 1, 2, 51);
    const std::vector<double> t{0.5};
    try {
        m.forward(x, t, std::vector<ConditionTriple>{ConditionTriple::null()});
        FAIL() << "expected NumericError";
    } catch (const NumericError& e) {
        EXPECT_NE(std::string(e.what()).find("block 1"), std::string::npos) << e.what();
    }
}

TEST(Unpatchify, ShapeRoundTrip) {
    std::vector<ModelConfig> configs(3, micro_config());
    configs[1].patch = 1;
    configs[2].patch_t = 2;
    for (std::size_t i = 0; i < configs.size(); ++i) {
        StditModel<float> m(configs[i], i);
        auto z = fixtures::random_latent<float>(configs[i], 2, 2, i);
        EXPECT_EQ(m.unpatchify(m.patchify(z)).shape(), z.shape());
    }
}

TEST(Unpatchify, IdentityProjectionsRoundTripExactly) {
    auto c = micro_config();
    c.patch = 1;
    StditModel<float> m(c, 52);
    const auto ch = c.latent_channels();
    std::vector<float> in(static_cast<std::size_t>(ch * c.hidden), 0.f), out(in.size(), 0.f);
    for (std::int64_t i = 0; i < ch; ++i) {
        in[static_cast<std::size_t>(i * c.hidden + i)] = 1.f;
        out[static_cast<std::size_t>(i * ch + i)] = 1.f;
    }
    m.params().assign("embed.patch.weight", in);
    m.params().assign("final.linear.weight", out);
    for (const auto* name : {"embed.pos_spatial", "embed.pos_temporal", "embed.view"}) {
        m.params().assign(name, std::vector<float>(m.params().get(name).values().size(), 0.f));
    }
    auto z = fixtures::random_latent<float>(c, 2, 2, 53);
    EXPECT_EQ(m.unpatchify(m.patchify(z)).values(), z.values());
}

TEST(Unpatchify, OrthogonalPairedProjectionsRoundTrip) {
    auto c = micro_config();
    c.patch_t = 2;
    c.hidden = c.patch_dim();  // square projection
    c.heads = 4;
    StditModel<double> m(c, 54);
    const auto p = c.patch_dim();
    // Householder reflection: symmetric and orthogonal.
    std::mt19937_64 rng(55);
    auto u = TensorD::randn({p}, rng);
    double norm = 0;
    for (auto v : u.values()) norm += v * v;
    std::vector<double> q(static_cast<std::size_t>(p * p));
    for (std::int64_t i = 0; i < p; ++i) {
        for (std::int64_t j = 0; j < p; ++j) q[i * p + j] = (i == j ? 1.0 : 0.0) - 2.0 * u[i] * u[j] / norm;
    }
    m.params().assign("embed.patch.weight", q);
    m.params().assign("final.linear.weight", q);
    for (const auto* name : {"embed.pos_spatial", "embed.pos_temporal", "embed.view"}) {
        m.params().assign(name, std::vector<double>(m.params().get(name).values().size(), 0.0));
    }
    auto z = fixtures::random_latent<double>(c, 1, 2, 56);
    EXPECT_LT(max_abs_diff(m.unpatchify(m.patchify(z)), z), 1e-5);
}

TEST(Unpatchify, EachVoxelOwnedByOneToken) {
    auto c = micro_config();
    c.patch_t = 2;
    StditModel<double> m(c, 57);
    auto grid = random_grid<double>({1, c.views, 1, 2, 2, c.hidden}, 58);
    auto base = m.unpatchify(grid);
    const auto tokens = grid.numel() / c.hidden;
    std::vector<int> owners(static_cast<std::size_t>(base.numel()), 0);
    for (std::int64_t tok = 0; tok < tokens; ++tok) {
        auto values = grid.values();
        for (std::int64_t d = 0; d < c.hidden; ++d) values[tok * c.hidden + d] += 1.0;
        auto changed = m.unpatchify(TensorD::from(grid.shape(), values));
        // token (v, 0, gy, gx) owns t in [0, 2), all channels, y in [2gy, 2gy+2), x in [2gx, 2gx+2)
        const auto v = tok / 4, gy = (tok / 2) % 2, gx = tok % 2;
        for (std::int64_t i = 0; i < base.numel(); ++i) {
            const bool diff = changed[i] != base[i];
            const auto x = i % 4, y = (i / 4) % 4, vi = i / (2 * 12 * 16);
            const bool inside = vi == v && y / 2 == gy && x / 2 == gx;
            if (diff) ++owners[static_cast<std::size_t>(i)];
            EXPECT_FALSE(diff && !inside) << tok << " " << i;
        }
    }
    for (int o : owners) EXPECT_EQ(o, 1);
}

TEST(ControlBranch, DuplicatedBlocksMatchTrunkChecksums) {
    StditModel<float> m(ModelConfig{}, 7);
    std::size_t compared = 0;
    for (const auto& e : m.params().entries()) {
        if (e.name.rfind("control.blocks.", 0) != 0) continue;
        const auto rest = e.name.substr(std::string("control.").size());
        EXPECT_EQ(m.params().checksum(e.name), m.params().checksum(rest)) << e.name;
        ++compared;
    }
    EXPECT_EQ(compared, 4u * 13u);
}

TEST(ControlBranch, InitIsNoOpForAnySketch) {
    const auto c = micro_config();
    StditModel<float> m(c, 59);
    randomize(m.params(), 60, 0.2);
    for (std::int64_t i = 0; i < c.control_depth; ++i) {
        const auto name = "control.connector." + std::to_string(i);
        for (const auto* part : {".weight", ".bias"}) {
            const auto n = m.params().get(name + part).numel();
            m.params().assign(name + part, std::vector<float>(static_cast<std::size_t>(n), 0.f));
        }
    }
    auto x = fixtures::random_latent<float>(c, 1, 2, 61);
    const std::vector<double> t{0.5};
    auto a = fixtures::random_condition(c, 2, 62);
    auto b = fixtures::random_condition(c, 2, 63);
    auto b_same = conditioning::ConditionTriple{a.caption, a.layout, b.sketch};
    ForwardTrace<float> trace;
    auto ya = m.forward(x, t, std::span<const ConditionTriple>(&a, 1), &trace);
    auto yb = m.forward(x, t, std::span<const ConditionTriple>(&b_same, 1));
    auto yn = m.forward(x, t, std::vector<ConditionTriple>{a.without_sketch()});
    EXPECT_EQ(ya.values(), yb.values());
    EXPECT_EQ(ya.values(), yn.values());
    ASSERT_EQ(trace.residuals.size(), 1u);
    for (float v : trace.residuals[0].values()) EXPECT_EQ(v, 0.f);
}

TEST(ControlBranch, ZeroDepthLeavesTrunkUntouched) {
    auto c = micro_config();
    c.control_depth = 0;
    StditModel<float> m(c, 64);
    EXPECT_FALSE(m.params().contains("control.sketch.weight"));
    ForwardTrace<float> trace;
    auto x = fixtures::random_latent<float>(c, 1, 2, 65);
    auto cond = fixtures::random_condition(c, 2, 66);
    m.forward(x, std::vector<double>{0.5}, std::span<const ConditionTriple>(&cond, 1), &trace);
    EXPECT_TRUE(trace.residuals.empty());
    EXPECT_TRUE(m.control_forward({}, TensorF(), TensorF()).empty());
}

TEST(ControlBranch, ActivationCountMustMatchDepth) {
    const auto c = micro_config();
    StditModel<float> m(c, 67);
    EXPECT_THROW(m.control_forward({}, TensorF(), TensorF()), std::invalid_argument);
}

TEST(ControlBranch, ResidualDependsOnEarlierActivationsOnly) {
    auto c = micro_config();
    c.blocks = 3;
    c.control_depth = 3;
    StditModel<double> m(c, 68);
    randomize(m.params(), 69, 0.3);
    auto cond = fixtures::random_condition(c, 2, 70);
    const std::vector<const conditioning::RoadSketch*> sketches{cond.sketch.get()};
    auto sketch = m.embed_sketch(sketches, 2);
    auto temb = m.timestep_conditioning(std::vector<double>{0.5});
    std::vector<TensorD> acts;
    for (int i = 0; i < 3; ++i) acts.push_back(random_grid<double>(sketch.shape(), 71 + i));
    const auto base = m.control_forward(acts, sketch, temb);
    for (std::size_t j = 0; j < 3; ++j) {
        auto perturbed = acts;
        perturbed[j] = random_grid<double>(sketch.shape(), 90 + j);
        const auto res = m.control_forward(perturbed, sketch, temb);
        for (std::size_t i = 0; i < 3; ++i) {
            if (i < j) {
                EXPECT_EQ(res[i].values(), base[i].values()) << i << " " << j;
            } else {
                EXPECT_GT(max_abs_diff(res[i], base[i]), 1e-8) << i << " " << j;
            }
        }
    }
}

TEST(ControlBranch, OneStepMakesSketchMatter) {
    const auto c = micro_config();
    StditModel<float> m(c, 72);
    auto x = fixtures::random_latent<float>(c, 1, 2, 73);
    auto target = fixtures::random_latent<float>(c, 1, 2, 74);
    auto cond = fixtures::random_condition(c, 2, 75);
    const std::vector<double> t{0.5};
    auto loss = ad::sum_sq(ad::sub(m.forward(x, t, std::span<const ConditionTriple>(&cond, 1)), target));
    auto grads = ad::backward(loss);
    for (const auto& e : m.params().entries()) {
        auto g = grads.of(e.tensor);
        auto p = e.tensor;
        auto data = p.mutable_data();
        for (std::size_t i = 0; i < data.size(); ++i) data[i] -= 1e-3f * g[static_cast<std::int64_t>(i)];
    }
    bool nonzero = false;
    for (float v : m.params().get("control.connector.0.weight").values()) nonzero = nonzero || v != 0.f;
    EXPECT_TRUE(nonzero);
    auto other = conditioning::ConditionTriple{cond.caption, cond.layout, fixtures::random_condition(c, 2, 76).sketch};
    ad::NoGradGuard guard;
    auto ya = m.forward(x, t, std::span<const ConditionTriple>(&cond, 1));
    auto yb = m.forward(x, t, std::span<const ConditionTriple>(&other, 1));
    EXPECT_GT(max_abs_diff(ya, yb), 0.0);
}

TEST(ControlBranch, EmptySketchTokensAreBias) {
    const auto c = micro_config();
    StditModel<float> m(c, 77);
    randomize(m.params(), 78, 0.3);
    const std::vector<const conditioning::RoadSketch*> none{nullptr};
    auto tokens = m.embed_sketch(none, 2);
    EXPECT_EQ(tokens.shape(), (Shape{1, c.views, 2, 2, 2, c.hidden}));
    const auto& bias = m.params().get("control.sketch.bias");
    for (std::int64_t i = 0; i < tokens.numel(); ++i) EXPECT_EQ(tokens[i], bias[i % c.hidden]);
}

TEST(ControlBranch, SketchPixelChangesOnlyOwningPatch) {
    const auto c = micro_config();
    StditModel<float> m(c, 79);
    auto s = conditioning::RoadSketch::zeros(c.views, 2, c.height, c.width);
    auto s2 = s;
    s2.at(1, 1, 5, 2) = 1;  // latent (2, 1) -> patch (1, 0)
    std::vector<const conditioning::RoadSketch*> a{&s}, b{&s2};
    auto ta = m.embed_sketch(a, 2);
    auto tb = m.embed_sketch(b, 2);
    const auto owner = ((1 * 2 + 1) * 2 + 1) * 2 + 0;
    for (std::int64_t tok = 0; tok < ta.numel() / c.hidden; ++tok) {
        bool diff = false;
        for (std::int64_t d = 0; d < c.hidden; ++d) diff = diff || ta[tok * c.hidden + d] != tb[tok * c.hidden + d];
        EXPECT_EQ(diff, tok == owner) << tok;
    }
}

TEST(ControlBranch, SketchShapeMismatchRejected) {
    const auto c = micro_config();
    StditModel<float> m(c, 80);
    auto s = conditioning::RoadSketch::zeros(c.views, 3, c.height, c.width);
    std::vector<const conditioning::RoadSketch*> a{&s};
    EXPECT_THROW(m.embed_sketch(a, 2), ShapeError);
}

TEST(ModelGradCheck, MicroConfigFullModel) {
    const auto c = micro_config();
    StditModel<double> m(c, 81);
    randomize(m.params(), 82, 0.1);
    auto x = fixtures::random_latent<double>(c, 1, 2, 83);
    auto target = fixtures::random_latent<double>(c, 1, 2, 84);
    auto cond = fixtures::random_condition(c, 2, 85);
    const std::vector<double> t{0.37};
    auto f = [&] {
        auto diff = ad::sub(m.forward(x, t, std::span<const ConditionTriple>(&cond, 1)), target);
        return ad::scale(ad::sum_sq(diff), 1.0 / static_cast<double>(diff.numel()));
    };
    std::vector<std::pair<std::string, TensorD>> leaves;
    for (const auto& e : m.params().entries()) leaves.emplace_back(e.name, e.tensor);
    const auto report = ad::grad_check_leaves(f, leaves, ad::kNetworkCheck);
    double worst = 0;
    for (const auto& r : report) {
        EXPECT_LT(r.max_error, 1e-4) << r.name << "[" << r.worst_index << "] analytic " << r.worst_analytic
                                      << " numeric " << r.worst_numeric;
        worst = std::max(worst, r.max_error);
    }
    RecordProperty("max_relative_error", std::to_string(worst));
}

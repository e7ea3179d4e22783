// Copyright (c) 2026 The mvdit Authors
// SPDX-License-Identifier: Apache-2.0

#include <gtest/gtest.h>

#include <cmath>
#include <limits>
#include <random>

#include "mvdit/tensor/grad_check.hpp"
#include "mvdit/tensor/ops.hpp"

using namespace mvdit;
using namespace mvdit::ad;

namespace {

TensorD leaf(Shape shape, std::mt19937_64& rng, double stddev = 1.0) {
    return TensorD::randn(std::move(shape), rng, stddev, true);
}

}  // namespace

TEST(TensorOps, SoftmaxOfEqualLogitsIsUniform) {
    auto y = softmax_lastdim(TensorF::from({2}, {0.f, 0.f}));
    EXPECT_FLOAT_EQ(y[0], 0.5f);
    EXPECT_FLOAT_EQ(y[1], 0.5f);
}

TEST(TensorOps, IdentityMatmul) {
    std::mt19937_64 rng(1);
    auto a = TensorF::randn({3, 3}, rng);
    auto eye = TensorF::from({3, 3}, {1, 0, 0, 0, 1, 0, 0, 0, 1});
    auto y = matmul(eye, a);
    for (int i = 0; i < 9; ++i) EXPECT_EQ(y[i], a[i]);
}

TEST(TensorOps, LayerNormHandValue) {
    auto y = layer_norm(TensorD::from({2}, {1.0, 3.0}));
    // (x - 2) / sqrt(1 + eps)
    EXPECT_NEAR(y[0], -1.0, 1e-6);
    EXPECT_NEAR(y[1], 1.0, 1e-6);
}

TEST(TensorOps, SoftmaxRowsSumToOne) {
    std::mt19937_64 rng(7);
    auto y = softmax_lastdim(TensorF::randn({5, 13}, rng, 4.f));
    for (int r = 0; r < 5; ++r) {
        double s = 0;
        for (int j = 0; j < 13; ++j) s += y[r * 13 + j];
        EXPECT_NEAR(s, 1.0, 1e-6);
    }
}

TEST(TensorOps, LayerNormMoments) {
    std::mt19937_64 rng(8);
    auto y = layer_norm(TensorF::randn({6, 32}, rng, 3.f));
    for (int r = 0; r < 6; ++r) {
        double mu = 0, var = 0;
        for (int j = 0; j < 32; ++j) mu += y[r * 32 + j];
        mu /= 32;
        for (int j = 0; j < 32; ++j) var += (y[r * 32 + j] - mu) * (y[r * 32 + j] - mu);
        var /= 32;
        EXPECT_LT(std::abs(mu), 1e-5);
        EXPECT_NEAR(var, 1.0, 1e-4);
    }
}

TEST(TensorOps, ReshapeAndPermuteRoundTripsAreExact) {
    std::mt19937_64 rng(3);
    for (int trial = 0; trial < 10; ++trial) {
        std::uniform_int_distribution<int> extent(1, 4);
        Shape s{extent(rng), extent(rng), extent(rng), extent(rng)};
        auto x = TensorF::randn(s, rng);
        auto back = reshape(reshape(x, {numel(s)}), s);
        EXPECT_EQ(back.values(), x.values());
        std::vector<std::size_t> perm{0, 1, 2, 3};
        std::shuffle(perm.begin(), perm.end(), rng);
        std::vector<std::size_t> inv(4);
        for (std::size_t i = 0; i < 4; ++i) inv[perm[i]] = i;
        auto p = permute(permute(x, perm), inv);
        EXPECT_EQ(p.shape(), s);
        EXPECT_EQ(p.values(), x.values());
    }
}

TEST(TensorOps, ShapeErrorNamesPrimitive) {
    auto a = TensorF::zeros({2, 3});
    auto b = TensorF::zeros({4, 2});
    try {
        matmul(a, b);
        FAIL() << "expected ShapeError";
    } catch (const ShapeError& e) {
        EXPECT_EQ(e.primitive(), "matmul");
        EXPECT_NE(std::string(e.what()).find("[2, 3]"), std::string::npos);
    }
    EXPECT_THROW(add(a, TensorF::zeros({3, 2})), ShapeError);
}

TEST(TensorOps, NonFiniteOutputIsNumericError) {
    auto big = TensorF::from({1}, {3e38f});
    EXPECT_THROW(scale(big, 10.f), NumericError);
    EXPECT_THROW(TensorF::from({1}, {std::numeric_limits<float>::quiet_NaN()}), NumericError);
    // Every key masked leaves softmax undefined.
    auto q = TensorF::zeros({1, 1, 2});
    std::vector<float> mask(2, -std::numeric_limits<float>::infinity());
    EXPECT_THROW(scaled_dot_attention(q, q.detach(), q.detach(), AttentionOptions{}, mask),
                 ShapeError);
    auto kv = TensorF::zeros({1, 2, 2});
    EXPECT_THROW(scaled_dot_attention(q, kv, kv, AttentionOptions{}, mask), NumericError);
}

TEST(Autodiff, SumSquaresGradient) {
    auto w = TensorF::from({1}, {3.f}, true);
    auto grads = backward(sum_sq(w));
    EXPECT_FLOAT_EQ(grads.of(w)[0], 6.f);
}

TEST(Autodiff, LinearLossGradientIndependentOfWeights) {
    std::mt19937_64 rng(11);
    auto x = TensorD::randn({4, 3}, rng);
    auto w1 = leaf({2, 4}, rng);
    auto w2 = leaf({2, 4}, rng);
    auto g1 = backward(mean(matmul(w1, x))).of(w1);
    auto g2 = backward(mean(matmul(w2, x))).of(w2);
    for (int i = 0; i < 8; ++i) EXPECT_NEAR(g1[i], g2[i], 1e-15);
}

TEST(Autodiff, UnusedLeafGradientIsExactlyZero) {
    auto used = TensorF::from({2}, {1.f, 2.f}, true);
    auto unused = TensorF::from({2}, {5.f, 5.f}, true);
    auto grads = backward(sum_sq(used));
    auto g = grads.of(unused);
    EXPECT_EQ(g[0], 0.f);
    EXPECT_EQ(g[1], 0.f);
    EXPECT_FALSE(grads.contains(unused));
}

TEST(Autodiff, DiamondGraphVisitsEachNodeOnce) {
    auto x = TensorD::from({1}, {1.5}, true);
    auto y = mul(x, x);
    auto z = add(y, x);
    auto loss = sum_sq(z);
    auto grads = backward(loss);
    EXPECT_EQ(grads.nodes_visited(), 4u);  // x, y, z, loss
    // d/dx (x^2 + x)^2 = 2 (x^2 + x)(2x + 1)
    EXPECT_NEAR(grads.of(x)[0], 2 * (1.5 * 1.5 + 1.5) * 4.0, 1e-12);
}

TEST(Autodiff, BackwardRejectsNonScalarAndConstantLoss) {
    auto x = TensorF::from({2}, {1.f, 2.f}, true);
    EXPECT_THROW(backward(scale(x, 2.f)), ShapeError);
    EXPECT_THROW(backward(sum_sq(TensorF::from({2}, {1.f, 2.f}))), std::invalid_argument);
    auto not_leaf = scale(x, 2.f);
    auto grads = backward(sum_sq(x));
    EXPECT_THROW(grads.of(not_leaf), std::invalid_argument);
}

TEST(Autodiff, NoGradGuardSkipsRecording) {
    auto x = TensorF::from({1}, {2.f}, true);
    NoGradGuard guard;
    auto y = scale(x, 3.f);
    EXPECT_FALSE(y.requires_grad());
}

TEST(GradCheck, SquareIsTight) {
    auto x = TensorD::from({1}, {2.0}, true);
    EXPECT_LT(grad_check([](const TensorD& p) { return sum_sq(p); }, x, 1e-5), 1e-6);
}

TEST(GradCheck, AbsAtKinkIsFlagged) {
    auto x = TensorD::from({1}, {0.0}, true);
    EXPECT_GT(grad_check([](const TensorD& p) { return mean(abs(p)); }, x, 1e-5), 1e-4);
}

TEST(GradCheck, ExtrapolationRemovesTruncationError) {
    auto x = TensorD::from({2}, {1.5, -0.7}, true);
    auto cube = [&] { return mean(mul(x, mul(x, x))); };
    const auto plain = grad_check_leaves(cube, {{"x", x}}, {.step = 0.1});
    const auto one = grad_check_leaves(cube, {{"x", x}}, {.step = 0.1, .extrapolate = 1});
    EXPECT_GT(plain.front().max_error, 1e-3);
    EXPECT_LT(one.front().max_error, 1e-12);
    EXPECT_EQ(x.data()[0], 1.5);
}

TEST(GradCheck, CorruptedAnalyticGradientFails) {
    auto x = TensorD::from({3}, {0.3, -1.2, 2.0}, true);
    auto f = [&] { return sum_sq(x); };
    EXPECT_LT(grad_check_leaves(f, {{"x", x}}).front().max_error, 1e-6);
    EXPECT_GT(grad_check_leaves(f, {{"x", x}}, {.corrupt_analytic = 1.01}).front().max_error, 1e-3);
}

TEST(GradCheck, ThreeLayerMlp) {
    std::mt19937_64 rng(5);
    auto x = TensorD::randn({4, 6}, rng);
    auto w1 = leaf({6, 8}, rng, 0.5), b1 = leaf({8}, rng, 0.1);
    auto w2 = leaf({8, 8}, rng, 0.5), b2 = leaf({8}, rng, 0.1);
    auto w3 = leaf({8, 2}, rng, 0.5), b3 = leaf({2}, rng, 0.1);
    auto f = [&] { return sum_sq(linear(gelu(linear(gelu(linear(x, w1, b1)), w2, b2)), w3, b3)); };
    auto report = grad_check_leaves(f, {{"w1", w1}, {"b1", b1}, {"w2", w2}, {"b2", b2}, {"w3", w3}, {"b3", b3}});
    for (const auto& r : report) EXPECT_LT(r.max_error, 1e-4) << r.name;
}

// Every differentiable primitive, three random points each.
TEST(GradCheck, EveryPrimitiveAtRandomPoints) {
    for (std::uint64_t seed = 0; seed < 3; ++seed) {
        std::mt19937_64 rng(100 + seed);
        auto a = leaf({2, 3, 4}, rng);
        auto b = leaf({2, 3, 4}, rng);
        auto m = leaf({4, 5}, rng);
        auto bm = leaf({2, 4, 3}, rng);
        auto rows = leaf({2, 4}, rng);
        auto rows2 = leaf({2, 4}, rng);
        auto bias = leaf({5}, rng);
        auto table = leaf({3, 4}, rng);
        auto weights = TensorD::randn({2, 3, 4}, rng);
        auto w = [&](const TensorD& t) { return sum_sq(t); };
        auto weighted = [&](const TensorD& t) { return mean(mul(t, weights)); };
        std::vector<std::pair<const char*, ScalarFn>> cases{
            {"matmul", [&] { return w(matmul(a, m)); }},
            {"matmul_batched", [&] { return w(matmul(a, bm)); }},
            {"add", [&] { return w(add(a, b)); }},
            {"sub", [&] { return w(sub(a, b)); }},
            {"mul", [&] { return w(mul(a, b)); }},
            {"scale", [&] { return w(scale(a, 0.7)); }},
            {"gelu", [&] { return w(gelu(a)); }},
            {"add_rows", [&] { return w(add_rows(a, rows)); }},
            {"mul_rows", [&] { return w(mul_rows(a, rows)); }},
            {"modulate", [&] { return w(modulate(a, rows, rows2)); }},
            {"add_gated", [&] { return w(add_gated(a, b, rows)); }},
            {"add_axis_embedding", [&] { return w(add_axis_embedding(a, table, 1)); }},
            {"reshape", [&] { return weighted(reshape(reshape(a, {6, 4}), {2, 3, 4})); }},
            {"permute", [&] { return w(mul(permute(a, {2, 0, 1}), permute(b, {2, 0, 1}))); }},
            {"concat", [&] { return w(concat<double>({a, scale(b, 2.0)}, 1)); }},
            {"split", [&] {
                 auto parts = split(a, 2, {1, 3});
                 return add(w(parts[0]), mean(parts[1]));
             }},
            {"tile_leading", [&] { return w(mul(tile_leading(table, 2), tile_leading(table, 2))); }},
            {"gather_rows", [&] { return w(gather_rows(table, {2, 0, 2})); }},
            {"softmax", [&] { return weighted(softmax_lastdim(a)); }},
            {"layer_norm", [&] { return weighted(layer_norm(a)); }},
            {"linear", [&] { return w(linear(a, m, bias)); }},
            {"attention", [&] {
                 AttentionOptions opt;
                 opt.heads = 2;
                 return w(scaled_dot_attention(a, b, mul(a, b), opt));
             }},
            {"attention_masked", [&] {
                 std::vector<double> mask{0.0, -std::numeric_limits<double>::infinity(), 0.0, 0.0, 0.0, 0.0};
                 return w(scaled_dot_attention(a, b, b, AttentionOptions{}, mask));
             }},
            {"mean", [&] { return mean(mul(a, a)); }},
        };
        std::vector<std::pair<std::string, TensorD>> leaves{{"a", a}, {"b", b}, {"m", m}, {"bm", bm},
                                                            {"rows", rows}, {"rows2", rows2}, {"bias", bias},
                                                            {"table", table}};
        for (const auto& [name, fn] : cases) {
            for (const auto& r : grad_check_leaves(fn, leaves)) {
                EXPECT_LT(r.max_error, 1e-4) << name << " leaf " << r.name << " seed " << seed;
            }
        }
    }
}

TEST(TensorOps, AttentionWithZeroLogitsAveragesValues) {
    std::mt19937_64 rng(4);
    auto q = TensorF::randn({1, 3, 4}, rng);
    auto k = TensorF::randn({1, 5, 4}, rng);
    auto v = TensorF::randn({1, 5, 4}, rng);
    AttentionOptions opt;
    opt.heads = 2;
    opt.logit_scale = 0.0;
    auto y = scaled_dot_attention(q, k, v, opt);
    for (int i = 0; i < 3; ++i) {
        for (int d = 0; d < 4; ++d) {
            double avg = 0;
            for (int j = 0; j < 5; ++j) avg += v[j * 4 + d];
            EXPECT_NEAR(y[i * 4 + d], avg / 5, 1e-6);
        }
    }
}

TEST(TensorOps, DeterministicAcrossRuns) {
    auto run = [] {
        std::mt19937_64 rng(99);
        auto x = TensorF::randn({8, 16}, rng);
        auto w = TensorF::randn({16, 16}, rng);
        AttentionOptions opt;
        opt.heads = 4;
        auto h = linear(x, w, TensorF());
        return scaled_dot_attention(reshape(h, {1, 8, 16}), reshape(h, {1, 8, 16}), reshape(x, {1, 8, 16}), opt).values();
    };
    EXPECT_EQ(run(), run());
}

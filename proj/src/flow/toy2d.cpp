// Copyright (c) 2026 The mvdit Authors
// SPDX-License-Identifier: Apache-2.0

#include "mvdit/flow/toy2d.hpp"

#include <chrono>
#include <cmath>

#include "mvdit/flow/flow.hpp"
#include "mvdit/tensor/ops.hpp"
#include "mvdit/train/adam.hpp"
#include "mvdit/util/rng.hpp"

namespace mvdit::flow {

std::vector<Point> TwoGaussians::sample(std::size_t n, std::mt19937_64& rng) const {
    std::normal_distribution<double> normal;
    std::bernoulli_distribution first(first_weight);
    std::vector<Point> out(n);
    for (auto& p : out) {
        const auto& m = modes[first(rng) ? 0 : 1];
        // Cholesky factor of the 2x2 covariance.
        const double l00 = std::sqrt(m.cov[0]);
        const double l10 = m.cov[2] / l00;
        const double l11 = std::sqrt(m.cov[3] - l10 * l10);
        const double z0 = normal(rng), z1 = normal(rng);
        p = {m.mean[0] + l00 * z0, m.mean[1] + l10 * z0 + l11 * z1};
    }
    return out;
}

std::size_t TwoGaussians::nearest_mode(const Point& p) const {
    auto d2 = [&](const Point& q) { return (p[0] - q[0]) * (p[0] - q[0]) + (p[1] - q[1]) * (p[1] - q[1]); };
    return d2(modes[0].mean) <= d2(modes[1].mean) ? 0 : 1;
}

std::array<ModeFit, 2> fit_modes(const TwoGaussians& mixture, const std::vector<Point>& points) {
    std::array<ModeFit, 2> fits{};
    std::array<Point, 2> sum{};
    std::array<std::array<double, 4>, 2> outer{};
    for (const auto& p : points) {
        const auto i = mixture.nearest_mode(p);
        ++fits[i].count;
        sum[i][0] += p[0];
        sum[i][1] += p[1];
    }
    std::array<Point, 2> mean{};
    for (std::size_t i = 0; i < 2; ++i) {
        if (fits[i].count == 0) continue;
        mean[i] = {sum[i][0] / fits[i].count, sum[i][1] / fits[i].count};
    }
    for (const auto& p : points) {
        const auto i = mixture.nearest_mode(p);
        const double a = p[0] - mean[i][0], b = p[1] - mean[i][1];
        outer[i][0] += a * a;
        outer[i][1] += a * b;
        outer[i][2] += a * b;
        outer[i][3] += b * b;
    }
    for (std::size_t i = 0; i < 2; ++i) {
        auto& f = fits[i];
        if (f.count < 2) {
            f.mean_error = f.cov_error = INFINITY;
            continue;
        }
        const auto& truth = mixture.modes[i];
        f.mean_error = std::hypot(mean[i][0] - truth.mean[0], mean[i][1] - truth.mean[1]);
        double frob = 0;
        for (std::size_t j = 0; j < 4; ++j) {
            const double d = outer[i][j] / static_cast<double>(f.count - 1) - truth.cov[j];
            frob += d * d;
        }
        f.cov_error = std::sqrt(frob);
    }
    return fits;
}

namespace {

struct PointMlp {
    TensorF w1, b1, w2, b2, w3, b3;

    PointMlp(std::int64_t hidden, std::uint64_t seed) {
        auto xavier = [&](std::int64_t in, std::int64_t out, std::uint64_t stream) {
            auto rng = make_rng(seed, stream);
            const double limit = std::sqrt(6.0 / static_cast<double>(in + out));
            std::uniform_real_distribution<double> u(-limit, limit);
            std::vector<float> v(static_cast<std::size_t>(in * out));
            for (auto& x : v) x = static_cast<float>(u(rng));
            return TensorF::from({in, out}, std::move(v), true);
        };
        w1 = xavier(3, hidden, 0);
        w2 = xavier(hidden, hidden, 1);
        w3 = xavier(hidden, 2, 2);
        b1 = TensorF::zeros({hidden}, true);
        b2 = TensorF::zeros({hidden}, true);
        b3 = TensorF::zeros({2}, true);
    }

    std::vector<TensorF> params() const { return {w1, b1, w2, b2, w3, b3}; }

    TensorF operator()(const TensorF& x, std::span<const double> t) const {
        std::vector<float> tv(t.begin(), t.end());
        auto tcol = TensorF::from({static_cast<std::int64_t>(t.size()), 1}, std::move(tv));
        auto h = ad::gelu(ad::linear(ad::concat<float>({x, tcol}, 1), w1, b1));
        h = ad::gelu(ad::linear(h, w2, b2));
        return ad::linear(h, w3, b3);
    }
};

TensorF to_tensor(const std::vector<Point>& points) {
    std::vector<float> v;
    v.reserve(points.size() * 2);
    for (const auto& p : points) {
        v.push_back(static_cast<float>(p[0]));
        v.push_back(static_cast<float>(p[1]));
    }
    return TensorF::from({static_cast<std::int64_t>(points.size()), 2}, std::move(v));
}

}  // namespace

PointFlowReport run_two_gaussian_flow(const TwoGaussians& mixture, const PointFlowOptions& options) {
    PointMlp mlp(options.hidden, derive_seed(options.seed, 0));
    VelocityFn<float> velocity = [&mlp](const TensorF& x, std::span<const double> t, std::span<const ConditionTriple>) {
        return mlp(x, t);
    };
    train::Adam<float> adam({.lr = options.lr}, mlp.params());
    auto data_rng = make_rng(options.seed, 1);
    auto flow_rng = make_rng(options.seed, 2);
    PointFlowReport report;
    const auto start = std::chrono::steady_clock::now();
    for (std::int64_t step = 0; step < options.train_steps; ++step) {
        const double progress = static_cast<double>(step) / static_cast<double>(options.train_steps);
        adam.set_learning_rate(options.lr * 0.5 * (1.0 + std::cos(progress * 3.14159265358979323846)));
        FlowBatch<float> batch{to_tensor(mixture.sample(static_cast<std::size_t>(options.batch), data_rng)), {}};
        const auto loss = rf_loss(velocity, batch, flow_rng, {.drop_conditions = false});
        adam.step(ad::backward(loss));
        report.final_loss = loss.item();
        report.steps_run = step + 1;
        report.train_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
        if (report.train_seconds > options.time_budget_s) break;
    }
    ad::NoGradGuard no_grad;
    auto sample_rng = make_rng(options.seed, 3);
    const auto n = static_cast<std::int64_t>(options.samples);
    auto x = TensorF::randn({n, 2}, sample_rng);
    for (std::int64_t i = options.sampler_steps; i >= 1; --i) {
        const std::vector<double> t(static_cast<std::size_t>(n), static_cast<double>(i) / options.sampler_steps);
        x = euler_step(x, velocity(x, t, {}), options.sampler_steps);
    }
    std::vector<Point> points(options.samples);
    for (std::size_t i = 0; i < points.size(); ++i) points[i] = {x.values()[2 * i], x.values()[2 * i + 1]};
    report.modes = fit_modes(mixture, points);
    return report;
}

}  // namespace mvdit::flow

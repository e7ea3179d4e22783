// Copyright (c) 2026 The mvdit Authors
// SPDX-License-Identifier: Apache-2.0
//
// Rectified flow on 2-D points: a small MLP velocity field trained on a
// two-component Gaussian mixture, then used to transport standard normals.

#pragma once

#include <array>
#include <cstdint>
#include <random>
#include <vector>

namespace mvdit::flow {

using Point = std::array<double, 2>;

struct GaussianMode {
    Point mean;
    std::array<double, 4> cov;  // row-major 2x2
};

struct TwoGaussians {
    std::array<GaussianMode, 2> modes{
        GaussianMode{{-2.0, 0.0}, {0.25, 0.10, 0.10, 0.30}},
        GaussianMode{{2.0, 1.0}, {0.40, -0.15, -0.15, 0.20}},
    };
    double first_weight = 0.5;

    std::vector<Point> sample(std::size_t n, std::mt19937_64& rng) const;
    /// Index of the mode with the nearest mean.
    std::size_t nearest_mode(const Point& p) const;
};

struct PointFlowOptions {
    std::uint64_t seed = 0;
    std::int64_t hidden = 128;
    std::int64_t train_steps = 3000;
    std::int64_t batch = 256;
    double lr = 2e-3;  // cosine-decayed to zero over train_steps
    std::int64_t sampler_steps = 50;
    std::size_t samples = 10000;
    double time_budget_s = 60.0;  // training stops early once exceeded
};

struct ModeFit {
    std::size_t count = 0;
    double mean_error = 0;  // Euclidean distance of sample mean to the true mean
    double cov_error = 0;   // Frobenius norm of the covariance difference
};

struct PointFlowReport {
    std::array<ModeFit, 2> modes;
    std::int64_t steps_run = 0;
    double train_seconds = 0;
    double final_loss = 0;
};

/// Sample mean and covariance per nearest mode, compared to the truth.
std::array<ModeFit, 2> fit_modes(const TwoGaussians& mixture, const std::vector<Point>& points);

PointFlowReport run_two_gaussian_flow(const TwoGaussians& mixture, const PointFlowOptions& options);

}  // namespace mvdit::flow

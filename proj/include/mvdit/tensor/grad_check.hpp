// Copyright (c) 2026 The mvdit Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <functional>
#include <string>
#include <vector>

#include "mvdit/tensor/tensor.hpp"

namespace mvdit::ad {

/// Scalar function of the leaves it closes over, re-evaluated per probe.
using ScalarFn = std::function<TensorD()>;

/// Relative error used throughout: |a - n| / (|a| + |n| + 1e-8).
double relative_error(double analytic, double numeric);

/// Compares the analytic gradient of f at `point` with central differences
/// of width `step`, coordinate by coordinate, and returns the worst relative
/// error. `point` must be a differentiable leaf that f reads; it is perturbed
/// in place and restored.
double grad_check(const std::function<TensorD(const TensorD&)>& f, TensorD point, double step = 1e-5);

struct LeafCheck {
    std::string name;
    double max_error = 0.0;
    std::size_t coordinates = 0;
    // Coordinate attaining max_error.
    std::size_t worst_index = 0;
    double worst_analytic = 0.0;
    double worst_numeric = 0.0;
};

struct GradCheckOptions {
    double step = 1e-5;
    // Richardson levels over central differences at h, h/2, ...; 0 is a plain
    // central difference, each level removes the next even power of h.
    int extrapolate = 0;
    // Test hook: scales every analytic gradient to prove the check can fail.
    double corrupt_analytic = 1.0;
};

/// Wide step plus two extrapolation levels; used for whole-network checks.
inline constexpr GradCheckOptions kNetworkCheck{.step = 0.05, .extrapolate = 2};

/// Same comparison over several named leaves of one function; reports the
/// worst error per leaf.
std::vector<LeafCheck> grad_check_leaves(const ScalarFn& f, const std::vector<std::pair<std::string, TensorD>>& leaves,
                                         const GradCheckOptions& options = {});

}  // namespace mvdit::ad

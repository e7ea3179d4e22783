// Copyright (c) 2026 The mvdit Authors
// SPDX-License-Identifier: Apache-2.0

#include "mvdit/tensor/grad_check.hpp"

#include <algorithm>
#include <cmath>

namespace mvdit::ad {

double relative_error(double analytic, double numeric) {
    return std::abs(analytic - numeric) / (std::abs(analytic) + std::abs(numeric) + 1e-8);
}

double grad_check(const std::function<TensorD(const TensorD&)>& f, TensorD point, double step) {
    auto checks = grad_check_leaves([&] { return f(point); }, {{"point", point}}, {.step = step});
    return checks.front().max_error;
}

std::vector<LeafCheck> grad_check_leaves(const ScalarFn& f, const std::vector<std::pair<std::string, TensorD>>& leaves,
                                         const GradCheckOptions& options) {
    const auto grads = backward(f());
    std::vector<LeafCheck> report;
    for (auto [name, leaf] : leaves) {
        const auto analytic = grads.of(leaf);
        auto values = leaf.mutable_data();
        LeafCheck check{name, 0.0, values.size(), 0, 0.0, 0.0};
        NoGradGuard no_grad;
        for (std::size_t i = 0; i < values.size(); ++i) {
            const double original = values[i];
            auto central = [&](double h) {
                values[i] = original + h;
                const double up = f().item();
                values[i] = original - h;
                const double down = f().item();
                values[i] = original;
                return (up - down) / (2.0 * h);
            };
            std::vector<double> table;
            double h = options.step;
            for (int level = 0; level <= options.extrapolate; ++level, h /= 2.0) table.push_back(central(h));
            for (int level = 1; level <= options.extrapolate; ++level) {
                const double factor = std::pow(4.0, level);
                for (std::size_t j = table.size() - 1; j >= static_cast<std::size_t>(level); --j) {
                    table[j] = (factor * table[j] - table[j - 1]) / (factor - 1.0);
                }
            }
            const double numeric = table.back();
            const double a = options.corrupt_analytic * analytic[static_cast<std::int64_t>(i)];
            const double error = relative_error(a, numeric);
            if (error > check.max_error) {
                check = {check.name, error, check.coordinates, i, a, numeric};
            }
        }
        report.push_back(check);
    }
    return report;
}

}  // namespace mvdit::ad

// Copyright (c) 2026 The mvdit Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "mvdit/tensor/tensor.hpp"

namespace mvdit::train {

struct AdamConfig {
    double lr = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
};

/// Adam with bias correction over a fixed list of leaves, updated in place.
template <typename T>
class Adam {
  public:
    Adam(AdamConfig config, std::vector<Tensor<T>> params);

    /// grads[i] matches params[i] element for element.
    void step(std::span<const std::vector<T>> grads);
    void step(const ad::Gradients<T>& grads);

    /// Flat gradients of every parameter (zeros for unreached leaves).
    std::vector<std::vector<T>> collect(const ad::Gradients<T>& grads) const;

    const AdamConfig& config() const { return config_; }
    void set_learning_rate(double lr) { config_.lr = lr; }
    std::int64_t steps() const { return steps_; }
    const std::vector<std::vector<T>>& first_moment() const { return m_; }
    const std::vector<std::vector<T>>& second_moment() const { return v_; }
    /// Restores saved moments; sizes must match the parameters.
    void restore(std::int64_t steps, std::vector<std::vector<T>> m, std::vector<std::vector<T>> v);

  private:
    AdamConfig config_;
    std::vector<Tensor<T>> params_;
    std::vector<std::vector<T>> m_, v_;
    std::int64_t steps_ = 0;
};

extern template class Adam<float>;
extern template class Adam<double>;

}  // namespace mvdit::train

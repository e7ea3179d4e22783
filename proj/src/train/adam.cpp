// Copyright (c) 2026 The mvdit Authors
// SPDX-License-Identifier: Apache-2.0

#include "mvdit/train/adam.hpp"

#include <cmath>
#include <stdexcept>

namespace mvdit::train {

template <typename T>
Adam<T>::Adam(AdamConfig config, std::vector<Tensor<T>> params) : config_(config), params_(std::move(params)) {
    for (const auto& p : params_) {
        m_.emplace_back(static_cast<std::size_t>(p.numel()), T(0));
        v_.emplace_back(static_cast<std::size_t>(p.numel()), T(0));
    }
}

template <typename T>
std::vector<std::vector<T>> Adam<T>::collect(const ad::Gradients<T>& grads) const {
    std::vector<std::vector<T>> out;
    out.reserve(params_.size());
    for (const auto& p : params_) {
        const auto g = grads.of(p);
        out.emplace_back(g.values());
    }
    return out;
}

template <typename T>
void Adam<T>::step(const ad::Gradients<T>& grads) {
    step(collect(grads));
}

template <typename T>
void Adam<T>::step(std::span<const std::vector<T>> grads) {
    if (grads.size() != params_.size()) throw std::invalid_argument("adam: gradient count mismatch");
    ++steps_;
    const double c1 = 1.0 - std::pow(config_.beta1, static_cast<double>(steps_));
    const double c2 = 1.0 - std::pow(config_.beta2, static_cast<double>(steps_));
    const auto b1 = static_cast<T>(config_.beta1), b2 = static_cast<T>(config_.beta2);
    const auto lr = static_cast<T>(config_.lr / c1);
    const auto inv_c2 = static_cast<T>(1.0 / c2);
    const auto eps = static_cast<T>(config_.eps);
    for (std::size_t i = 0; i < params_.size(); ++i) {
        auto values = params_[i].mutable_data();
        const auto& g = grads[i];
        if (g.size() != values.size()) throw std::invalid_argument("adam: gradient size mismatch");
        auto& m = m_[i];
        auto& v = v_[i];
        for (std::size_t j = 0; j < values.size(); ++j) {
            m[j] = b1 * m[j] + (T(1) - b1) * g[j];
            v[j] = b2 * v[j] + (T(1) - b2) * g[j] * g[j];
            values[j] -= lr * m[j] / (std::sqrt(v[j] * inv_c2) + eps);
        }
    }
}

template <typename T>
void Adam<T>::restore(std::int64_t steps, std::vector<std::vector<T>> m, std::vector<std::vector<T>> v) {
    if (m.size() != params_.size() || v.size() != params_.size()) {
        throw std::invalid_argument("adam: moment count mismatch");
    }
    for (std::size_t i = 0; i < params_.size(); ++i) {
        const auto n = static_cast<std::size_t>(params_[i].numel());
        if (m[i].size() != n || v[i].size() != n) throw std::invalid_argument("adam: moment size mismatch");
    }
    steps_ = steps;
    m_ = std::move(m);
    v_ = std::move(v);
}

template class Adam<float>;
template class Adam<double>;

}  // namespace mvdit::train

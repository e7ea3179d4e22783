// Copyright (c) 2026 The mvdit Authors
// SPDX-License-Identifier: Apache-2.0

#include "mvdit/tensor/tensor.hpp"

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <sstream>
#include <unordered_set>

namespace mvdit {

std::int64_t numel(const Shape& shape) {
    std::int64_t n = 1;
    for (auto d : shape) {
        n *= d;
    }
    return n;
}

std::string to_string(const Shape& shape) {
    std::ostringstream out;
    out << '[';
    for (std::size_t i = 0; i < shape.size(); ++i) {
        out << (i ? ", " : "") << shape[i];
    }
    out << ']';
    return out.str();
}

ShapeError::ShapeError(const std::string& primitive, const std::string& expected, const std::string& actual)
    : std::invalid_argument(primitive + ": expected " + expected + ", got " + actual), primitive_(primitive) {}

ShapeError ShapeError::in_context(const std::string& where) const {
    return ShapeError(primitive_, where + ": " + what(), nullptr);
}

namespace ad {

namespace {
thread_local bool g_grad_enabled = true;
}  // namespace

bool grad_enabled() { return g_grad_enabled; }

NoGradGuard::NoGradGuard() : previous_(g_grad_enabled) { g_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { g_grad_enabled = previous_; }

template <typename T>
void check_finite(const char* primitive, std::span<const T> values) {
    // x - x is NaN exactly when x is NaN or +-Inf.
    const Eigen::Map<const Eigen::Array<T, Eigen::Dynamic, 1>> a(values.data(), static_cast<Eigen::Index>(values.size()));
    if ((a - a).sum() != T(0)) {
        throw NumericError(std::string(primitive) + ": non-finite value produced");
    }
}

template <typename T>
Tensor<T> Tensor<T>::from(Shape shape, std::vector<T> data, bool requires_grad) {
    if (mvdit::numel(shape) != static_cast<std::int64_t>(data.size())) {
        throw ShapeError("tensor", std::to_string(mvdit::numel(shape)) + " values for shape " + to_string(shape),
                         std::to_string(data.size()) + " values");
    }
    check_finite<T>("tensor", data);
    auto node = std::make_shared<Node<T>>();
    node->shape = std::move(shape);
    node->value = std::move(data);
    node->requires_grad = requires_grad;
    return Tensor(std::move(node));
}

template <typename T>
Tensor<T> Tensor<T>::zeros(Shape shape, bool requires_grad) {
    return full(std::move(shape), T(0), requires_grad);
}

template <typename T>
Tensor<T> Tensor<T>::full(Shape shape, T value, bool requires_grad) {
    const auto n = static_cast<std::size_t>(mvdit::numel(shape));
    return from(std::move(shape), std::vector<T>(n, value), requires_grad);
}

template <typename T>
Tensor<T> Tensor<T>::randn(Shape shape, std::mt19937_64& rng, T stddev, bool requires_grad) {
    std::normal_distribution<T> dist(T(0), stddev);
    std::vector<T> data(static_cast<std::size_t>(mvdit::numel(shape)));
    for (auto& v : data) {
        v = dist(rng);
    }
    return from(std::move(shape), std::move(data), requires_grad);
}

template <typename T>
T Tensor<T>::item() const {
    if (node_->value.size() != 1) {
        throw ShapeError("item", "a single element", to_string(node_->shape));
    }
    return node_->value[0];
}

template <typename T>
std::span<T> Tensor<T>::mutable_data() {
    if (!node_->is_leaf) {
        throw std::logic_error("mutable_data: only leaves may be written in place");
    }
    return node_->value;
}

template <typename T>
Tensor<T> Gradients<T>::of(const Tensor<T>& leaf) const {
    for (const auto& [node, grad] : leaf_grads_) {
        if (node == leaf.node()) {
            return Tensor<T>::from(leaf.shape(), grad);
        }
    }
    if (!leaf.is_leaf() || !leaf.requires_grad()) {
        throw std::invalid_argument("gradient requested for a tensor that is not a differentiable leaf");
    }
    return Tensor<T>::zeros(leaf.shape());
}

template <typename T>
bool Gradients<T>::contains(const Tensor<T>& leaf) const {
    return std::any_of(leaf_grads_.begin(), leaf_grads_.end(),
                       [&](const auto& entry) { return entry.first == leaf.node(); });
}

template <typename T>
Gradients<T> backward(const Tensor<T>& loss) {
    if (loss.numel() != 1) {
        throw ShapeError("backward", "scalar loss", to_string(loss.shape()));
    }
    Gradients<T> result;
    if (!loss.requires_grad()) {
        throw std::invalid_argument("backward: loss does not depend on any differentiable leaf");
    }

    // Iterative post-order DFS gives a topological order (parents first).
    std::vector<Node<T>*> order;
    std::unordered_set<Node<T>*> seen;
    std::vector<std::pair<Node<T>*, std::size_t>> stack;
    stack.emplace_back(loss.node(), 0);
    seen.insert(loss.node());
    while (!stack.empty()) {
        auto& [node, next] = stack.back();
        if (next < node->parents.size()) {
            Node<T>* parent = node->parents[next++].get();
            if (parent->requires_grad && seen.insert(parent).second) {
                stack.emplace_back(parent, 0);
            }
            continue;
        }
        order.push_back(node);
        stack.pop_back();
    }

    loss.node()->grad.assign(1, T(1));
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
        Node<T>* node = *it;
        ++result.nodes_visited_;
        if (node->grad.empty()) {
            node->grad.assign(node->value.size(), T(0));
        }
        if (node->is_leaf) {
            result.leaf_grads_.emplace_back(node, std::move(node->grad));
        } else if (node->backward_fn) {
            node->backward_fn(*node);
        }
        node->grad.clear();
        node->grad.shrink_to_fit();
    }
    return result;
}

template class Tensor<float>;
template class Tensor<double>;
template class Gradients<float>;
template class Gradients<double>;
template Gradients<float> backward(const Tensor<float>&);
template Gradients<double> backward(const Tensor<double>&);
template void check_finite<float>(const char*, std::span<const float>);
template void check_finite<double>(const char*, std::span<const double>);

}  // namespace ad
}  // namespace mvdit

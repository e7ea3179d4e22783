// Copyright (c) 2026 The mvdit Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <random>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace mvdit {

using Shape = std::vector<std::int64_t>;

std::int64_t numel(const Shape& shape);
std::string to_string(const Shape& shape);

/// Raised when a primitive receives operands that violate its shape rule.
class ShapeError : public std::invalid_argument {
  public:
    ShapeError(const std::string& primitive, const std::string& expected, const std::string& actual);

    const std::string& primitive() const { return primitive_; }

    /// Same primitive, message prefixed with `where`.
    ShapeError in_context(const std::string& where) const;

  private:
    ShapeError(std::string primitive, const std::string& message, std::nullptr_t)
        : std::invalid_argument(message), primitive_(std::move(primitive)) {}

    std::string primitive_;
};

/// Raised when a primitive produces NaN or Inf.
class NumericError : public std::runtime_error {
  public:
    explicit NumericError(const std::string& what) : std::runtime_error(what) {}
};

namespace ad {

template <typename T>
struct Node {
    Shape shape;
    std::vector<T> value;
    // Accumulated during backward only; empty otherwise.
    std::vector<T> grad;
    bool requires_grad = false;
    bool is_leaf = true;
    const char* op = "leaf";
    std::vector<std::shared_ptr<Node>> parents;
    // Reads this node's grad and accumulates into parents that require grad.
    std::function<void(Node&)> backward_fn;
};

/// Thread-local switch for graph recording. Inference runs under NoGradGuard.
bool grad_enabled();

class NoGradGuard {
  public:
    NoGradGuard();
    ~NoGradGuard();
    NoGradGuard(const NoGradGuard&) = delete;
    NoGradGuard& operator=(const NoGradGuard&) = delete;

  private:
    bool previous_;
};

/// Dense row-major tensor handle. Copies share the underlying node; values are
/// never mutated after construction except through mutable_data() on leaves.
template <typename T>
class Tensor {
  public:
    using value_type = T;

    Tensor() = default;
    explicit Tensor(std::shared_ptr<Node<T>> node) : node_(std::move(node)) {}

    static Tensor from(Shape shape, std::vector<T> data, bool requires_grad = false);
    static Tensor zeros(Shape shape, bool requires_grad = false);
    static Tensor full(Shape shape, T value, bool requires_grad = false);
    static Tensor scalar(T value) { return from({}, {value}); }
    static Tensor randn(Shape shape, std::mt19937_64& rng, T stddev = T(1), bool requires_grad = false);

    bool defined() const { return static_cast<bool>(node_); }
    const Shape& shape() const { return node_->shape; }
    std::int64_t dim(std::size_t axis) const { return node_->shape.at(axis); }
    std::size_t rank() const { return node_->shape.size(); }
    std::int64_t numel() const { return static_cast<std::int64_t>(node_->value.size()); }
    std::span<const T> data() const { return node_->value; }
    const std::vector<T>& values() const { return node_->value; }
    T item() const;
    T operator[](std::int64_t i) const { return node_->value[static_cast<std::size_t>(i)]; }

    bool requires_grad() const { return node_->requires_grad; }
    bool is_leaf() const { return node_->is_leaf; }
    const char* op() const { return node_->op; }

    /// In-place access for optimizer updates; only legal on leaves.
    std::span<T> mutable_data();

    /// New leaf holding a copy of the values, outside any graph.
    Tensor detach() const { return from(shape(), node_->value, false); }

    Node<T>* node() const { return node_.get(); }
    const std::shared_ptr<Node<T>>& node_ptr() const { return node_; }

  private:
    std::shared_ptr<Node<T>> node_;
};

/// Gradients of a scalar loss with respect to leaves.
template <typename T>
class Gradients {
  public:
    /// Gradient for `leaf`; exactly zero when the leaf did not contribute.
    Tensor<T> of(const Tensor<T>& leaf) const;
    bool contains(const Tensor<T>& leaf) const;
    std::size_t nodes_visited() const { return nodes_visited_; }

  private:
    template <typename U>
    friend Gradients<U> backward(const Tensor<U>& loss);

    std::vector<std::pair<const Node<T>*, std::vector<T>>> leaf_grads_;
    std::size_t nodes_visited_ = 0;
};

/// Reverse-mode sweep from a scalar loss. Each reachable node is visited once.
template <typename T>
Gradients<T> backward(const Tensor<T>& loss);

/// Fails fast when any value is NaN/Inf.
template <typename T>
void check_finite(const char* primitive, std::span<const T> values);

extern template class Tensor<float>;
extern template class Tensor<double>;
extern template class Gradients<float>;
extern template class Gradients<double>;

}  // namespace ad

using ad::Tensor;
using TensorF = ad::Tensor<float>;
using TensorD = ad::Tensor<double>;

}  // namespace mvdit

// Copyright (c) 2026 The mvdit Authors
// SPDX-License-Identifier: Apache-2.0
//
// Differentiable primitives. Shape rules are stated next to each declaration;
// a violation raises ShapeError naming the primitive. Every primitive checks
// its output for NaN/Inf and raises NumericError.
//
// Broadcasting is deliberately narrow: scalar scale, and "row" operands of
// shape [G, D] (or [D], meaning G = 1) applied to x viewed as [G, L, D].

#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <type_traits>
#include <vector>

#include "mvdit/tensor/tensor.hpp"

namespace mvdit::ad {

// [..., M, K] x [K, N] -> [..., M, N], or batched [..., M, K] x [..., K, N].
template <typename T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b);

// Same shape.
template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b);
template <typename T>
Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b);
template <typename T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b);

template <typename T>
Tensor<T> scale(const Tensor<T>& a, T factor);
template <typename T>
Tensor<T> abs(const Tensor<T>& a);
template <typename T>
Tensor<T> gelu(const Tensor<T>& a);

// x [G*L*D elements, last dim D], rows [G, D] or [D].
template <typename T>
Tensor<T> add_rows(const Tensor<T>& x, const Tensor<T>& rows);
template <typename T>
Tensor<T> mul_rows(const Tensor<T>& x, const Tensor<T>& rows);

// x * (1 + scale) + shift with row broadcast; scale/shift are [G, D].
template <typename T>
Tensor<T> modulate(const Tensor<T>& x, const Tensor<T>& shift, const Tensor<T>& scale);

// x + gate * y with row broadcast; gate is [G, D].
template <typename T>
Tensor<T> add_gated(const Tensor<T>& x, const Tensor<T>& y, const Tensor<T>& gate);

// Adds table[i_axis] to every D-row of x, where x has last dim D and
// table is [x.shape[axis], D].
template <typename T>
Tensor<T> add_axis_embedding(const Tensor<T>& x, const Tensor<T>& table, std::size_t axis);

// Element count must match.
template <typename T>
Tensor<T> reshape(const Tensor<T>& a, Shape shape);

// out.shape[i] = a.shape[perm[i]].
template <typename T>
Tensor<T> permute(const Tensor<T>& a, const std::vector<std::size_t>& perm);

// All shapes equal except along `axis`.
template <typename T>
Tensor<T> concat(const std::vector<Tensor<T>>& parts, std::size_t axis);

// sizes sum to a.shape[axis].
template <typename T>
std::vector<Tensor<T>> split(const Tensor<T>& a, std::size_t axis, const std::vector<std::int64_t>& sizes);

// [..] -> [count, ..] by repetition along a new leading axis.
template <typename T>
Tensor<T> tile_leading(const Tensor<T>& a, std::int64_t count);

// table [N, D], ids in [0, N) -> [len(ids), D].
template <typename T>
Tensor<T> gather_rows(const Tensor<T>& table, const std::vector<std::int64_t>& ids);

template <typename T>
Tensor<T> softmax_lastdim(const Tensor<T>& a);

// Normalizes each last-dim row to zero mean, unit variance; no affine.
template <typename T>
Tensor<T> layer_norm(const Tensor<T>& a, T eps = T(1e-6));

// x [..., in] * weight [in, out] + bias [out]. bias may be undefined.
template <typename T>
Tensor<T> linear(const Tensor<T>& x, const Tensor<T>& weight, const Tensor<T>& bias);

struct AttentionOptions {
    std::int64_t heads = 1;
    // Pre-softmax multiplier; defaults to 1/sqrt(head_dim).
    std::optional<double> logit_scale;
};

// q [B, Lq, H*dk], k [B, Lk, H*dk], v [B, Lk, H*dv] -> [B, Lq, H*dv].
// key_mask: optional additive mask [B * Lk] (0 keeps, -inf drops), constant.
template <typename T>
Tensor<T> scaled_dot_attention(const Tensor<T>& q, const Tensor<T>& k, const Tensor<T>& v,
                               const AttentionOptions& options, std::span<const std::type_identity_t<T>> key_mask = {});

// Scalar reductions over all elements.
template <typename T>
Tensor<T> mean(const Tensor<T>& a);
template <typename T>
Tensor<T> sum_sq(const Tensor<T>& a);

}  // namespace mvdit::ad

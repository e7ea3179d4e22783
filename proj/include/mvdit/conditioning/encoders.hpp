// Copyright (c) 2026 The mvdit Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <stdexcept>
#include <vector>

#include "mvdit/conditioning/caption.hpp"
#include "mvdit/conditioning/layout.hpp"
#include "mvdit/tensor/tensor.hpp"

namespace mvdit::conditioning {

class LayoutError : public std::invalid_argument {
  public:
    using std::invalid_argument::invalid_argument;
};

template <typename T>
struct CaptionEncoderParams {
    Tensor<T> table;      // [64, D]
    Tensor<T> positions;  // [16, D]
    Tensor<T> null_tokens;  // [16, D]
};

/// [16, D]. A missing caption (φ) yields the learned null sequence.
template <typename T>
Tensor<T> encode_caption(const std::optional<SceneCaption>& caption, const CaptionEncoderParams<T>& params);

template <typename T>
struct LayoutEncoderParams {
    Tensor<T> category;  // [8, Ec]
    Tensor<T> instance;  // [32, Ei]
    Tensor<T> w1, b1;    // [60 + Ec + Ei, D], [D]
    Tensor<T> w2, b2;    // [D, D], [D]
    Tensor<T> null_token;  // [1, D]
};

template <typename T>
struct LayoutTokens {
    Tensor<T> tokens;  // [G, 8, D]
    // 1 for slots holding an entry, 0 for null slots; G * 8 values.
    std::vector<std::uint8_t> valid;
};

/// Encodes several slot groups at once (one group per view and frame).
/// Slot s of group g holds groups[g][s]; remaining slots are null.
template <typename T>
LayoutTokens<T> encode_layout_groups(const std::vector<std::vector<LayoutEntry>>& groups,
                                     const LayoutEncoderParams<T>& params);

/// Tokens of one (frame, view). `entries` == nullptr means φ: all slots null.
template <typename T>
LayoutTokens<T> encode_layout(const std::vector<LayoutEntry>* entries, std::int64_t frame, std::int64_t view,
                              const LayoutEncoderParams<T>& params);

/// Additive key mask for attention: 0 for valid slots, -inf for null ones.
template <typename T>
std::vector<T> additive_mask(std::span<const std::uint8_t> valid);

}  // namespace mvdit::conditioning

// Copyright (c) 2026 The mvdit Authors
// SPDX-License-Identifier: Apache-2.0

#include "mvdit/conditioning/encoders.hpp"

#include <limits>
#include <string>

#include "mvdit/tensor/ops.hpp"

namespace mvdit::conditioning {

template <typename T>
Tensor<T> encode_caption(const std::optional<SceneCaption>& caption, const CaptionEncoderParams<T>& params) {
    if (!caption) return params.null_tokens;
    std::vector<std::int64_t> ids(caption->ids.begin(), caption->ids.end());
    for (auto id : ids) {
        if (id < 0 || id >= kVocabSize) {
            throw std::out_of_range("encode_caption: token id " + std::to_string(id) + " outside the vocabulary");
        }
    }
    return ad::add(ad::gather_rows(params.table, ids), params.positions);
}

template <typename T>
LayoutTokens<T> encode_layout_groups(const std::vector<std::vector<LayoutEntry>>& groups,
                                     const LayoutEncoderParams<T>& params) {
    std::int64_t total = 0;
    for (const auto& g : groups) {
        if (static_cast<std::int64_t>(g.size()) > kMaxInstances) {
            throw LayoutError("encode_layout: " + std::to_string(g.size()) + " entries exceed the limit of " +
                              std::to_string(kMaxInstances));
        }
        total += static_cast<std::int64_t>(g.size());
    }
    const std::int64_t width = params.null_token.dim(1);

    Tensor<T> table = params.null_token;
    if (total > 0) {
        std::vector<T> fourier;
        fourier.reserve(static_cast<std::size_t>(total * kLayoutFourierWidth));
        std::vector<std::int64_t> categories, instances;
        for (const auto& g : groups) {
            for (const auto& e : g) {
                if (e.category >= kCategoryCount) {
                    throw LayoutError("encode_layout: category " + std::to_string(e.category) + " out of range");
                }
                for (double f : layout_geometry_features(e)) fourier.push_back(static_cast<T>(f));
                categories.push_back(e.category);
                instances.push_back(static_cast<std::int64_t>(e.instance % kInstanceTableSize));
            }
        }
        auto features = ad::concat<T>({Tensor<T>::from({total, kLayoutFourierWidth}, std::move(fourier)),
                                       ad::gather_rows(params.category, categories),
                                       ad::gather_rows(params.instance, instances)},
                                      1);
        auto hidden = ad::gelu(ad::linear(features, params.w1, params.b1));
        table = ad::concat<T>({ad::linear(hidden, params.w2, params.b2), params.null_token}, 0);
    }

    LayoutTokens<T> out;
    std::vector<std::int64_t> slots;
    slots.reserve(groups.size() * kMaxInstances);
    out.valid.reserve(groups.size() * kMaxInstances);
    std::int64_t offset = 0;
    for (const auto& g : groups) {
        const auto n = static_cast<std::int64_t>(g.size());
        for (std::int64_t s = 0; s < kMaxInstances; ++s) {
            slots.push_back(s < n ? offset + s : total);
            out.valid.push_back(s < n ? 1 : 0);
        }
        offset += n;
    }
    out.tokens = ad::reshape(ad::gather_rows(table, slots),
                             {static_cast<std::int64_t>(groups.size()), kMaxInstances, width});
    return out;
}

template <typename T>
LayoutTokens<T> encode_layout(const std::vector<LayoutEntry>* entries, std::int64_t frame, std::int64_t view,
                              const LayoutEncoderParams<T>& params) {
    std::vector<std::vector<LayoutEntry>> groups(1);
    if (entries) groups[0] = entries_for(*entries, frame, view);
    return encode_layout_groups(groups, params);
}

template <typename T>
std::vector<T> additive_mask(std::span<const std::uint8_t> valid) {
    std::vector<T> mask(valid.size());
    for (std::size_t i = 0; i < valid.size(); ++i) {
        mask[i] = valid[i] ? T(0) : -std::numeric_limits<T>::infinity();
    }
    return mask;
}

#define MVDIT_INSTANTIATE_ENCODERS(T)                                                                              \
    template Tensor<T> encode_caption(const std::optional<SceneCaption>&, const CaptionEncoderParams<T>&);       \
    template LayoutTokens<T> encode_layout_groups(const std::vector<std::vector<LayoutEntry>>&,                   \
                                                  const LayoutEncoderParams<T>&);                                 \
    template LayoutTokens<T> encode_layout(const std::vector<LayoutEntry>*, std::int64_t, std::int64_t,          \
                                           const LayoutEncoderParams<T>&);                                        \
    template std::vector<T> additive_mask<T>(std::span<const std::uint8_t>);

MVDIT_INSTANTIATE_ENCODERS(float)
MVDIT_INSTANTIATE_ENCODERS(double)

}  // namespace mvdit::conditioning

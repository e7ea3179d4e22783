// Copyright (c) 2026 The mvdit Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "mvdit/tensor/tensor.hpp"

namespace mvdit::model {

/// Named differentiable leaves in a fixed canonical order (registration
/// order). The order is the flat serialization order of checkpoints.
template <typename T>
class ParamStore {
  public:
    struct Entry {
        std::string name;
        Tensor<T> tensor;
    };

    const Tensor<T>& add(std::string name, Shape shape, std::vector<T> values);
    const Tensor<T>& get(std::string_view name) const;
    bool contains(std::string_view name) const { return index_.count(std::string(name)) > 0; }

    const std::vector<Entry>& entries() const { return entries_; }
    std::size_t size() const { return entries_.size(); }
    std::int64_t element_count() const;

    /// FNV-1a over the float32 rendering of one parameter's values.
    std::uint64_t checksum(std::string_view name) const;

    /// Overwrites values in place (shapes must match).
    void assign(std::string_view name, std::span<const T> values);

    template <typename U>
    ParamStore<U> cast() const {
        ParamStore<U> out;
        for (const auto& e : entries_) {
            std::vector<U> v(e.tensor.values().begin(), e.tensor.values().end());
            out.add(e.name, e.tensor.shape(), std::move(v));
        }
        return out;
    }

  private:
    std::vector<Entry> entries_;
    std::unordered_map<std::string, std::size_t> index_;
};

/// Adds N(0, stddev^2) noise to every parameter (per-parameter streams).
template <typename T>
void randomize(ParamStore<T>& store, std::uint64_t seed, double stddev);

extern template class ParamStore<float>;
extern template class ParamStore<double>;

}  // namespace mvdit::model

// Copyright (c) 2026 The mvdit Authors
// SPDX-License-Identifier: Apache-2.0

#include "mvdit/model/param_store.hpp"

#include <algorithm>
#include <random>
#include <stdexcept>

#include "mvdit/util/checksum.hpp"
#include "mvdit/util/rng.hpp"

namespace mvdit::model {

template <typename T>
const Tensor<T>& ParamStore<T>::add(std::string name, Shape shape, std::vector<T> values) {
    if (contains(name)) {
        throw std::invalid_argument("duplicate parameter " + name);
    }
    index_.emplace(name, entries_.size());
    entries_.push_back({std::move(name), Tensor<T>::from(std::move(shape), std::move(values), true)});
    return entries_.back().tensor;
}

template <typename T>
const Tensor<T>& ParamStore<T>::get(std::string_view name) const {
    const auto it = index_.find(std::string(name));
    if (it == index_.end()) {
        throw std::out_of_range("unknown parameter " + std::string(name));
    }
    return entries_[it->second].tensor;
}

template <typename T>
std::int64_t ParamStore<T>::element_count() const {
    std::int64_t n = 0;
    for (const auto& e : entries_) n += e.tensor.numel();
    return n;
}

template <typename T>
std::uint64_t ParamStore<T>::checksum(std::string_view name) const {
    const auto& values = get(name).values();
    std::vector<float> as_float(values.begin(), values.end());
    return checksum_of<float>(as_float);
}

template <typename T>
void ParamStore<T>::assign(std::string_view name, std::span<const T> values) {
    auto tensor = get(name);
    auto dst = tensor.mutable_data();
    if (dst.size() != values.size()) {
        throw ShapeError("assign", std::to_string(dst.size()) + " values for " + std::string(name),
                         std::to_string(values.size()));
    }
    std::copy(values.begin(), values.end(), dst.begin());
}

template <typename T>
void randomize(ParamStore<T>& store, std::uint64_t seed, double stddev) {
    std::normal_distribution<double> dist(0.0, stddev);
    for (std::size_t i = 0; i < store.size(); ++i) {
        auto rng = make_rng(seed, i);
        auto tensor = store.entries()[i].tensor;
        for (auto& v : tensor.mutable_data()) v += static_cast<T>(dist(rng));
    }
}

template void randomize(ParamStore<float>&, std::uint64_t, double);
template void randomize(ParamStore<double>&, std::uint64_t, double);
template class ParamStore<float>;
template class ParamStore<double>;

}  // namespace mvdit::model

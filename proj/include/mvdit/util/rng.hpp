// Copyright (c) 2026 The mvdit Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <random>

namespace mvdit {

/// SplitMix64 finalizer; used to derive independent sub-seeds.
constexpr std::uint64_t mix_seed(std::uint64_t x) {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

/// Seed for stream `index` of a parent seed. Streams never overlap in practice
/// and do not depend on the order they are requested in.
constexpr std::uint64_t derive_seed(std::uint64_t parent, std::uint64_t index) {
    return mix_seed(mix_seed(parent) ^ mix_seed(index + 0x632be59bd9b4e019ULL));
}

inline std::mt19937_64 make_rng(std::uint64_t parent, std::uint64_t index) {
    return std::mt19937_64(derive_seed(parent, index));
}

}  // namespace mvdit

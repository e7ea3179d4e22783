// Copyright (c) 2026 The mvdit Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <span>
#include <string>

namespace mvdit {

/// 64-bit FNV-1a over raw bytes.
std::uint64_t fnv1a64(std::span<const std::uint8_t> bytes, std::uint64_t seed = 0xcbf29ce484222325ULL);

template <typename T>
std::uint64_t checksum_of(std::span<const T> values) {
    return fnv1a64({reinterpret_cast<const std::uint8_t*>(values.data()), values.size_bytes()});
}

std::string hex64(std::uint64_t value);

}  // namespace mvdit

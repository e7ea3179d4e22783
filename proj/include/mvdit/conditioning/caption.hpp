// Copyright (c) 2026 The mvdit Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace mvdit::conditioning {

inline constexpr std::int64_t kVocabSize = 64;
inline constexpr std::int64_t kCaptionLength = 16;
inline constexpr std::int64_t kPadId = 0;
inline constexpr std::int64_t kUnkId = 1;

/// The fixed caption vocabulary; index = token id. Published verbatim as
/// resources/vocab.txt (one word per line, zero-based line number = id).
std::span<const std::string_view> vocabulary();

/// Reads a vocabulary file in the published format.
std::vector<std::string> read_vocabulary(const std::filesystem::path& path);

/// Token id of `word`, or kUnkId.
std::int64_t word_id(std::string_view word);

struct SceneCaption {
    std::array<std::int64_t, kCaptionLength> ids{};

    bool operator==(const SceneCaption&) const = default;
};

/// Whitespace-split lookup, suffix-padded with kPadId; extra words are dropped.
SceneCaption tokenize_caption(std::string_view text);

/// True when `word` appears as a whole word in `text`.
bool mentions_word(std::string_view text, std::string_view word);

}  // namespace mvdit::conditioning

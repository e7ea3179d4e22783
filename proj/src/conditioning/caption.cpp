// Copyright (c) 2026 The mvdit Authors
// SPDX-License-Identifier: Apache-2.0

#include "mvdit/conditioning/caption.hpp"

#include <algorithm>
#include <fstream>
#include <sstream>
#include <stdexcept>

namespace mvdit::conditioning {

namespace {

constexpr std::array<std::string_view, kVocabSize> kWords{
    "<pad>", "<unk>",    "day",      "night",  "clear",  "rain",  "fog",    "busy",   "quiet",        "empty",
    "traffic", "highway", "street",  "road",   "lane",   "lanes", "car",    "cars",   "truck",        "trucks",
    "bus",   "van",      "bike",     "one",    "two",    "three", "four",   "five",   "six",          "seven",
    "eight", "many",     "few",      "straight", "curved", "wide", "narrow", "wet",   "dry",          "dark",
    "bright", "gray",    "red",      "blue",   "green",  "white", "yellow", "black",  "moving",       "parked",
    "slow",  "fast",     "left",     "right",  "ahead",  "behind", "with",  "and",    "the",          "a",
    "scene", "intersection", "city", "rural"};

}  // namespace

std::span<const std::string_view> vocabulary() { return kWords; }

std::vector<std::string> read_vocabulary(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) {
        throw std::runtime_error("cannot open vocabulary file " + path.string());
    }
    std::vector<std::string> words;
    for (std::string line; std::getline(in, line);) {
        words.push_back(line);
    }
    return words;
}

std::int64_t word_id(std::string_view word) {
    // Reserved tokens never match user text.
    for (std::size_t i = 2; i < kWords.size(); ++i) {
        if (kWords[i] == word) {
            return static_cast<std::int64_t>(i);
        }
    }
    return kUnkId;
}

SceneCaption tokenize_caption(std::string_view text) {
    SceneCaption caption;
    caption.ids.fill(kPadId);
    std::istringstream in{std::string(text)};
    std::size_t n = 0;
    for (std::string word; in >> word && n < caption.ids.size();) {
        caption.ids[n++] = word_id(word);
    }
    return caption;
}

bool mentions_word(std::string_view text, std::string_view word) {
    std::istringstream in{std::string(text)};
    for (std::string w; in >> w;) {
        if (w == word) return true;
    }
    return false;
}

}  // namespace mvdit::conditioning

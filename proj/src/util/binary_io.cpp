// Copyright (c) 2026 The mvdit Authors
// SPDX-License-Identifier: Apache-2.0

#include "mvdit/util/binary_io.hpp"

#include <bit>
#include <fstream>
#include <iterator>

namespace mvdit {

void ByteWriter::f32(float v) { u32(std::bit_cast<std::uint32_t>(v)); }

void ByteWriter::text(std::string_view s) {
    u32(static_cast<std::uint32_t>(s.size()));
    bytes_.insert(bytes_.end(), s.begin(), s.end());
}

void ByteWriter::f32_array(std::span<const float> values) {
    bytes_.reserve(bytes_.size() + values.size() * 4);
    for (float v : values) f32(v);
}

std::uint64_t ByteReader::get(int n) {
    if (remaining() < static_cast<std::size_t>(n)) fail("truncated");
    std::uint64_t v = 0;
    for (int i = 0; i < n; ++i) v |= static_cast<std::uint64_t>(bytes_[pos_ + i]) << (8 * i);
    pos_ += static_cast<std::size_t>(n);
    return v;
}

float ByteReader::f32() { return std::bit_cast<float>(u32()); }

std::span<const std::uint8_t> ByteReader::raw(std::size_t n) {
    if (remaining() < n) fail("truncated");
    auto out = bytes_.subspan(pos_, n);
    pos_ += n;
    return out;
}

std::string ByteReader::text() {
    const auto n = u32();
    const auto r = raw(n);
    return {r.begin(), r.end()};
}

std::vector<float> ByteReader::f32_array(std::size_t n) {
    if (remaining() / 4 < n) fail("truncated");
    std::vector<float> out(n);
    for (auto& v : out) v = f32();
    return out;
}

void ByteReader::expect_magic(std::string_view magic) {
    if (remaining() < magic.size()) fail("truncated");
    const auto r = raw(magic.size());
    if (!std::equal(magic.begin(), magic.end(), r.begin())) fail("bad magic, expected " + std::string(magic));
}

void ByteReader::fail(const std::string& why) const {
    throw FormatError(what_ + ": " + why + " at byte " + std::to_string(pos_));
}

std::vector<std::uint8_t> read_file(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw MissingFileError("cannot open " + path.string());
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

void write_file(const std::filesystem::path& path, std::span<const std::uint8_t> bytes) {
    auto tmp = path;
    tmp += ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) throw std::runtime_error("cannot write " + tmp.string());
        out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
        if (!out) throw std::runtime_error("write failed: " + tmp.string());
    }
    std::filesystem::rename(tmp, path);
}

}  // namespace mvdit

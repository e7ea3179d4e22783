// Copyright (c) 2026 The mvdit Authors
// SPDX-License-Identifier: Apache-2.0

#include "mvdit/app/checkpoint.hpp"

#include "mvdit/model/stdit.hpp"
#include "mvdit/util/binary_io.hpp"
#include "mvdit/util/checksum.hpp"

namespace mvdit::app {

namespace {

struct Record {
    std::string name;
    Shape shape;
    std::uint64_t offset = 0;  // in floats from the array section start
    std::uint64_t checksum = 0;
};

std::vector<std::uint8_t> encode_record(const Record& r) {
    ByteWriter w;
    w.text(r.name);
    w.u32(static_cast<std::uint32_t>(r.shape.size()));
    for (auto d : r.shape) w.u64(static_cast<std::uint64_t>(d));
    w.u64(r.offset * sizeof(float));
    w.u64(r.checksum);
    return w.take();
}

Record decode_record(ByteReader& outer) {
    const auto length = outer.u32();
    ByteReader r(outer.raw(length), "checkpoint record");
    Record rec;
    rec.name = r.text();
    const auto rank = r.u32();
    if (rank > 8) r.fail("rank " + std::to_string(rank) + " too large");
    for (std::uint32_t i = 0; i < rank; ++i) {
        const auto d = r.u64();
        if (d > (1ULL << 32)) r.fail("extent too large");
        rec.shape.push_back(static_cast<std::int64_t>(d));
    }
    const auto byte_offset = r.u64();
    if (byte_offset % sizeof(float) != 0) r.fail("misaligned array offset");
    rec.offset = byte_offset / sizeof(float);
    rec.checksum = r.u64();
    if (r.remaining() != 0) r.fail("trailing record bytes");
    return rec;
}

}  // namespace

std::vector<std::uint8_t> encode_checkpoint(const Checkpoint& c) {
    const auto& entries = c.params.entries();
    const bool has_moments = !c.adam_m.empty();
    if (has_moments && (c.adam_m.size() != entries.size() || c.adam_v.size() != entries.size())) {
        throw std::invalid_argument("checkpoint: optimizer moments do not match the parameters");
    }
    std::vector<Record> records;
    std::vector<std::span<const float>> arrays;
    std::uint64_t offset = 0;
    auto add = [&](std::string name, Shape shape, std::span<const float> values) {
        if (static_cast<std::int64_t>(values.size()) != numel(shape)) {
            throw std::invalid_argument("checkpoint: " + name + " has the wrong element count");
        }
        records.push_back({std::move(name), std::move(shape), offset, checksum_of<float>(values)});
        arrays.push_back(values);
        offset += values.size();
    };
    for (const auto& e : entries) add(e.name, e.tensor.shape(), e.tensor.values());
    if (has_moments) {
        for (std::size_t i = 0; i < entries.size(); ++i) add("adam.m/" + entries[i].name, entries[i].tensor.shape(), c.adam_m[i]);
        for (std::size_t i = 0; i < entries.size(); ++i) add("adam.v/" + entries[i].name, entries[i].tensor.shape(), c.adam_v[i]);
    }
    ByteWriter w;
    w.raw(std::span(reinterpret_cast<const std::uint8_t*>("MVDT"), 4));
    w.u16(kCheckpointVersion);
    w.text(c.config.snapshot());
    w.u64(static_cast<std::uint64_t>(c.step));
    w.u64(static_cast<std::uint64_t>(c.optimizer_steps));
    w.u32(static_cast<std::uint32_t>(records.size()));
    for (const auto& r : records) {
        const auto bytes = encode_record(r);
        w.u32(static_cast<std::uint32_t>(bytes.size()));
        w.raw(bytes);
    }
    for (const auto& a : arrays) w.f32_array(a);
    return w.take();
}

Checkpoint decode_checkpoint(std::span<const std::uint8_t> bytes, const std::optional<model::ModelConfig>& expected) {
    ByteReader r(bytes, "checkpoint");
    r.expect_magic("MVDT");
    const auto version = r.u16();
    if (version != kCheckpointVersion) r.fail("unsupported version " + std::to_string(version));
    Checkpoint c;
    try {
        c.config = parse_run_config(r.text());
    } catch (const ConfigError& e) {
        r.fail(std::string("bad config snapshot: ") + e.what());
    }
    if (expected && !(*expected == c.config.model)) {
        throw ConfigError("checkpoint model config does not match the requested one");
    }
    if (const auto v = c.config.model.violations(); !v.empty()) r.fail("stored model config is invalid: " + v.front());
    c.step = static_cast<std::int64_t>(r.u64());
    c.optimizer_steps = static_cast<std::int64_t>(r.u64());
    const auto count = r.u32();
    const auto layout = model::parameter_layout(c.config.model);
    if (count != layout.size() && count != 3 * layout.size()) {
        r.fail("expected " + std::to_string(layout.size()) + " or " + std::to_string(3 * layout.size()) +
               " records, found " + std::to_string(count));
    }
    std::vector<Record> records;
    for (std::uint32_t i = 0; i < count; ++i) records.push_back(decode_record(r));
    std::uint64_t offset = 0;
    for (std::uint32_t i = 0; i < count; ++i) {
        const auto& spec = layout[i % layout.size()];
        const std::string prefix = i < layout.size() ? "" : (i < 2 * layout.size() ? "adam.m/" : "adam.v/");
        if (records[i].name != prefix + spec.name || records[i].shape != spec.shape) {
            r.fail("record " + std::to_string(i) + " is " + records[i].name + " " + to_string(records[i].shape) +
                   ", expected " + prefix + spec.name + " " + to_string(spec.shape));
        }
        if (records[i].offset != offset) r.fail("record " + records[i].name + " has a non-contiguous offset");
        offset += static_cast<std::uint64_t>(numel(spec.shape));
    }
    if (r.remaining() != offset * sizeof(float)) {
        r.fail("array section holds " + std::to_string(r.remaining()) + " bytes, expected " +
               std::to_string(offset * sizeof(float)));
    }
    for (std::uint32_t i = 0; i < count; ++i) {
        auto values = r.f32_array(static_cast<std::size_t>(numel(records[i].shape)));
        if (checksum_of<float>(values) != records[i].checksum) r.fail("checksum mismatch for " + records[i].name);
        if (i < layout.size()) {
            c.params.add(records[i].name, records[i].shape, std::move(values));
        } else if (i < 2 * layout.size()) {
            c.adam_m.push_back(std::move(values));
        } else {
            c.adam_v.push_back(std::move(values));
        }
    }
    return c;
}

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& checkpoint) {
    write_file(path, encode_checkpoint(checkpoint));
}

Checkpoint load_checkpoint(const std::filesystem::path& path, const std::optional<model::ModelConfig>& expected) {
    return decode_checkpoint(read_file(path), expected);
}

}  // namespace mvdit::app

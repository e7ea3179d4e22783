// Copyright (c) 2026 The mvdit Authors
// SPDX-License-Identifier: Apache-2.0
//
// TOYW scene files (little-endian):
//   "TOYW", u16 version, u32 V, T, C, H, W,
//   u32 caption length + UTF-8 bytes,
//   u32 entry count + entries (u16 frame, u16 view, f32 cx cy sw sh heading,
//                              u32 instance, u16 category),
//   V*T*C*H*W f32 pixels, V*T*H*W u8 sketch bits.
// Datasets pair scene files with a manifest of lines
//   <file> <VxTxCxHxW> <HxW/T bucket> <fnv1a64 hex of the file bytes>

#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "mvdit/conditioning/condition.hpp"
#include "mvdit/toyworld/scene.hpp"

namespace mvdit::toyworld {

inline constexpr std::uint16_t kSceneVersion = 1;

struct SceneFile {
    std::string caption;
    codec::VideoTensor video;
    std::vector<LayoutEntry> layouts;
    RoadSketch sketch;

    bool operator==(const SceneFile& other) const;
};

SceneFile scene_file(const RenderedScene& scene);
std::vector<std::uint8_t> encode_scene(const SceneFile& scene);
/// Throws FormatError on malformed input.
SceneFile decode_scene(std::span<const std::uint8_t> bytes);
void write_scene(const std::filesystem::path& path, const SceneFile& scene);
SceneFile read_scene(const std::filesystem::path& path);

/// Caption, layout and sketch of a scene as model conditions.
conditioning::ConditionTriple scene_condition(const SceneFile& scene);

struct Bucket {
    std::int64_t height = 32, width = 32, frames = 16;
    std::string key() const;  // "32x32/16"
    static Bucket parse(const std::string& key);
    bool operator==(const Bucket&) const = default;
};

struct ManifestEntry {
    std::string file;  // relative to the manifest directory
    Shape shape;       // V, T, C, H, W
    Bucket bucket;
    std::uint64_t checksum = 0;
};

struct Manifest {
    std::filesystem::path root;
    std::vector<ManifestEntry> entries;

    /// Reads and checksum-verifies one scene.
    SceneFile load(std::size_t index) const;
    /// Entries of one bucket, in manifest order.
    std::vector<std::size_t> in_bucket(const Bucket& bucket) const;
};

inline constexpr const char* kManifestName = "manifest.txt";

Manifest read_manifest(const std::filesystem::path& dir_or_file);
void write_manifest(const Manifest& manifest);

/// Renders n scenes with per-scene sub-seeds; scene i uses bucket i mod |buckets|.
Manifest make_dataset(std::int64_t n_scenes, std::uint64_t seed, const std::filesystem::path& out_dir,
                      const std::vector<Bucket>& buckets, std::int64_t views);

}  // namespace mvdit::toyworld

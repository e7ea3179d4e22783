// Copyright (c) 2026 The mvdit Authors
// SPDX-License-Identifier: Apache-2.0

#include "mvdit/toyworld/scene_io.hpp"

#include <fstream>
#include <sstream>
#include <stdexcept>

#include "mvdit/conditioning/caption.hpp"
#include "mvdit/util/binary_io.hpp"
#include "mvdit/util/checksum.hpp"
#include "mvdit/util/rng.hpp"

namespace mvdit::toyworld {
namespace {

std::string shape_key(const Shape& s) {
    std::string out;
    for (std::size_t i = 0; i < s.size(); ++i) out += (i ? "x" : "") + std::to_string(s[i]);
    return out;
}

Shape parse_shape(const std::string& text) {
    Shape out;
    std::stringstream in(text);
    std::string part;
    while (std::getline(in, part, 'x')) out.push_back(std::stoll(part));
    return out;
}

}  // namespace

bool SceneFile::operator==(const SceneFile& other) const {
    return caption == other.caption && video.shape() == other.video.shape() &&
           video.pixels() == other.video.pixels() && layouts == other.layouts && sketch == other.sketch;
}

SceneFile scene_file(const RenderedScene& scene) {
    return {scene.caption, scene.video, scene.layouts, scene.sketch};
}

std::vector<std::uint8_t> encode_scene(const SceneFile& scene) {
    const auto& s = scene.video.shape();
    if (scene.sketch.views != s[0] || scene.sketch.frames != s[1] || scene.sketch.height != s[3] ||
        scene.sketch.width != s[4]) {
        throw std::invalid_argument("encode_scene: sketch and video shapes differ");
    }
    ByteWriter w;
    w.raw({reinterpret_cast<const std::uint8_t*>("TOYW"), 4});
    w.u16(kSceneVersion);
    for (auto d : s) w.u32(static_cast<std::uint32_t>(d));
    w.text(scene.caption);
    w.u32(static_cast<std::uint32_t>(scene.layouts.size()));
    for (const auto& e : scene.layouts) {
        w.u16(e.frame);
        w.u16(e.view);
        for (float g : {e.cx, e.cy, e.sw, e.sh, e.heading}) w.f32(g);
        w.u32(e.instance);
        w.u16(e.category);
    }
    w.f32_array(scene.video.pixels());
    w.raw(scene.sketch.bits);
    return w.take();
}

SceneFile decode_scene(std::span<const std::uint8_t> bytes) {
    ByteReader r(bytes, "scene file");
    r.expect_magic("TOYW");
    if (const auto v = r.u16(); v != kSceneVersion) r.fail("unsupported version " + std::to_string(v));
    Shape shape(5);
    for (auto& d : shape) {
        d = r.u32();
        if (d == 0 || d > 4096) r.fail("implausible dimension " + std::to_string(d));
    }
    SceneFile scene;
    scene.caption = r.text();
    const auto count = r.u32();
    if (count > r.remaining() / 30) r.fail("layout count exceeds file size");
    scene.layouts.resize(count);
    for (auto& e : scene.layouts) {
        e.frame = r.u16();
        e.view = r.u16();
        e.cx = r.f32();
        e.cy = r.f32();
        e.sw = r.f32();
        e.sh = r.f32();
        e.heading = r.f32();
        e.instance = r.u32();
        e.category = r.u16();
        if (e.view >= shape[0] || e.frame >= shape[1]) r.fail("layout entry outside the clip");
    }
    auto pixels = r.f32_array(static_cast<std::size_t>(numel(shape)));
    for (float p : pixels) {
        if (!(p >= 0.0f && p <= 1.0f)) r.fail("pixel outside [0, 1]");
    }
    scene.video = codec::VideoTensor(shape, std::move(pixels));
    scene.sketch = RoadSketch::zeros(shape[0], shape[1], shape[3], shape[4]);
    const auto bits = r.raw(scene.sketch.bits.size());
    scene.sketch.bits.assign(bits.begin(), bits.end());
    if (r.remaining() != 0) r.fail("trailing bytes");
    return scene;
}

void write_scene(const std::filesystem::path& path, const SceneFile& scene) { write_file(path, encode_scene(scene)); }

SceneFile read_scene(const std::filesystem::path& path) {
    const auto bytes = read_file(path);
    try {
        return decode_scene(bytes);
    } catch (const FormatError& e) {
        throw FormatError(path.string() + ": " + e.what());
    }
}

conditioning::ConditionTriple scene_condition(const SceneFile& scene) {
    return conditioning::make_condition(conditioning::tokenize_caption(scene.caption), scene.layouts, scene.sketch);
}

std::string Bucket::key() const {
    return std::to_string(height) + "x" + std::to_string(width) + "/" + std::to_string(frames);
}

Bucket Bucket::parse(const std::string& key) {
    Bucket b;
    char x = 0, slash = 0;
    std::istringstream in(key);
    if (!(in >> b.height >> x >> b.width >> slash >> b.frames) || x != 'x' || slash != '/' || b.height <= 0 ||
        b.width <= 0 || b.frames <= 0 || in.peek() != std::char_traits<char>::eof()) {
        throw std::invalid_argument("bad bucket key '" + key + "', expected HxW/T");
    }
    return b;
}

SceneFile Manifest::load(std::size_t index) const {
    const auto& e = entries.at(index);
    const auto bytes = read_file(root / e.file);
    if (fnv1a64(bytes) != e.checksum) throw FormatError(e.file + ": checksum mismatch");
    auto scene = decode_scene(bytes);
    if (scene.video.shape() != e.shape) throw FormatError(e.file + ": shape differs from manifest");
    return scene;
}

std::vector<std::size_t> Manifest::in_bucket(const Bucket& bucket) const {
    std::vector<std::size_t> out;
    for (std::size_t i = 0; i < entries.size(); ++i) {
        if (entries[i].bucket == bucket) out.push_back(i);
    }
    return out;
}

Manifest read_manifest(const std::filesystem::path& dir_or_file) {
    Manifest m;
    auto file = dir_or_file;
    if (std::filesystem::is_directory(file)) file /= kManifestName;
    m.root = file.parent_path();
    std::ifstream in(file);
    if (!in) throw MissingFileError("cannot open manifest " + file.string());
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty()) continue;
        std::istringstream fields(line);
        std::string name, shape, bucket, sum;
        if (!(fields >> name >> shape >> bucket >> sum)) {
            throw FormatError(file.string() + ":" + std::to_string(line_no) + ": expected 4 fields");
        }
        ManifestEntry e;
        e.file = name;
        e.shape = parse_shape(shape);
        e.bucket = Bucket::parse(bucket);
        e.checksum = std::stoull(sum, nullptr, 16);
        if (e.shape.size() != 5) throw FormatError(file.string() + ":" + std::to_string(line_no) + ": bad shape");
        m.entries.push_back(std::move(e));
    }
    return m;
}

void write_manifest(const Manifest& manifest) {
    std::string text;
    for (const auto& e : manifest.entries) {
        text += e.file + " " + shape_key(e.shape) + " " + e.bucket.key() + " " + hex64(e.checksum) + "\n";
    }
    write_file(manifest.root / kManifestName,
               std::span<const std::uint8_t>(reinterpret_cast<const std::uint8_t*>(text.data()), text.size()));
}

Manifest make_dataset(std::int64_t n_scenes, std::uint64_t seed, const std::filesystem::path& out_dir,
                      const std::vector<Bucket>& buckets, std::int64_t views) {
    if (n_scenes < 1) throw std::invalid_argument("make_dataset: n_scenes must be >= 1");
    if (buckets.empty()) throw std::invalid_argument("make_dataset: at least one bucket required");
    if (views < 1) throw std::invalid_argument("make_dataset: views must be >= 1");
    std::filesystem::create_directories(out_dir);
    Manifest m;
    m.root = out_dir;
    for (std::int64_t i = 0; i < n_scenes; ++i) {
        const auto& bucket = buckets[static_cast<std::size_t>(i) % buckets.size()];
        const auto spec =
            random_scene_spec(derive_seed(seed, static_cast<std::uint64_t>(i)), {views, bucket.frames, bucket.height,
                                                                                  bucket.width});
        const auto bytes = encode_scene(scene_file(generate_scene(spec)));
        char name[32];
        std::snprintf(name, sizeof(name), "scene_%05lld.toyw", static_cast<long long>(i));
        write_file(out_dir / name, bytes);
        m.entries.push_back({name, {views, bucket.frames, 3, bucket.height, bucket.width}, bucket, fnv1a64(bytes)});
    }
    write_manifest(m);
    return m;
}

}  // namespace mvdit::toyworld

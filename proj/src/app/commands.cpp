// Copyright (c) 2026 The mvdit Authors
// SPDX-License-Identifier: Apache-2.0

#include "mvdit/app/commands.hpp"

#include <cctype>
#include <iomanip>
#include <sstream>

#include "mvdit/app/contact_sheet.hpp"
#include "mvdit/codec/latent_codec.hpp"
#include "mvdit/toyworld/metrics.hpp"
#include "mvdit/util/binary_io.hpp"
#include "mvdit/util/rng.hpp"

namespace mvdit::app {

namespace fs = std::filesystem;
using toyworld::SceneFile;

flow::Guidance GuidanceFlags::resolve(const flow::Guidance& defaults, const conditioning::ConditionTriple& cond) const {
    flow::Guidance g = defaults;
    if (lambda_t) {
        g.caption = *lambda_t;
    } else if (const auto automatic = flow::Guidance::for_condition(cond); automatic.caption != flow::Guidance{}.caption) {
        g.caption = automatic.caption;
    }
    if (lambda_l) g.layout = *lambda_l;
    if (lambda_r) g.sketch = *lambda_r;
    return g;
}

SceneFile with_caption(SceneFile scene, const std::optional<std::string>& caption) {
    if (caption) scene.caption = *caption;
    return scene;
}

std::string with_weather(const std::string& caption, const std::string& weather) {
    std::istringstream in(caption);
    std::string word;
    std::vector<std::string> words;
    while (in >> word) words.push_back(word);
    if (words.size() < 2) throw UsageError("caption '" + caption + "' has no weather words to replace");
    std::string out = weather;
    for (std::size_t i = 2; i < words.size(); ++i) out += " " + words[i];
    return out;
}

namespace {

void check_scene_fits(const model::ModelConfig& c, const SceneFile& scene, const std::string& what) {
    const auto& s = scene.video.shape();
    if (s[0] != c.views || s[2] != model::ModelConfig::kPixelChannels || s[3] != c.height || s[4] != c.width ||
        s[1] > c.frames || s[1] % c.patch_t != 0) {
        throw UsageError(what + " has shape " + to_string(s) + ", which the model (V=" + std::to_string(c.views) +
                         ", T<=" + std::to_string(c.frames) + ", " + std::to_string(c.height) + "x" +
                         std::to_string(c.width) + ") cannot generate");
    }
}

void check_k(std::int64_t k, std::int64_t frames) {
    if (k < 0) throw UsageError("--k must be >= 0");
    if (k > frames) {
        throw UsageError("missing conditioning frames: the scene supplies " + std::to_string(frames) +
                         " frames but --k is " + std::to_string(k));
    }
    if (k >= frames) throw UsageError("--k must be smaller than the clip length " + std::to_string(frames));
}

void check_steps(std::int64_t steps) {
    if (steps < 1) throw UsageError("--steps must be >= 1");
}

Shape latent_clip_shape(const model::ModelConfig& c, std::int64_t frames) {
    auto s = c.latent_shape(frames);
    s.insert(s.begin(), 1);
    return s;
}

TensorF batched_latent(const codec::VideoTensor& video, std::int64_t factor) {
    auto z = codec::encode(video, factor);
    auto shape = z.shape();
    shape.insert(shape.begin(), 1);
    return TensorF::from(shape, z.values());
}

codec::VideoTensor decode_batched(const TensorF& z, std::int64_t factor) {
    Shape shape(z.shape().begin() + 1, z.shape().end());
    return codec::decode(TensorF::from(shape, z.values()), factor);
}

fs::path png_path(const fs::path& out) { return fs::path(out).replace_extension(".png"); }

void check_output(const fs::path& out) {
    if (out.empty()) throw UsageError("--out is required");
    const auto parent = fs::absolute(out).parent_path();
    if (!fs::is_directory(parent)) throw UsageError("output directory " + parent.string() + " does not exist");
}

void write_outputs(const fs::path& out, const SceneFile& scene) {
    const auto bytes = toyworld::encode_scene(scene);
    const auto png = encode_png(contact_sheet(scene.video));
    write_file(out, bytes);
    write_file(png_path(out), png);
}

std::string format_value(double v) {
    std::ostringstream s;
    s << std::setprecision(9) << v;
    return s.str();
}

}  // namespace

codec::VideoTensor generate_clip(const model::StditModel<float>& net, const SceneFile& scene,
                                 const flow::SamplerConfig& sampler, std::int64_t k) {
    const auto& c = net.config();
    check_scene_fits(c, scene, "scene");
    const auto frames = scene.video.frames();
    check_k(k, frames);
    const auto cond = toyworld::scene_condition(scene);
    std::optional<TensorF> clamp;
    if (k > 0) clamp = batched_latent(scene.video, c.codec_factor);
    const auto z =
        flow::generate<float>(flow::velocity_of(net), cond, sampler, {k}, latent_clip_shape(c, frames), clamp);
    return decode_batched(z, c.codec_factor);
}

SceneFile cmd_sample(const SampleOptions& o, std::ostream& log) {
    check_output(o.out);
    const auto ckpt = load_checkpoint(o.checkpoint);
    const auto scene = with_caption(toyworld::read_scene(o.scene), o.caption);
    const auto& c = ckpt.config.model;
    check_scene_fits(c, scene, o.scene.string());
    const auto k = o.k.value_or(ckpt.config.sampler.k);
    check_k(k, scene.video.frames());
    flow::SamplerConfig sampler;
    sampler.steps = o.steps.value_or(ckpt.config.sampler.steps);
    check_steps(sampler.steps);
    sampler.seed = o.seed;
    sampler.guidance = o.guidance.resolve(ckpt.config.sampler.guidance, toyworld::scene_condition(scene));
    log << "sample steps=" << sampler.steps << " lambda_t=" << sampler.guidance->caption
        << " lambda_l=" << sampler.guidance->layout << " lambda_r=" << sampler.guidance->sketch << " k=" << k
        << " seed=" << o.seed << std::endl;

    const model::StditModel<float> net(c, ckpt.params);
    SceneFile out = scene;
    out.video = generate_clip(net, scene, sampler, k);
    write_outputs(o.out, out);
    return out;
}

SceneFile cmd_rollout(const RolloutOptions& o, std::ostream& log) {
    check_output(o.out);
    if (o.clips < 1) throw UsageError("--clips must be >= 1");
    if (o.scenes.empty()) throw UsageError("at least one --scene is required");
    const auto ckpt = load_checkpoint(o.checkpoint);
    const auto& c = ckpt.config.model;
    std::vector<SceneFile> scenes;
    for (const auto& p : o.scenes) {
        scenes.push_back(toyworld::read_scene(p));
        check_scene_fits(c, scenes.back(), p.string());
        if (scenes.back().video.shape() != scenes.front().video.shape()) {
            throw UsageError("scene " + p.string() + " differs in shape from the first scene");
        }
    }
    const auto T = scenes.front().video.frames();
    if (o.k < 0 || o.k >= T) throw UsageError("--k must lie in [0, " + std::to_string(T) + ")");
    flow::SamplerConfig sampler;
    sampler.steps = o.steps.value_or(ckpt.config.sampler.steps);
    check_steps(sampler.steps);
    sampler.seed = o.seed;

    std::vector<SceneFile> clip_scenes;
    std::vector<conditioning::ConditionTriple> conds;
    for (std::int64_t i = 0; i < o.clips; ++i) {
        auto s = scenes[std::min<std::size_t>(static_cast<std::size_t>(i), scenes.size() - 1)];
        if (!o.captions.empty()) s.caption = o.captions[std::min<std::size_t>(static_cast<std::size_t>(i), o.captions.size() - 1)];
        conds.push_back(toyworld::scene_condition(s));
        clip_scenes.push_back(std::move(s));
    }
    // Guidance is resolved per clip from its own caption.
    const model::StditModel<float> net(c, ckpt.params);
    std::vector<flow::Guidance> per_clip;
    for (const auto& cond : conds) per_clip.push_back(o.guidance.resolve(ckpt.config.sampler.guidance, cond));
    log << "rollout clips=" << o.clips << " k=" << o.k << " steps=" << sampler.steps << " seed=" << o.seed << std::endl;

    std::optional<TensorF> seed_frames;
    if (o.seed_frames && o.k > 0) seed_frames = batched_latent(scenes.front().video, c.codec_factor);
    const auto z = flow::rollout<float>(flow::velocity_of(net), conds, sampler, o.k, latent_clip_shape(c, T),
                                        seed_frames, per_clip);

    SceneFile out;
    out.video = decode_batched(z, c.codec_factor);
    const auto total = out.video.frames();
    const auto& first = clip_scenes.front();
    out.sketch = conditioning::RoadSketch::zeros(first.sketch.views, total, first.sketch.height, first.sketch.width);
    std::string caption;
    const auto plane = first.sketch.height * first.sketch.width;
    for (std::int64_t i = 0; i < o.clips; ++i) {
        const auto& s = clip_scenes[static_cast<std::size_t>(i)];
        if (i == 0 || s.caption != clip_scenes[static_cast<std::size_t>(i - 1)].caption) {
            caption += (caption.empty() ? "" : " / ") + s.caption;
        }
        const std::int64_t begin = i == 0 ? 0 : o.k;
        const std::int64_t offset = i * (T - o.k);
        for (const auto& e : s.layouts) {
            if (e.frame < begin) continue;
            auto moved = e;
            moved.frame = static_cast<std::uint16_t>(offset + e.frame);
            out.layouts.push_back(moved);
        }
        for (std::int64_t v = 0; v < s.sketch.views; ++v) {
            for (std::int64_t t = begin; t < T; ++t) {
                std::copy_n(s.sketch.bits.begin() + (v * T + t) * plane, plane,
                            out.sketch.bits.begin() + (v * total + offset + t) * plane);
            }
        }
    }
    out.caption = caption;
    write_outputs(o.out, out);
    return out;
}

std::string EvalReport::to_text() const {
    std::ostringstream s;
    s << "feat_dist=" << format_value(feat_dist) << "\n"
      << "layout_adherence=" << format_value(layout_adherence) << "\n"
      << "temp_consistency=" << format_value(temp_consistency) << "\n"
      << "background_intensity=" << format_value(background_intensity) << "\n"
      << "n=" << n << "\n"
      << "seed=" << seed << "\n"
      << "steps=" << steps << "\n"
      << "checkpoint_step=" << checkpoint_step << "\n";
    return s.str();
}

EvalReport cmd_eval(const EvalOptions& o, std::ostream& log) {
    if (o.n < static_cast<std::int64_t>(toyworld::kMinFeatureSet)) {
        throw UsageError("--n must be >= " + std::to_string(toyworld::kMinFeatureSet) + " for the feature distance");
    }
    const auto manifest = toyworld::read_manifest(o.dataset);
    if (o.n > static_cast<std::int64_t>(manifest.entries.size())) {
        throw UsageError("insufficient scenes: --n " + std::to_string(o.n) + " but the dataset holds " +
                         std::to_string(manifest.entries.size()));
    }
    std::optional<Checkpoint> ckpt;
    flow::SamplerConfig sampler;
    std::int64_t k = 0;
    if (!o.ground_truth) {
        ckpt = load_checkpoint(o.checkpoint);
        sampler.steps = o.steps.value_or(ckpt->config.sampler.steps);
        check_steps(sampler.steps);
        k = ckpt->config.sampler.k;
        const auto& c = ckpt->config.model;
        const auto first = manifest.entries.size() - static_cast<std::size_t>(o.n);
        for (std::size_t i = first; i < manifest.entries.size(); ++i) {
            const auto& s = manifest.entries[i].shape;
            if (s[0] != c.views || s[3] != c.height || s[4] != c.width || s[1] > c.frames || s[1] <= k) {
                throw UsageError("scene " + manifest.entries[i].file + " has shape " + to_string(s) +
                                 ", which the model cannot generate");
            }
        }
    }

    EvalReport report;
    report.n = o.n;
    report.seed = o.seed;
    report.steps = o.ground_truth ? 0 : sampler.steps;
    report.checkpoint_step = ckpt ? ckpt->step : -1;
    std::optional<model::StditModel<float>> net;
    if (ckpt) net.emplace(ckpt->config.model, ckpt->params);

    std::vector<codec::VideoTensor> generated, truth;
    double adherence_sum = 0, consistency_sum = 0, background_sum = 0;
    std::int64_t adherence_n = 0;
    const auto first = manifest.entries.size() - static_cast<std::size_t>(o.n);
    for (std::int64_t i = 0; i < o.n; ++i) {
        auto scene = with_caption(manifest.load(first + static_cast<std::size_t>(i)), o.caption);
        if (o.weather) scene.caption = with_weather(scene.caption, *o.weather);
        truth.push_back(scene.video);
        if (net) {
            auto s = sampler;
            s.seed = derive_seed(o.seed, static_cast<std::uint64_t>(i));
            s.guidance = o.guidance.resolve(ckpt->config.sampler.guidance, toyworld::scene_condition(scene));
            generated.push_back(generate_clip(*net, scene, s, k));
            log << "eval clip " << (i + 1) << "/" << o.n << std::endl;
        } else {
            generated.push_back(scene.video);
        }
        const auto& video = generated.back();
        if (!scene.layouts.empty()) {
            adherence_sum += toyworld::metric_layout_adherence(video, scene.layouts);
            ++adherence_n;
        }
        if (video.frames() >= 2) consistency_sum += toyworld::metric_temporal_consistency(video, o.seed);
        background_sum += toyworld::background_intensity(video, scene.layouts);
    }
    report.feat_dist = toyworld::metric_feature_distance(generated, truth, o.seed);
    report.layout_adherence = adherence_n ? adherence_sum / static_cast<double>(adherence_n) : 1.0;
    report.temp_consistency = consistency_sum / static_cast<double>(o.n);
    report.background_intensity = background_sum / static_cast<double>(o.n);
    return report;
}

std::string GradCheckReport::to_text() const {
    std::ostringstream s;
    for (const auto& g : groups) s << "group=" << g.group << " max_rel_err=" << format_value(g.max_error) << "\n";
    s << "max_rel_err=" << format_value(max_error) << " threshold=" << format_value(threshold)
      << " verdict=" << (passed() ? "PASS" : "FAIL") << "\n";
    return s.str();
}

namespace {

// "blocks.3.mlp.fc1.weight" -> "blocks.3", "embed.view" -> "embed".
std::string param_group(const std::string& name) {
    const auto dot = name.find('.');
    if (dot == std::string::npos) return name;
    const auto next = name.find('.', dot + 1);
    const auto second = name.substr(dot + 1, next == std::string::npos ? std::string::npos : next - dot - 1);
    const bool numeric = !second.empty() && std::all_of(second.begin(), second.end(), [](unsigned char ch) {
        return std::isdigit(ch) != 0;
    });
    return numeric ? name.substr(0, next) : name.substr(0, dot);
}

}  // namespace

GradCheckReport full_model_grad_check(const model::ModelConfig& config, std::uint64_t seed,
                                      const ad::GradCheckOptions& options) {
    config.validate();
    model::StditModel<double> net(config, derive_seed(seed, 0));
    model::randomize(net.params(), derive_seed(seed, 1), 0.1);
    const auto scene = toyworld::scene_file(toyworld::generate_scene(
        toyworld::random_scene_spec(derive_seed(seed, 2), {config.views, config.frames, config.height, config.width})));
    const auto zf = batched_latent(scene.video, config.codec_factor);
    flow::FlowBatch<double> batch{TensorD::from(zf.shape(), {zf.values().begin(), zf.values().end()}),
                                  {toyworld::scene_condition(scene)}};
    const auto velocity = flow::velocity_of(net);
    flow::LossOptions loss_options;
    loss_options.drop_conditions = false;
    auto f = [&] {
        auto rng = make_rng(seed, 3);
        return flow::rf_loss(velocity, batch, rng, loss_options);
    };
    std::vector<std::pair<std::string, TensorD>> leaves;
    for (const auto& e : net.params().entries()) leaves.emplace_back(e.name, e.tensor);
    GradCheckReport report;
    for (const auto& leaf : ad::grad_check_leaves(f, leaves, options)) {
        const auto group = param_group(leaf.name);
        if (report.groups.empty() || report.groups.back().group != group) report.groups.push_back({group, 0.0});
        report.groups.back().max_error = std::max(report.groups.back().max_error, leaf.max_error);
        report.max_error = std::max(report.max_error, leaf.max_error);
    }
    return report;
}

toyworld::Manifest cmd_make_dataset(const MakeDatasetOptions& o) {
    if (o.n < 1) throw UsageError("--n must be >= 1");
    if (o.views < 1) throw UsageError("--views must be >= 1");
    if (o.buckets.empty()) throw UsageError("at least one bucket is required");
    if (o.out.empty()) throw UsageError("--out is required");
    if (fs::exists(o.out) && !fs::is_directory(o.out)) throw UsageError(o.out.string() + " is not a directory");
    return toyworld::make_dataset(o.n, o.seed, o.out, o.buckets, o.views);
}

}  // namespace mvdit::app

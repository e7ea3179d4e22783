// Copyright (c) 2026 The mvdit Authors
// SPDX-License-Identifier: Apache-2.0

#include <gtest/gtest.h>

#include <unistd.h>

#include <atomic>
#include <functional>
#include <filesystem>
#include <fstream>
#include <regex>
#include <sstream>

#include "mvdit/app/checkpoint.hpp"
#include "mvdit/app/commands.hpp"
#include "mvdit/app/contact_sheet.hpp"
#include "mvdit/app/run_config.hpp"
#include "mvdit/app/trainer.hpp"
#include "mvdit/codec/latent_codec.hpp"
#include "mvdit/util/binary_io.hpp"

namespace fs = std::filesystem;
using namespace mvdit;
using namespace mvdit::app;

namespace {

class TempDir {
  public:
    TempDir() {
        static std::atomic<int> counter{0};
        path_ = fs::temp_directory_path() /
                ("mvdit_app_test_" + std::to_string(::getpid()) + "_" + std::to_string(counter++));
        fs::remove_all(path_);
        fs::create_directories(path_);
    }
    ~TempDir() { fs::remove_all(path_); }
    const fs::path& path() const { return path_; }
    fs::path operator/(const std::string& name) const { return path_ / name; }

  private:
    fs::path path_;
};

RunConfig micro_run(const fs::path& dataset, const fs::path& out_dir, std::int64_t frames = 4) {
    RunConfig c;
    c.model = model::micro_config();
    c.model.frames = frames;
    c.buckets = {{8, 8, frames}};
    c.train.steps = 2;
    c.train.log_every = 1;
    c.train.holdout = 0;
    c.dataset = dataset;
    c.out_dir = out_dir;
    return c;
}

toyworld::Manifest micro_dataset(const fs::path& dir, std::int64_t n, std::int64_t frames = 4) {
    return toyworld::make_dataset(n, 7, dir, {{8, 8, frames}}, 2);
}

bool mentions(const std::string& text, const std::string& needle) { return text.find(needle) != std::string::npos; }

std::string error_of(const std::function<void()>& fn) {
    try {
        fn();
    } catch (const std::exception& e) {
        return e.what();
    }
    return {};
}

}  // namespace

// ---- run config ----

TEST(RunConfig, DefaultIniRoundTrips) {
    RunConfig c;
    c.dataset = "/data/set";
    c.out_dir = "/runs/a";
    c.train.seed = 42;
    c.optimizer.lr = 3e-4;
    const auto back = parse_run_config(c.to_ini());
    EXPECT_EQ(back.snapshot(), c.snapshot());
    EXPECT_EQ(back.to_ini(), c.to_ini());
    EXPECT_EQ(back.dataset, c.dataset);
    EXPECT_EQ(back.out_dir, c.out_dir);
    EXPECT_DOUBLE_EQ(back.optimizer.lr, 3e-4);
}

TEST(RunConfig, MissingSectionsKeepDefaults) {
    const auto c = parse_run_config("[train]\nsteps = 5\n");
    EXPECT_EQ(c.train.steps, 5);
    EXPECT_EQ(c.model.blocks, RunConfig{}.model.blocks);
    EXPECT_EQ(c.sampler.steps, 30);
    EXPECT_DOUBLE_EQ(c.sampler.guidance.caption, 7.0);
    EXPECT_DOUBLE_EQ(c.sampler.guidance.layout, 2.0);
    EXPECT_DOUBLE_EQ(c.sampler.guidance.sketch, 2.0);
}

TEST(RunConfig, RelativePathsResolveAgainstConfigDir) {
    const auto c = parse_run_config("[data]\ndataset = ds\nout_dir = /abs/run\n", "/base");
    EXPECT_EQ(c.dataset, fs::path("/base/ds"));
    EXPECT_EQ(c.out_dir, fs::path("/abs/run"));
}

TEST(RunConfig, ParseProblemsReportedTogether) {
    const auto what = error_of([] { parse_run_config("[model]\nblocks = x\nwings = 2\n[bogus]\na = 1\n"); });
    EXPECT_TRUE(mentions(what, "model.blocks")) << what;
    EXPECT_TRUE(mentions(what, "model.wings")) << what;
    EXPECT_TRUE(mentions(what, "bogus")) << what;
}

TEST(RunConfig, EveryViolationListed) {
    RunConfig c;
    c.optimizer.lr = 0;
    c.train.batch_size = 0;
    c.train.log_every = 0;
    c.sampler.steps = 0;
    c.buckets = {{16, 16, 8}};
    const auto v = c.violations(true);
    auto has = [&](const std::string& s) {
        return std::any_of(v.begin(), v.end(), [&](const auto& x) { return mentions(x, s); });
    };
    EXPECT_TRUE(has("optimizer.lr"));
    EXPECT_TRUE(has("train.batch_size"));
    EXPECT_TRUE(has("train.log_every"));
    EXPECT_TRUE(has("sampler.steps"));
    EXPECT_TRUE(has("16x16/8"));
    EXPECT_TRUE(has("data.dataset"));
    EXPECT_TRUE(has("data.out_dir"));
    EXPECT_THROW(c.validate(), ConfigError);
    EXPECT_TRUE(RunConfig{}.violations(false).empty());
}

// ---- checkpoint ----

namespace {

Checkpoint filled_checkpoint() {
    auto ckpt = initial_checkpoint(micro_run("", ""));
    ckpt.step = 17;
    ckpt.optimizer_steps = 17;
    std::mt19937_64 rng(3);
    std::normal_distribution<float> n;
    for (const auto& e : ckpt.params.entries()) {
        ckpt.adam_m.emplace_back(static_cast<std::size_t>(e.tensor.numel()));
        ckpt.adam_v.emplace_back(static_cast<std::size_t>(e.tensor.numel()));
        for (auto& x : ckpt.adam_m.back()) x = n(rng);
        for (auto& x : ckpt.adam_v.back()) x = std::abs(n(rng));
    }
    return ckpt;
}

}  // namespace

TEST(Checkpoint, HeaderMagicAndVersion) {
    const auto bytes = encode_checkpoint(filled_checkpoint());
    ASSERT_GE(bytes.size(), 6u);
    EXPECT_EQ(std::string(bytes.begin(), bytes.begin() + 4), "MVDT");
    EXPECT_EQ(bytes[4] | (bytes[5] << 8), kCheckpointVersion);
}

TEST(Checkpoint, RoundTripIsBitwise) {
    const auto ckpt = filled_checkpoint();
    const auto bytes = encode_checkpoint(ckpt);
    const auto back = decode_checkpoint(bytes, ckpt.config.model);
    EXPECT_EQ(back.step, 17);
    EXPECT_EQ(back.optimizer_steps, 17);
    EXPECT_EQ(back.config.snapshot(), ckpt.config.snapshot());
    EXPECT_EQ(back.adam_m, ckpt.adam_m);
    EXPECT_EQ(back.adam_v, ckpt.adam_v);
    const auto& a = ckpt.params.entries();
    const auto& b = back.params.entries();
    ASSERT_EQ(a.size(), b.size());
    for (std::size_t i = 0; i < a.size(); ++i) {
        EXPECT_EQ(a[i].name, b[i].name);
        EXPECT_EQ(a[i].tensor.values(), b[i].tensor.values()) << a[i].name;
    }
    EXPECT_EQ(encode_checkpoint(back), bytes);
}

TEST(Checkpoint, CorruptionRejected) {
    const auto bytes = encode_checkpoint(filled_checkpoint());
    auto flipped = bytes;
    flipped[flipped.size() - 3] ^= 0x10;
    EXPECT_THROW(decode_checkpoint(flipped), FormatError);
    auto truncated = bytes;
    truncated.resize(bytes.size() - 4);
    EXPECT_THROW(decode_checkpoint(truncated), FormatError);
    auto longer = bytes;
    longer.push_back(0);
    EXPECT_THROW(decode_checkpoint(longer), FormatError);
    auto magic = bytes;
    magic[0] = 'X';
    EXPECT_THROW(decode_checkpoint(magic), FormatError);
}

TEST(Checkpoint, MismatchedModelRejected) {
    const auto bytes = encode_checkpoint(filled_checkpoint());
    auto other = model::micro_config();
    other.hidden = 32;
    EXPECT_THROW(decode_checkpoint(bytes, other), ConfigError);
}

// ---- training ----

TEST(Train, TwoStepsGiveStepCounterTwo) {
    TempDir dir;
    micro_dataset(dir / "data", 4);
    const auto config = micro_run(dir / "data", dir / "run");
    std::ostringstream log;
    const auto result = run_training(config, log);
    EXPECT_EQ(result.checkpoint.step, 2);
    const auto ckpt = load_checkpoint(dir / "run" / kLatestCheckpoint, config.model);
    EXPECT_EQ(ckpt.step, 2);
    EXPECT_EQ(ckpt.optimizer_steps, 2);
    EXPECT_TRUE(fs::exists(checkpoint_path(dir / "run", 2)));

    std::ifstream metrics(dir / "run" / kMetricsLog);
    const std::regex line_re(R"(step=\d+ loss=[0-9.eE+-]+ wall_ms=[0-9.]+)");
    std::string line;
    int lines = 0;
    while (std::getline(metrics, line)) {
        EXPECT_TRUE(std::regex_match(line, line_re)) << line;
        ++lines;
    }
    EXPECT_EQ(lines, 2);
    EXPECT_EQ(log.str().substr(0, 7), "step=0 ");
}

TEST(Train, SameConfigAndSeedGiveIdenticalCheckpoints) {
    TempDir dir;
    micro_dataset(dir / "data", 4);
    std::ostringstream log;
    run_training(micro_run(dir / "data", dir / "a"), log);
    run_training(micro_run(dir / "data", dir / "b"), log);
    auto other = micro_run(dir / "data", dir / "c");
    other.train.seed = 1;
    run_training(other, log);
    const auto a = read_file(dir / "a" / kLatestCheckpoint);
    EXPECT_EQ(a, read_file(dir / "b" / kLatestCheckpoint));
    EXPECT_NE(a, read_file(dir / "c" / kLatestCheckpoint));
}

TEST(Train, LossFallsOverTwoHundredSteps) {
    TempDir dir;
    micro_dataset(dir / "data", 4);
    auto config = micro_run(dir / "data", dir / "run");
    config.train.steps = 201;
    config.train.checkpoint_every = 1000;
    std::ostringstream log;
    const auto result = run_training(config, log);
    ASSERT_EQ(result.log.size(), 201u);
    EXPECT_LT(result.log[200].loss, result.log[0].loss);
    double head = 0, tail = 0;
    for (int i = 0; i < 20; ++i) {
        head += result.log[i].loss;
        tail += result.log[181 + i].loss;
    }
    EXPECT_LT(tail, head);
}

TEST(Train, InvalidInputsWriteNothing) {
    TempDir dir;
    std::ostringstream log;
    EXPECT_THROW(run_training(micro_run(dir / "missing", dir / "run"), log), ConfigError);
    EXPECT_FALSE(fs::exists(dir / "run"));

    micro_dataset(dir / "wide", 4, 2);
    auto config = micro_run(dir / "wide", dir / "run2");
    config.model.views = 3;
    const auto what = error_of([&] { run_training(config, log); });
    EXPECT_TRUE(mentions(what, "incompatible")) << what;
    EXPECT_FALSE(fs::exists(dir / "run2"));
}

// ---- sampling, rollout, evaluation ----

namespace {

struct SampleFixture {
    TempDir dir;
    fs::path checkpoint, scene;
    RunConfig config;

    explicit SampleFixture(std::int64_t frames = 4) {
        config = micro_run({}, {}, frames);
        micro_dataset(dir / "data", 2, frames);
        checkpoint = dir / "init.mvdt";
        auto ckpt = initial_checkpoint(config);
        save_checkpoint(checkpoint, ckpt);
        scene = dir / "data" / toyworld::read_manifest(dir / "data").entries[0].file;
    }
};

}  // namespace

TEST(Sample, DefaultGuidanceAndNightCaption) {
    SampleFixture f;
    SampleOptions o{.checkpoint = f.checkpoint, .scene = f.scene, .out = f.dir / "s.toyw"};
    o.steps = 2;
    std::ostringstream log;
    cmd_sample(o, log);
    EXPECT_TRUE(mentions(log.str(), "lambda_t=7 lambda_l=2 lambda_r=2")) << log.str();
    EXPECT_TRUE(fs::exists(f.dir / "s.png"));

    o.caption = "night dark busy highway";
    std::ostringstream night;
    const auto out = cmd_sample(o, night);
    EXPECT_EQ(out.caption, "night dark busy highway");
    EXPECT_TRUE(mentions(night.str(), "lambda_t=1 ")) << night.str();

    o.guidance.lambda_t = 4.5;
    std::ostringstream forced;
    cmd_sample(o, forced);
    EXPECT_TRUE(mentions(forced.str(), "lambda_t=4.5 ")) << forced.str();
}

TEST(Sample, SameSeedIsByteIdenticalAndSeedsDiffer) {
    SampleFixture f;
    SampleOptions o{.checkpoint = f.checkpoint, .scene = f.scene, .out = f.dir / "a.toyw"};
    o.steps = 3;
    std::ostringstream log;
    cmd_sample(o, log);
    o.out = f.dir / "b.toyw";
    cmd_sample(o, log);
    o.out = f.dir / "c.toyw";
    o.seed = 1;
    cmd_sample(o, log);
    const auto a = read_file(f.dir / "a.toyw");
    EXPECT_EQ(a, read_file(f.dir / "b.toyw"));
    EXPECT_EQ(read_file(f.dir / "a.png"), read_file(f.dir / "b.png"));
    EXPECT_NE(a, read_file(f.dir / "c.toyw"));
}

TEST(Sample, KeepsConditionsAndClampsFrames) {
    SampleFixture f;
    SampleOptions o{.checkpoint = f.checkpoint, .scene = f.scene, .out = f.dir / "k.toyw"};
    o.steps = 2;
    o.k = 2;
    std::ostringstream log;
    const auto out = cmd_sample(o, log);
    const auto src = toyworld::read_scene(f.scene);
    EXPECT_EQ(out.layouts, src.layouts);
    EXPECT_EQ(out.sketch.bits, src.sketch.bits);
    EXPECT_EQ(out.video.shape(), src.video.shape());
    const auto round = codec::decode(codec::encode(src.video, 2), 2);
    const auto& v = out.video.pixels();
    const auto& r = round.pixels();
    const auto frame = src.video.shape()[2] * src.video.shape()[3] * src.video.shape()[4];
    for (std::int64_t view = 0; view < 2; ++view) {
        for (std::int64_t i = 0; i < 2 * frame; ++i) {
            const auto at = static_cast<std::size_t>(view * 4 * frame + i);
            ASSERT_NEAR(v[at], r[at], 1e-5) << view << " " << i;
        }
    }
}

TEST(Sample, InvalidInputsWriteNothing) {
    SampleFixture f;
    std::ostringstream log;
    SampleOptions o{.checkpoint = f.checkpoint, .scene = f.scene, .out = f.dir / "x.toyw"};
    o.k = 5;
    EXPECT_TRUE(mentions(error_of([&] { cmd_sample(o, log); }), "missing conditioning frames"));
    o.k = 4;
    EXPECT_THROW(cmd_sample(o, log), UsageError);
    o.k.reset();
    o.steps = 0;
    EXPECT_THROW(cmd_sample(o, log), UsageError);
    o.steps.reset();
    o.out = f.dir / "nodir" / "x.toyw";
    EXPECT_THROW(cmd_sample(o, log), UsageError);
    o.out = f.dir / "x.toyw";
    o.checkpoint = f.dir / "absent.mvdt";
    EXPECT_THROW(cmd_sample(o, log), MissingFileError);
    EXPECT_FALSE(fs::exists(f.dir / "x.toyw"));
    EXPECT_FALSE(fs::exists(f.dir / "x.png"));
}

TEST(Rollout, OneClipMatchesSample) {
    SampleFixture f;
    std::ostringstream log;
    SampleOptions s{.checkpoint = f.checkpoint, .scene = f.scene, .out = f.dir / "s.toyw"};
    s.steps = 2;
    s.seed = 5;
    cmd_sample(s, log);
    RolloutOptions r{.checkpoint = f.checkpoint, .out = f.dir / "r.toyw", .scenes = {f.scene}};
    r.k = 2;
    r.steps = 2;
    r.seed = 5;
    cmd_rollout(r, log);
    EXPECT_EQ(read_file(f.dir / "s.toyw"), read_file(f.dir / "r.toyw"));
    EXPECT_EQ(read_file(f.dir / "s.png"), read_file(f.dir / "r.png"));
}

TEST(Rollout, ThreeClipsOfSixteenWithOverlapFourGiveFortyFrames) {
    SampleFixture f(16);
    std::ostringstream log;
    RolloutOptions r{.checkpoint = f.checkpoint, .out = f.dir / "r.toyw", .scenes = {f.scene}};
    r.clips = 3;
    r.k = 4;
    r.steps = 1;
    const auto out = cmd_rollout(r, log);
    EXPECT_EQ(out.video.frames(), 40);
    EXPECT_EQ(toyworld::read_scene(f.dir / "r.toyw").video.frames(), 40);
    for (const auto& e : out.layouts) EXPECT_LT(e.frame, 40);
    EXPECT_EQ(out.sketch.frames, 40);
}

TEST(Rollout, OverlapMustBeShorterThanClip) {
    SampleFixture f;
    std::ostringstream log;
    RolloutOptions r{.checkpoint = f.checkpoint, .out = f.dir / "r.toyw", .scenes = {f.scene}};
    r.clips = 2;
    r.k = 4;
    EXPECT_THROW(cmd_rollout(r, log), UsageError);
    r.k = -1;
    EXPECT_THROW(cmd_rollout(r, log), UsageError);
    r.k = 2;
    r.clips = 0;
    EXPECT_THROW(cmd_rollout(r, log), UsageError);
    EXPECT_FALSE(fs::exists(f.dir / "r.toyw"));
}

TEST(Rollout, CaptionsChangePerClip) {
    SampleFixture f;
    std::ostringstream log;
    RolloutOptions r{.checkpoint = f.checkpoint, .out = f.dir / "r.toyw", .scenes = {f.scene}};
    r.clips = 3;
    r.k = 2;
    r.steps = 1;
    r.captions = {"day clear busy highway", "night dark busy highway"};
    const auto out = cmd_rollout(r, log);
    EXPECT_EQ(out.caption, "day clear busy highway / night dark busy highway");
    EXPECT_EQ(out.video.frames(), 8);
}

TEST(Eval, GroundTruthScoresAndKeys) {
    TempDir dir;
    micro_dataset(dir / "data", 16);
    EvalOptions o{.dataset = dir / "data", .ground_truth = true};
    std::ostringstream log;
    const auto report = cmd_eval(o, log);
    EXPECT_LT(report.feat_dist, 1e-6);
    EXPECT_GT(report.layout_adherence, 1.0);
    EXPECT_EQ(report.n, 16);
    const auto text = report.to_text();
    for (const char* key : {"feat_dist=", "layout_adherence=", "temp_consistency=", "n=16", "seed=0"}) {
        EXPECT_TRUE(mentions(text, key)) << key;
    }
}

TEST(Eval, GeneratedClipsAreScored) {
    TempDir dir;
    micro_dataset(dir / "data", 16);
    const auto config = micro_run({}, {});
    save_checkpoint(dir / "c.mvdt", initial_checkpoint(config));
    EvalOptions o{.checkpoint = dir / "c.mvdt", .dataset = dir / "data"};
    o.steps = 1;
    std::ostringstream log;
    const auto a = cmd_eval(o, log);
    EXPECT_GT(a.feat_dist, 0);
    EXPECT_EQ(a.steps, 1);
    EXPECT_EQ(a.checkpoint_step, 0);
    EXPECT_EQ(cmd_eval(o, log).to_text(), a.to_text());
}

TEST(Eval, WeatherSwapKeepsDensityWords) {
    EXPECT_EQ(with_weather("day rain quiet highway", "night dark"), "night dark quiet highway");
    EXPECT_EQ(with_weather("night dark busy highway", "day clear"), "day clear busy highway");
    EXPECT_THROW(with_weather("day", "night dark"), UsageError);
}

TEST(Eval, InsufficientScenesRejected) {
    TempDir dir;
    micro_dataset(dir / "data", 4);
    EvalOptions o{.dataset = dir / "data", .ground_truth = true};
    std::ostringstream log;
    EXPECT_TRUE(mentions(error_of([&] { cmd_eval(o, log); }), "insufficient scenes"));
    o.n = 8;
    EXPECT_THROW(cmd_eval(o, log), UsageError);
}

// ---- gradient check ----

TEST(GradCheckCommand, MicroConfigPasses) {
    const auto report = full_model_grad_check(model::micro_config(), 0);
    EXPECT_TRUE(report.passed()) << report.to_text();
    const auto text = report.to_text();
    EXPECT_TRUE(mentions(text, "group=blocks.0")) << text;
    EXPECT_TRUE(mentions(text, "group=control")) << text;
    EXPECT_TRUE(mentions(text, "verdict=PASS")) << text;
}

TEST(GradCheckCommand, CorruptHookFails) {
    auto options = ad::kNetworkCheck;
    options.corrupt_analytic = 1.01;
    const auto report = full_model_grad_check(model::micro_config(), 0, options);
    EXPECT_FALSE(report.passed());
    EXPECT_TRUE(mentions(report.to_text(), "verdict=FAIL"));
}

// ---- dataset and contact sheet ----

TEST(MakeDataset, WritesScenesAndManifest) {
    TempDir dir;
    MakeDatasetOptions o{.n = 5, .seed = 3, .out = dir / "ds", .buckets = {{8, 8, 4}}, .views = 2};
    const auto m = cmd_make_dataset(o);
    EXPECT_EQ(m.entries.size(), 5u);
    EXPECT_EQ(toyworld::read_manifest(dir / "ds").entries.size(), 5u);
    o.n = 0;
    o.out = dir / "ds2";
    EXPECT_THROW(cmd_make_dataset(o), UsageError);
    EXPECT_FALSE(fs::exists(dir / "ds2"));
}

TEST(ContactSheet, GridOfViewsByFrames) {
    std::vector<float> pixels(2 * 3 * 3 * 4 * 5, 0.0f);
    pixels[0] = 1.0f;
    const codec::VideoTensor video({2, 3, 3, 4, 5}, pixels);
    const auto sheet = contact_sheet(video);
    EXPECT_EQ(sheet.width, 15);
    EXPECT_EQ(sheet.height, 8);
    EXPECT_EQ(sheet.rgb[0], 255);
    EXPECT_EQ(sheet.rgb[1], 0);
    const auto png = encode_png(sheet);
    ASSERT_GE(png.size(), 8u);
    EXPECT_EQ(png[1], 'P');
    EXPECT_EQ(png[2], 'N');
    EXPECT_EQ(png[3], 'G');
}

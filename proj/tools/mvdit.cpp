// Copyright (c) 2026 The mvdit Authors
// SPDX-License-Identifier: Apache-2.0

#include <CLI11.hpp>

#include <filesystem>
#include <iostream>

#include "mvdit/app/commands.hpp"
#include "mvdit/app/trainer.hpp"
#include "mvdit/tensor/tensor.hpp"
#include "mvdit/util/binary_io.hpp"

namespace fs = std::filesystem;
using namespace mvdit;

namespace {

// Exit codes: 0 success, 1 failed check or runtime error, 2 invalid input.
constexpr int kFailed = 1;
constexpr int kInvalid = 2;

void add_guidance(CLI::App* cmd, app::GuidanceFlags& g) {
    cmd->add_option("--lambda-t", g.lambda_t, "caption guidance (default 7.0, 1.0 for night captions)");
    cmd->add_option("--lambda-l", g.lambda_l, "layout guidance (default 2.0)");
    cmd->add_option("--lambda-r", g.lambda_r, "sketch guidance (default 2.0)");
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App cli{"Multi-view toy-world video diffusion transformer"};
    cli.require_subcommand(1);

    app::MakeDatasetOptions dataset_opts;
    std::vector<std::string> bucket_keys;
    auto* make_dataset = cli.add_subcommand("make-dataset", "render toy scenes and a manifest");
    make_dataset->add_option("--n", dataset_opts.n, "number of scenes")->capture_default_str();
    make_dataset->add_option("--seed", dataset_opts.seed, "dataset seed")->capture_default_str();
    make_dataset->add_option("--out", dataset_opts.out, "output directory")->required();
    make_dataset->add_option("--bucket", bucket_keys, "HxW/T bucket, repeatable (default 32x32/16 32x32/8)");
    make_dataset->add_option("--views", dataset_opts.views, "camera views")->capture_default_str();

    fs::path config_path;
    auto* train = cli.add_subcommand("train", "train from a config file");
    train->add_option("--config", config_path, "run config (INI)")->required();

    auto* default_config = cli.add_subcommand("default-config", "print the default run config");

    app::SampleOptions sample_opts;
    auto* sample = cli.add_subcommand("sample", "generate one clip for a scene's conditions");
    sample->add_option("--checkpoint", sample_opts.checkpoint)->required();
    sample->add_option("--scene", sample_opts.scene, "scene file supplying conditions and frames")->required();
    sample->add_option("--out", sample_opts.out, "output scene file; a .png contact sheet is written beside it")
        ->required();
    sample->add_option("--steps", sample_opts.steps, "Euler steps (default 30)");
    sample->add_option("--k", sample_opts.k, "frames clamped to the scene (default from config, 0)");
    sample->add_option("--seed", sample_opts.seed, "sampler seed")->capture_default_str();
    sample->add_option("--caption", sample_opts.caption, "replace the scene caption");
    add_guidance(sample, sample_opts.guidance);

    app::RolloutOptions rollout_opts;
    std::vector<fs::path> rollout_scenes;
    auto* rollout = cli.add_subcommand("rollout", "generate a long video clip by clip");
    rollout->add_option("--checkpoint", rollout_opts.checkpoint)->required();
    rollout->add_option("--scene", rollout_opts.scenes, "scene per clip, repeatable; the last repeats")->required();
    rollout->add_option("--caption", rollout_opts.captions, "caption per clip, repeatable; the last repeats");
    rollout->add_option("--clips", rollout_opts.clips)->capture_default_str();
    rollout->add_option("--k", rollout_opts.k, "overlap frames between clips")->capture_default_str();
    rollout->add_flag("--seed-frames", rollout_opts.seed_frames, "clamp clip 0 to the first scene's frames");
    rollout->add_option("--steps", rollout_opts.steps, "Euler steps (default 30)");
    rollout->add_option("--seed", rollout_opts.seed)->capture_default_str();
    rollout->add_option("--out", rollout_opts.out)->required();
    add_guidance(rollout, rollout_opts.guidance);

    app::EvalOptions eval_opts;
    auto* eval = cli.add_subcommand("eval", "score generated clips against held-out scenes");
    eval->add_option("--checkpoint", eval_opts.checkpoint);
    eval->add_option("--dataset", eval_opts.dataset)->required();
    eval->add_option("--n", eval_opts.n, "clips (the last n manifest entries)")->capture_default_str();
    eval->add_option("--seed", eval_opts.seed)->capture_default_str();
    eval->add_option("--steps", eval_opts.steps, "Euler steps (default from config)");
    eval->add_option("--caption", eval_opts.caption, "replace every caption");
    eval->add_option("--weather", eval_opts.weather, "replace the leading weather words, e.g. \"night dark\"");
    eval->add_flag("--ground-truth", eval_opts.ground_truth, "score the ground-truth clips themselves");
    add_guidance(eval, eval_opts.guidance);

    std::uint64_t gradcheck_seed = 0;
    double corrupt = 1.0;
    auto* gradcheck = cli.add_subcommand("gradcheck", "finite-difference check of the full model");
    gradcheck->add_option("--config", config_path, "run config whose [model] is checked (default micro config)");
    gradcheck->add_option("--seed", gradcheck_seed)->capture_default_str();
    gradcheck->add_option("--corrupt", corrupt, "test hook: scale analytic gradients")->group("");

    CLI11_PARSE(cli, argc, argv);

    try {
        if (*make_dataset) {
            if (!bucket_keys.empty()) {
                dataset_opts.buckets.clear();
                for (const auto& key : bucket_keys) dataset_opts.buckets.push_back(toyworld::Bucket::parse(key));
            }
            const auto manifest = app::cmd_make_dataset(dataset_opts);
            std::cout << "wrote " << manifest.entries.size() << " scenes to " << dataset_opts.out.string() << "\n";
        } else if (*train) {
            const auto config = app::load_run_config(config_path);
            const auto result = app::run_training(config, std::cout);
            std::cout << "checkpoint " << (config.out_dir / app::kLatestCheckpoint).string() << " step "
                      << result.checkpoint.step << "\n";
        } else if (*default_config) {
            app::RunConfig config;
            config.dataset = "dataset";
            config.out_dir = "run";
            std::cout << config.to_ini();
        } else if (*sample) {
            app::cmd_sample(sample_opts, std::cerr);
            std::cout << "wrote " << sample_opts.out.string() << "\n";
        } else if (*rollout) {
            const auto out = app::cmd_rollout(rollout_opts, std::cerr);
            std::cout << "wrote " << rollout_opts.out.string() << " frames=" << out.video.frames() << "\n";
        } else if (*eval) {
            if (!eval_opts.ground_truth && eval_opts.checkpoint.empty()) {
                throw app::UsageError("eval needs --checkpoint or --ground-truth");
            }
            std::cout << app::cmd_eval(eval_opts, std::cerr).to_text();
        } else if (*gradcheck) {
            auto model = model::micro_config();
            if (!config_path.empty()) model = app::load_run_config(config_path).model;
            auto options = ad::kNetworkCheck;
            options.corrupt_analytic = corrupt;
            const auto report = app::full_model_grad_check(model, gradcheck_seed, options);
            std::cout << report.to_text();
            return report.passed() ? 0 : kFailed;
        }
    } catch (const app::UsageError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kInvalid;
    } catch (const app::ConfigError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kInvalid;
    } catch (const FormatError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kInvalid;
    } catch (const MissingFileError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kInvalid;
    } catch (const std::invalid_argument& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kInvalid;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kFailed;
    }
    return 0;
}

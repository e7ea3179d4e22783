// Copyright (c) 2026 The mvdit Authors
// SPDX-License-Identifier: Apache-2.0

#include "mvdit/app/trainer.hpp"

#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <iomanip>
#include <sstream>

#include "mvdit/codec/latent_codec.hpp"
#include "mvdit/flow/flow.hpp"
#include "mvdit/model/stdit.hpp"
#include "mvdit/train/adam.hpp"
#include "mvdit/util/binary_io.hpp"
#include "mvdit/util/rng.hpp"

namespace mvdit::app {

namespace fs = std::filesystem;

const SceneCache::Item& SceneCache::get(std::size_t index) {
    auto it = items_.find(index);
    if (it != items_.end()) return it->second;
    const auto scene = manifest_.load(index);
    Item item{codec::encode(scene.video, codec_factor_), toyworld::scene_condition(scene)};
    return items_.emplace(index, std::move(item)).first->second;
}

std::vector<std::size_t> training_indices(const RunConfig& config, const toyworld::Manifest& manifest,
                                          const toyworld::Bucket& bucket) {
    const auto usable = manifest.entries.size() - std::min<std::size_t>(manifest.entries.size(),
                                                                          static_cast<std::size_t>(config.train.holdout));
    std::vector<std::size_t> out;
    for (auto i : manifest.in_bucket(bucket)) {
        if (i < usable) out.push_back(i);
    }
    return out;
}

std::vector<std::string> dataset_violations(const RunConfig& config, const toyworld::Manifest& manifest) {
    std::vector<std::string> out;
    const auto& m = config.model;
    for (const auto& e : manifest.entries) {
        const auto& s = e.shape;
        if (s.size() != 5 || s[0] != m.views || s[2] != model::ModelConfig::kPixelChannels || s[3] != m.height ||
            s[4] != m.width || s[1] > m.frames) {
            out.push_back("scene " + e.file + " has shape " + to_string(s) + ", incompatible with the model");
        }
    }
    for (const auto& b : config.buckets) {
        if (training_indices(config, manifest, b).empty()) {
            out.push_back("bucket " + b.key() + " has no training scenes (after holding out " +
                          std::to_string(config.train.holdout) + ")");
        }
    }
    return out;
}

fs::path checkpoint_path(const fs::path& out_dir, std::int64_t step) {
    char name[32];
    std::snprintf(name, sizeof(name), "step_%06lld.mvdt", static_cast<long long>(step));
    return out_dir / name;
}

Checkpoint initial_checkpoint(const RunConfig& config) {
    Checkpoint c;
    c.config = config;
    c.config.dataset.clear();
    c.config.out_dir.clear();
    c.params = model::init_params<float>(config.model, derive_seed(config.train.seed, 0));
    return c;
}

namespace {

std::string format_log(const TrainLogLine& line) {
    std::ostringstream s;
    s << "step=" << line.step << " loss=" << std::setprecision(9) << line.loss << " wall_ms=" << std::fixed
      << std::setprecision(1) << line.wall_ms;
    return s.str();
}

flow::FlowBatch<float> make_batch(SceneCache& cache, std::span<const std::size_t> picks) {
    flow::FlowBatch<float> batch;
    std::vector<float> data;
    Shape shape;
    for (auto i : picks) {
        const auto& item = cache.get(i);
        if (shape.empty()) {
            shape = item.latent.shape();
            shape.insert(shape.begin(), 0);
        }
        data.insert(data.end(), item.latent.values().begin(), item.latent.values().end());
        batch.conds.push_back(item.condition);
    }
    shape[0] = static_cast<std::int64_t>(picks.size());
    batch.clean = TensorF::from(shape, std::move(data));
    return batch;
}

}  // namespace

TrainResult run_training(const RunConfig& config, std::ostream& out) {
    config.validate();
    const auto manifest = toyworld::read_manifest(config.dataset);
    if (const auto v = dataset_violations(config, manifest); !v.empty()) {
        std::string message = "dataset does not fit the config:";
        for (const auto& p : v) message += "\n  - " + p;
        throw ConfigError(message);
    }
    fs::create_directories(config.out_dir);
    std::ofstream metrics(config.out_dir / kMetricsLog);

    TrainResult result;
    result.checkpoint = initial_checkpoint(config);
    auto& ckpt = result.checkpoint;
    model::StditModel<float> net(config.model, ckpt.params);
    std::vector<TensorF> leaves;
    for (const auto& e : net.params().entries()) leaves.push_back(e.tensor);
    train::Adam<float> adam(config.optimizer, leaves);
    const auto velocity = flow::velocity_of(net);

    SceneCache cache(manifest, config.model.codec_factor);
    std::vector<std::vector<std::size_t>> pools;
    for (const auto& b : config.buckets) pools.push_back(training_indices(config, manifest, b));
    auto data_rng = make_rng(config.train.seed, 1);
    auto loss_rng = make_rng(config.train.seed, 2);

    auto save = [&](std::int64_t step) {
        ckpt.step = step;
        ckpt.params = net.params();
        ckpt.optimizer_steps = adam.steps();
        ckpt.adam_m = adam.first_moment();
        ckpt.adam_v = adam.second_moment();
        const auto bytes = encode_checkpoint(ckpt);
        write_file(checkpoint_path(config.out_dir, step), bytes);
        write_file(config.out_dir / kLatestCheckpoint, bytes);
    };

    const auto start = std::chrono::steady_clock::now();
    for (std::int64_t step = 0; step < config.train.steps; ++step) {
        const auto& pool = pools[static_cast<std::size_t>(step) % pools.size()];
        std::vector<std::vector<float>> accum;
        double loss_sum = 0;
        for (std::int64_t micro = 0; micro < config.train.grad_accum; ++micro) {
            std::vector<std::size_t> picks;
            std::uniform_int_distribution<std::size_t> pick(0, pool.size() - 1);
            for (std::int64_t b = 0; b < config.train.batch_size; ++b) picks.push_back(pool[pick(data_rng)]);
            const auto batch = make_batch(cache, picks);
            TensorF loss;
            try {
                loss = flow::rf_loss(velocity, batch, loss_rng);
            } catch (const NumericError& e) {
                throw TrainingError("non-finite value at step " + std::to_string(step) + ": " + e.what());
            }
            const double value = loss.item();
            if (!std::isfinite(value)) throw TrainingError("non-finite loss at step " + std::to_string(step));
            loss_sum += value;
            auto grads = adam.collect(ad::backward(loss));
            if (accum.empty()) {
                accum = std::move(grads);
            } else {
                for (std::size_t i = 0; i < accum.size(); ++i) {
                    for (std::size_t j = 0; j < accum[i].size(); ++j) accum[i][j] += grads[i][j];
                }
            }
        }
        if (config.train.grad_accum > 1) {
            const float inv = 1.0f / static_cast<float>(config.train.grad_accum);
            for (auto& g : accum) {
                for (auto& x : g) x *= inv;
            }
        }
        for (const auto& g : accum) {
            for (float x : g) {
                if (!std::isfinite(x)) throw TrainingError("non-finite gradient at step " + std::to_string(step));
            }
        }
        adam.step(accum);
        const bool last = step + 1 == config.train.steps;
        if (step % config.train.log_every == 0 || last) {
            TrainLogLine line{step, loss_sum / static_cast<double>(config.train.grad_accum),
                              std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - start).count()};
            result.log.push_back(line);
            out << format_log(line) << std::endl;
            metrics << format_log(line) << std::endl;
        }
        if ((step + 1) % config.train.checkpoint_every == 0 && !last) save(step + 1);
    }
    save(config.train.steps);
    return result;
}

}  // namespace mvdit::app

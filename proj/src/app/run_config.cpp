// Copyright (c) 2026 The mvdit Authors
// SPDX-License-Identifier: Apache-2.0

#include "mvdit/app/run_config.hpp"

#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>

#include <charconv>
#include <fstream>
#include <functional>
#include <map>
#include <set>
#include <sstream>

namespace mvdit::app {

namespace fs = std::filesystem;
namespace pt = boost::property_tree;

namespace {

std::string format_double(double v) {
    char buf[64];
    const auto r = std::to_chars(buf, buf + sizeof(buf), v);
    return std::string(buf, r.ptr);
}

template <typename N>
bool parse_number(const std::string& text, N& out) {
    const auto* end = text.data() + text.size();
    const auto r = std::from_chars(text.data(), end, out);
    return r.ec == std::errc() && r.ptr == end;
}

// One key bound to a field, with its canonical rendering.
struct Field {
    std::function<bool(const std::string&)> parse;
    std::function<std::string()> render;
    bool is_path = false;
};

template <typename N>
Field number_field(N& v) {
    Field f;
    f.parse = [&v](const std::string& s) { return parse_number(s, v); };
    if constexpr (std::is_floating_point_v<N>) {
        f.render = [&v] { return format_double(v); };
    } else {
        f.render = [&v] { return std::to_string(v); };
    }
    return f;
}

Field path_field(fs::path& p, const fs::path& base) {
    Field f;
    f.parse = [&p, base](const std::string& s) {
        if (s.empty()) return false;
        p = fs::path(s);
        if (p.is_relative() && !base.empty()) p = base / p;
        p = p.lexically_normal();
        return true;
    };
    f.render = [&p] { return p.string(); };
    f.is_path = true;
    return f;
}

Field bucket_field(std::vector<toyworld::Bucket>& buckets) {
    Field f;
    f.parse = [&buckets](const std::string& s) {
        std::istringstream in(s);
        std::vector<toyworld::Bucket> parsed;
        std::string word;
        try {
            while (in >> word) parsed.push_back(toyworld::Bucket::parse(word));
        } catch (const std::invalid_argument&) {
            return false;
        }
        buckets = std::move(parsed);
        return true;
    };
    f.render = [&buckets] {
        std::string out;
        for (const auto& b : buckets) out += (out.empty() ? "" : " ") + b.key();
        return out;
    };
    return f;
}

using Schema = std::map<std::string, std::map<std::string, Field>>;

// Declaration order of sections and keys in rendered text.
const std::vector<std::pair<std::string, std::vector<std::string>>>& key_order() {
    static const std::vector<std::pair<std::string, std::vector<std::string>>> order{
        {"model",
         {"blocks", "hidden", "heads", "patch", "patch_t", "codec_factor", "views", "frames", "height", "width",
          "text_len", "max_instances", "control_depth", "mlp_ratio", "time_embed_dim", "category_dim",
          "instance_dim"}},
        {"optimizer", {"lr", "beta1", "beta2", "eps"}},
        {"train", {"batch_size", "grad_accum", "steps", "log_every", "checkpoint_every", "holdout", "seed"}},
        {"data", {"dataset", "out_dir", "buckets"}},
        {"sampler", {"steps", "lambda_t", "lambda_l", "lambda_r", "k"}},
    };
    return order;
}

Schema schema_of(RunConfig& c, const fs::path& base) {
    auto& m = c.model;
    Schema s;
    s["model"] = {{"blocks", number_field(m.blocks)},
                  {"hidden", number_field(m.hidden)},
                  {"heads", number_field(m.heads)},
                  {"patch", number_field(m.patch)},
                  {"patch_t", number_field(m.patch_t)},
                  {"codec_factor", number_field(m.codec_factor)},
                  {"views", number_field(m.views)},
                  {"frames", number_field(m.frames)},
                  {"height", number_field(m.height)},
                  {"width", number_field(m.width)},
                  {"text_len", number_field(m.text_len)},
                  {"max_instances", number_field(m.max_instances)},
                  {"control_depth", number_field(m.control_depth)},
                  {"mlp_ratio", number_field(m.mlp_ratio)},
                  {"time_embed_dim", number_field(m.time_embed_dim)},
                  {"category_dim", number_field(m.category_dim)},
                  {"instance_dim", number_field(m.instance_dim)}};
    s["optimizer"] = {{"lr", number_field(c.optimizer.lr)},
                      {"beta1", number_field(c.optimizer.beta1)},
                      {"beta2", number_field(c.optimizer.beta2)},
                      {"eps", number_field(c.optimizer.eps)}};
    s["train"] = {{"batch_size", number_field(c.train.batch_size)},
                  {"grad_accum", number_field(c.train.grad_accum)},
                  {"steps", number_field(c.train.steps)},
                  {"log_every", number_field(c.train.log_every)},
                  {"checkpoint_every", number_field(c.train.checkpoint_every)},
                  {"holdout", number_field(c.train.holdout)},
                  {"seed", number_field(c.train.seed)}};
    s["data"] = {{"dataset", path_field(c.dataset, base)},
                 {"out_dir", path_field(c.out_dir, base)},
                 {"buckets", bucket_field(c.buckets)}};
    s["sampler"] = {{"steps", number_field(c.sampler.steps)},
                    {"lambda_t", number_field(c.sampler.guidance.caption)},
                    {"lambda_l", number_field(c.sampler.guidance.layout)},
                    {"lambda_r", number_field(c.sampler.guidance.sketch)},
                    {"k", number_field(c.sampler.k)}};
    return s;
}

std::string render(const RunConfig& config, bool with_paths) {
    RunConfig copy = config;
    auto schema = schema_of(copy, {});
    std::string out;
    for (const auto& [section, keys] : key_order()) {
        out += "[" + section + "]\n";
        for (const auto& key : keys) {
            const auto& field = schema.at(section).at(key);
            if (field.is_path && !with_paths) continue;
            out += key + " = " + field.render() + "\n";
        }
    }
    return out;
}

}  // namespace

std::vector<std::string> RunConfig::violations(bool check_paths) const {
    std::vector<std::string> out;
    for (const auto& v : model.violations()) out.push_back("model: " + v);
    if (!(optimizer.lr > 0)) out.push_back("optimizer.lr must be > 0");
    if (!(optimizer.beta1 >= 0 && optimizer.beta1 < 1)) out.push_back("optimizer.beta1 must lie in [0, 1)");
    if (!(optimizer.beta2 >= 0 && optimizer.beta2 < 1)) out.push_back("optimizer.beta2 must lie in [0, 1)");
    if (!(optimizer.eps > 0)) out.push_back("optimizer.eps must be > 0");
    if (train.batch_size < 1) out.push_back("train.batch_size must be >= 1");
    if (train.grad_accum < 1) out.push_back("train.grad_accum must be >= 1");
    if (train.steps < 0) out.push_back("train.steps must be >= 0");
    if (train.log_every < 1) out.push_back("train.log_every must be >= 1");
    if (train.checkpoint_every < 1) out.push_back("train.checkpoint_every must be >= 1");
    if (train.holdout < 0) out.push_back("train.holdout must be >= 0");
    if (buckets.empty()) out.push_back("data.buckets must not be empty");
    for (const auto& b : buckets) {
        if (b.height != model.height || b.width != model.width) {
            out.push_back("bucket " + b.key() + " resolution differs from the model's " +
                          std::to_string(model.height) + "x" + std::to_string(model.width));
        }
        if (b.frames > model.frames || b.frames % model.patch_t != 0) {
            out.push_back("bucket " + b.key() + " frame count must be <= model.frames and divisible by patch_t");
        }
    }
    if (sampler.steps < 1) out.push_back("sampler.steps must be >= 1");
    if (sampler.k < 0 || sampler.k >= model.frames) out.push_back("sampler.k must lie in [0, model.frames)");
    if (check_paths) {
        if (dataset.empty()) {
            out.push_back("data.dataset is required");
        } else if (!fs::exists(dataset / toyworld::kManifestName)) {
            out.push_back("data.dataset " + dataset.string() + " has no " + toyworld::kManifestName);
        }
        if (out_dir.empty()) {
            out.push_back("data.out_dir is required");
        } else if (fs::exists(out_dir) && !fs::is_directory(out_dir)) {
            out.push_back("data.out_dir " + out_dir.string() + " is not a directory");
        }
    }
    return out;
}

void RunConfig::validate(bool check_paths) const {
    const auto problems = violations(check_paths);
    if (problems.empty()) return;
    std::string message = "invalid run config:";
    for (const auto& p : problems) message += "\n  - " + p;
    throw ConfigError(message);
}

std::string RunConfig::snapshot() const { return render(*this, false); }
std::string RunConfig::to_ini() const { return render(*this, true); }

RunConfig parse_run_config(const std::string& text, const fs::path& base_dir) {
    pt::ptree tree;
    try {
        std::istringstream in(text);
        pt::read_ini(in, tree);
    } catch (const pt::ini_parser_error& e) {
        throw ConfigError("invalid run config: " + std::string(e.what()));
    }
    RunConfig config;
    auto schema = schema_of(config, base_dir);
    std::vector<std::string> problems;
    for (const auto& [section, keys] : tree) {
        const auto sit = schema.find(section);
        if (sit == schema.end()) {
            problems.push_back(keys.empty() ? "unexpected top-level key " + section : "unknown section [" + section + "]");
            continue;
        }
        for (const auto& [key, node] : keys) {
            const auto fit = sit->second.find(key);
            if (fit == sit->second.end()) {
                problems.push_back("unknown key " + section + "." + key);
            } else if (!fit->second.parse(node.data())) {
                problems.push_back("cannot parse " + section + "." + key + " = '" + node.data() + "'");
            }
        }
    }
    if (!problems.empty()) {
        std::string message = "invalid run config:";
        for (const auto& p : problems) message += "\n  - " + p;
        throw ConfigError(message);
    }
    return config;
}

RunConfig load_run_config(const fs::path& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot read config " + path.string());
    std::stringstream buffer;
    buffer << in.rdbuf();
    return parse_run_config(buffer.str(), fs::absolute(path).parent_path());
}

}  // namespace mvdit::app

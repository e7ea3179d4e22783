// Copyright (c) 2026 The mvdit Authors
// SPDX-License-Identifier: Apache-2.0

#include "mvdit/toyworld/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <random>
#include <stdexcept>

#include "mvdit/util/rng.hpp"

namespace mvdit::toyworld {
namespace {

enum class Activation { kRelu, kTanh };

// 3x3, stride 2, zero padding 1.
struct ConvLayer {
    std::int64_t in = 0, out = 0;
    std::vector<float> weight;  // [out, in, 3, 3]

    ConvLayer() = default;
    ConvLayer(std::int64_t in_channels, std::int64_t out_channels, std::mt19937_64& rng, double gain)
        : in(in_channels), out(out_channels), weight(static_cast<std::size_t>(out_channels * in_channels * 9)) {
        std::normal_distribution<double> normal(0.0, std::sqrt(gain / static_cast<double>(in_channels * 9)));
        for (auto& w : weight) w = static_cast<float>(normal(rng));
    }

    // x [in, h, w] -> [out, ceil(h/2), ceil(w/2)]
    std::vector<float> apply(const std::vector<float>& x, std::int64_t h, std::int64_t w, Activation act) const {
        const auto oh = (h + 1) / 2, ow = (w + 1) / 2;
        std::vector<float> y(static_cast<std::size_t>(out * oh * ow), 0.0f);
        for (std::int64_t o = 0; o < out; ++o) {
            for (std::int64_t c = 0; c < in; ++c) {
                const float* k = weight.data() + (o * in + c) * 9;
                const float* src = x.data() + c * h * w;
                float* dst = y.data() + o * oh * ow;
                for (std::int64_t i = 0; i < oh; ++i) {
                    for (std::int64_t j = 0; j < ow; ++j) {
                        float acc = 0.0f;
                        for (std::int64_t di = 0; di < 3; ++di) {
                            const auto yy = 2 * i + di - 1;
                            if (yy < 0 || yy >= h) continue;
                            for (std::int64_t dj = 0; dj < 3; ++dj) {
                                const auto xx = 2 * j + dj - 1;
                                if (xx < 0 || xx >= w) continue;
                                acc += k[di * 3 + dj] * src[yy * w + xx];
                            }
                        }
                        dst[i * ow + j] += acc;
                    }
                }
            }
        }
        for (auto& v : y) v = act == Activation::kRelu ? std::max(v, 0.0f) : std::tanh(v);
        return y;
    }
};

struct Probe {
    ConvLayer first, second;
    Activation act;

    Probe(std::int64_t channels, std::int64_t mid, std::int64_t out, std::uint64_t seed, Activation a) : act(a) {
        std::mt19937_64 rng(seed);
        const double gain = a == Activation::kRelu ? 2.0 : 1.0;
        first = ConvLayer(channels, mid, rng, gain);
        second = ConvLayer(mid, out, rng, gain);
    }

    std::vector<float> operator()(const std::vector<float>& frame, std::int64_t h, std::int64_t w) const {
        const auto a = first.apply(frame, h, w, act);
        return second.apply(a, (h + 1) / 2, (w + 1) / 2, act);
    }
};

std::vector<float> frame_of(const codec::VideoTensor& video, std::int64_t v, std::int64_t t) {
    const auto size = video.channels() * video.height() * video.width();
    const auto begin = video.pixels().begin() + (v * video.frames() + t) * size;
    return {begin, begin + size};
}

double cosine(const std::vector<float>& a, const std::vector<float>& b) {
    double dot = 0, na = 0, nb = 0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        dot += static_cast<double>(a[i]) * b[i];
        na += static_cast<double>(a[i]) * a[i];
        nb += static_cast<double>(b[i]) * b[i];
    }
    if (na == 0 && nb == 0) return 1.0;
    if (na == 0 || nb == 0) return 0.0;
    return dot / std::sqrt(na * nb);
}

}  // namespace

std::vector<double> clip_features(const codec::VideoTensor& video, std::uint64_t probe_seed) {
    const Probe probe(video.channels(), 16, kClipFeatureDim, derive_seed(probe_seed, 0), Activation::kRelu);
    const auto h = video.height(), w = video.width();
    const auto area = ((h + 3) / 4) * ((w + 3) / 4);
    std::vector<double> out(static_cast<std::size_t>(kClipFeatureDim), 0.0);
    for (std::int64_t v = 0; v < video.views(); ++v) {
        for (std::int64_t t = 0; t < video.frames(); ++t) {
            const auto y = probe(frame_of(video, v, t), h, w);
            for (std::int64_t c = 0; c < kClipFeatureDim; ++c) {
                double s = 0;
                for (std::int64_t i = 0; i < area; ++i) s += y[static_cast<std::size_t>(c * area + i)];
                out[static_cast<std::size_t>(c)] += s / static_cast<double>(area);
            }
        }
    }
    for (auto& x : out) x /= static_cast<double>(video.views() * video.frames());
    return out;
}

FeatureStats feature_stats(std::span<const std::vector<double>> features) {
    if (features.empty()) throw std::invalid_argument("feature_stats: empty set");
    const auto d = features.front().size();
    FeatureStats s{std::vector<double>(d, 0.0), std::vector<double>(d, 0.0)};
    for (const auto& f : features) {
        if (f.size() != d) throw std::invalid_argument("feature_stats: ragged features");
        for (std::size_t i = 0; i < d; ++i) s.mean[i] += f[i];
    }
    for (auto& m : s.mean) m /= static_cast<double>(features.size());
    for (const auto& f : features) {
        for (std::size_t i = 0; i < d; ++i) s.var[i] += (f[i] - s.mean[i]) * (f[i] - s.mean[i]);
    }
    for (auto& v : s.var) v /= static_cast<double>(features.size());
    return s;
}

double frechet_diagonal(const FeatureStats& a, const FeatureStats& b) {
    if (a.mean.size() != b.mean.size()) throw std::invalid_argument("frechet_diagonal: dimension mismatch");
    double d = 0;
    for (std::size_t i = 0; i < a.mean.size(); ++i) {
        const double dm = a.mean[i] - b.mean[i];
        d += dm * dm + a.var[i] + b.var[i] - 2.0 * std::sqrt(a.var[i] * b.var[i]);
    }
    return std::max(d, 0.0);
}

double metric_feature_distance(std::span<const codec::VideoTensor> a, std::span<const codec::VideoTensor> b,
                               std::uint64_t probe_seed) {
    if (a.size() < kMinFeatureSet || b.size() < kMinFeatureSet) {
        throw std::invalid_argument("metric_feature_distance: need at least " + std::to_string(kMinFeatureSet) +
                                    " videos per set");
    }
    auto stats = [&](std::span<const codec::VideoTensor> set) {
        std::vector<std::vector<double>> f;
        for (const auto& v : set) f.push_back(clip_features(v, probe_seed));
        return feature_stats(f);
    };
    return frechet_diagonal(stats(a), stats(b));
}

std::vector<std::uint8_t> layout_coverage(const Shape& video_shape, std::span<const conditioning::LayoutEntry> layouts) {
    const auto V = video_shape[0], T = video_shape[1], H = video_shape[3], W = video_shape[4];
    std::vector<std::uint8_t> covered(static_cast<std::size_t>(V * T * H * W), 0);
    for (const auto& e : layouts) {
        if (e.view >= V || e.frame >= T) continue;
        std::uint8_t* plane = covered.data() + (e.view * T + e.frame) * H * W;
        const double cx = e.cx * W, cy = e.cy * H, half_l = 0.5 * e.sw * W, half_w = 0.5 * e.sh * H;
        const double c = std::cos(e.heading), s = std::sin(e.heading);
        for (std::int64_t y = 0; y < H; ++y) {
            for (std::int64_t x = 0; x < W; ++x) {
                const double dx = x + 0.5 - cx, dy = y + 0.5 - cy;
                if (std::abs(c * dx + s * dy) <= half_l && std::abs(-s * dx + c * dy) <= half_w) plane[y * W + x] = 1;
            }
        }
    }
    return covered;
}

double metric_layout_adherence(const codec::VideoTensor& video, std::span<const conditioning::LayoutEntry> layouts) {
    if (layouts.empty()) throw std::invalid_argument("metric_layout_adherence: empty layout set");
    const auto V = video.views(), T = video.frames(), C = video.channels(), H = video.height(), W = video.width();
    const auto covered = layout_coverage(video.shape(), layouts);
    double inside_sum = 0, outside_sum = 0;
    std::int64_t inside_n = 0, outside_n = 0;
    std::vector<float> channel(static_cast<std::size_t>(H * W));
    std::vector<float> background(static_cast<std::size_t>(C));
    for (std::int64_t v = 0; v < V; ++v) {
        for (std::int64_t t = 0; t < T; ++t) {
            const std::uint8_t* plane = covered.data() + (v * T + t) * H * W;
            for (std::int64_t ch = 0; ch < C; ++ch) {
                for (std::int64_t i = 0; i < H * W; ++i) {
                    channel[static_cast<std::size_t>(i)] = video.at(v, t, ch, i / W, i % W);
                }
                auto mid = channel.begin() + static_cast<std::ptrdiff_t>(channel.size() / 2);
                std::nth_element(channel.begin(), mid, channel.end());
                background[static_cast<std::size_t>(ch)] = *mid;
            }
            for (std::int64_t y = 0; y < H; ++y) {
                for (std::int64_t x = 0; x < W; ++x) {
                    double dev = 0;
                    for (std::int64_t ch = 0; ch < C; ++ch) {
                        dev += std::abs(video.at(v, t, ch, y, x) - background[static_cast<std::size_t>(ch)]);
                    }
                    dev /= static_cast<double>(C);
                    if (plane[y * W + x]) {
                        inside_sum += dev;
                        ++inside_n;
                    } else {
                        outside_sum += dev;
                        ++outside_n;
                    }
                }
            }
        }
    }
    if (inside_n == 0 || outside_n == 0) return 1.0;
    const double outside = outside_sum / static_cast<double>(outside_n);
    if (outside <= 1e-12) return 1.0;
    return (inside_sum / static_cast<double>(inside_n)) / outside;
}

double background_intensity(const codec::VideoTensor& video, std::span<const conditioning::LayoutEntry> layouts) {
    const auto covered = layout_coverage(video.shape(), layouts);
    const auto C = video.channels(), HW = video.height() * video.width();
    double sum = 0;
    std::int64_t n = 0;
    for (std::int64_t plane = 0; plane < video.views() * video.frames(); ++plane) {
        for (std::int64_t ch = 0; ch < C; ++ch) {
            const float* px = video.pixels().data() + (plane * C + ch) * HW;
            for (std::int64_t i = 0; i < HW; ++i) {
                if (covered[static_cast<std::size_t>(plane * HW + i)]) continue;
                sum += px[i];
                ++n;
            }
        }
    }
    return n ? sum / static_cast<double>(n) : 0.0;
}

double metric_temporal_consistency(const codec::VideoTensor& video, std::uint64_t probe_seed) {
    if (video.frames() < 2) throw std::invalid_argument("metric_temporal_consistency: needs at least two frames");
    const Probe probe(video.channels(), 8, 16, derive_seed(probe_seed, 1), Activation::kTanh);
    const auto C = video.channels(), h = video.height(), w = video.width();
    auto embed = [&](std::int64_t v, std::int64_t t) {
        auto frame = frame_of(video, v, t);
        for (std::int64_t c = 0; c < C; ++c) {
            const auto first = frame.begin() + c * h * w;
            double mean = 0;
            for (auto it = first; it != first + h * w; ++it) mean += *it;
            mean /= static_cast<double>(h * w);
            for (auto it = first; it != first + h * w; ++it) *it -= static_cast<float>(mean);
        }
        // 2x2 average pooling of the probe output.
        const auto y = probe(frame, h, w);
        const auto ph = (h + 3) / 4, pw = (w + 3) / 4;
        const auto channels = static_cast<std::int64_t>(y.size()) / (ph * pw);
        std::vector<float> pooled(static_cast<std::size_t>(channels * ((ph + 1) / 2) * ((pw + 1) / 2)), 0.0f);
        for (std::int64_t c = 0; c < channels; ++c) {
            for (std::int64_t i = 0; i < ph; ++i) {
                for (std::int64_t j = 0; j < pw; ++j) {
                    pooled[static_cast<std::size_t>((c * ((ph + 1) / 2) + i / 2) * ((pw + 1) / 2) + j / 2)] +=
                        0.25f * y[static_cast<std::size_t>((c * ph + i) * pw + j)];
                }
            }
        }
        return pooled;
    };
    double total = 0;
    for (std::int64_t v = 0; v < video.views(); ++v) {
        auto previous = embed(v, 0);
        for (std::int64_t t = 1; t < video.frames(); ++t) {
            auto current = embed(v, t);
            total += cosine(previous, current);
            previous = std::move(current);
        }
    }
    return total / static_cast<double>(video.views() * (video.frames() - 1));
}

}  // namespace mvdit::toyworld

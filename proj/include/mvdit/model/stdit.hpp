// Copyright (c) 2026 The mvdit Authors
// SPDX-License-Identifier: Apache-2.0
//
// Spatial-temporal DiT trunk with a sketch control branch.
//
// Token grids have logical axes (B, V, T', H', W', D). Latent batches are
// (B, V, T, C_lat, h, w).

#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "mvdit/conditioning/condition.hpp"
#include "mvdit/conditioning/encoders.hpp"
#include "mvdit/model/config.hpp"
#include "mvdit/model/param_store.hpp"
#include "mvdit/tensor/tensor.hpp"

namespace mvdit::model {

template <typename T>
struct AttentionWeights {
    Tensor<T> wq, bq, wk, wv, bv, wo, bo;
    std::int64_t heads = 1;
};

template <typename T>
struct BlockWeights {
    Tensor<T> ada_w, ada_b;
    AttentionWeights<T> spatial;
    // Undefined in control-branch blocks.
    std::optional<AttentionWeights<T>> temporal;
    std::optional<AttentionWeights<T>> cross;
    Tensor<T> fc1_w, fc1_b, fc2_w, fc2_b;
};

/// Per-sample modulation vectors, each [B, D].
template <typename T>
struct Modulation {
    Tensor<T> shift1, scale1, gate1, shift2, scale2, gate2;
};

/// Keys/values for joint cross-attention: [B*V*T', L_text + M_max, D] plus an
/// additive key mask of the same token count.
template <typename T>
struct CrossContext {
    Tensor<T> tokens;
    std::vector<T> mask;
};

template <typename T>
Tensor<T> self_attention(const Tensor<T>& seq, const AttentionWeights<T>& w, std::optional<double> logit_scale = {});

/// Attention outputs in grid layout, without the residual.
template <typename T>
Tensor<T> spatial_update(const Tensor<T>& grid, const AttentionWeights<T>& w, std::optional<double> logit_scale = {});
template <typename T>
Tensor<T> temporal_update(const Tensor<T>& grid, const AttentionWeights<T>& w, std::optional<double> logit_scale = {});
template <typename T>
Tensor<T> cross_update(const Tensor<T>& grid, const CrossContext<T>& context, const AttentionWeights<T>& w);

/// grid + attention over the V*H'*W' tokens of each (B, T') slice.
template <typename T>
Tensor<T> view_inflated_spatial_attention(const Tensor<T>& grid, const AttentionWeights<T>& w,
                                          std::optional<double> logit_scale = {});
/// grid + attention over T' for each (B, V, H', W') position.
template <typename T>
Tensor<T> temporal_attention(const Tensor<T>& grid, const AttentionWeights<T>& w,
                             std::optional<double> logit_scale = {});
/// grid + attention from the tokens of each (B, V, T') slice to its context row.
template <typename T>
Tensor<T> joint_cross_attention(const Tensor<T>& grid, const CrossContext<T>& context, const AttentionWeights<T>& w);

/// [B, dim] sinusoidal features of t * 1000; t must lie in [0, 1].
template <typename T>
Tensor<T> timestep_features(std::span<const double> t, std::int64_t dim);

/// Splits ada(c) into the six modulation vectors.
template <typename T>
Modulation<T> block_modulation(const Tensor<T>& c, const Tensor<T>& ada_w, const Tensor<T>& ada_b);

/// (B, V, T, C, h, w) -> (B, V, T', H', W', p_t*C*p*p), no projection.
template <typename T>
Tensor<T> patch_vectors(const Tensor<T>& latent, std::int64_t patch, std::int64_t patch_t);
/// Inverse of patch_vectors.
template <typename T>
Tensor<T> assemble_patches(const Tensor<T>& vectors, std::int64_t channels, std::int64_t patch,
                           std::int64_t patch_t);

/// Records intermediate values of one forward pass.
template <typename T>
struct ForwardTrace {
    std::vector<Tensor<T>> block_inputs;  // trunk activation entering block i
    std::vector<Tensor<T>> residuals;     // control residual for block i < K
    Tensor<T> sketch_tokens;
};

struct ParamSpec {
    enum class Init { kXavier, kZero, kEmbedding, kCopy };
    std::string name;
    Shape shape;
    Init init = Init::kXavier;
    std::string source;  // for kCopy
};

/// Canonical parameter order and shapes for a config.
std::vector<ParamSpec> parameter_layout(const ModelConfig& config);

template <typename T>
ParamStore<T> init_params(const ModelConfig& config, std::uint64_t seed);

template <typename T>
class StditModel {
  public:
    StditModel(ModelConfig config, std::uint64_t seed);
    /// Adopts existing parameters; names and shapes must match the config.
    StditModel(ModelConfig config, ParamStore<T> params);

    const ModelConfig& config() const { return config_; }
    const ParamStore<T>& params() const { return params_; }
    ParamStore<T>& params() { return params_; }

    Tensor<T> patchify(const Tensor<T>& latent) const;
    /// Linear projection D -> patch_dim, then reassembly to latent layout.
    Tensor<T> unpatchify(const Tensor<T>& grid) const;

    /// Sketch rasters (nullptr = φ) to a token grid shaped like the trunk's.
    Tensor<T> embed_sketch(std::span<const conditioning::RoadSketch* const> sketches, std::int64_t frames) const;

    /// gelu(time MLP(t)), [B, D]; feeds every adaLN affine.
    Tensor<T> timestep_conditioning(std::span<const double> t) const;
    Modulation<T> timestep_modulation(const Tensor<T>& c, std::int64_t block) const;

    CrossContext<T> cross_context(std::span<const conditioning::ConditionTriple> conds, std::int64_t frames) const;

    BlockWeights<T> trunk_block(std::int64_t i) const;
    BlockWeights<T> control_block(std::int64_t i) const;

    /// One branch block: returns (state_{i+1}, residual_i).
    std::pair<Tensor<T>, Tensor<T>> control_step(std::int64_t i, const Tensor<T>& state, const Tensor<T>& activation,
                                                 const Tensor<T>& c) const;
    /// Residuals for K trunk activations, starting from the sketch tokens.
    std::vector<Tensor<T>> control_forward(const std::vector<Tensor<T>>& activations, const Tensor<T>& sketch_tokens,
                                           const Tensor<T>& c) const;

    /// One trunk block; `residual` may be undefined.
    Tensor<T> block_forward(std::int64_t i, const Tensor<T>& x, const Modulation<T>& mod, const Tensor<T>& residual,
                            const CrossContext<T>& context) const;

    /// Velocity for a batch: x_t (B, V, T, C, h, w), one t and one condition per item.
    Tensor<T> forward(const Tensor<T>& x_t, std::span<const double> t,
                      std::span<const conditioning::ConditionTriple> conds, ForwardTrace<T>* trace = nullptr) const;

    conditioning::CaptionEncoderParams<T> caption_params() const;
    conditioning::LayoutEncoderParams<T> layout_params() const;

  private:
    AttentionWeights<T> attention(const std::string& prefix) const;
    BlockWeights<T> block_weights(const std::string& prefix, bool full) const;
    std::int64_t check_latent(const Tensor<T>& latent, const char* op) const;

    ModelConfig config_;
    ParamStore<T> params_;
};

extern template class StditModel<float>;
extern template class StditModel<double>;

}  // namespace mvdit::model

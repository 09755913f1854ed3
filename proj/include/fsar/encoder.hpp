// Copyright 2026 The fsar Authors
// SPDX-License-Identifier: Apache-2.0

// Frozen toy vision transformer with temporal, multimodal/spatiotemporal and
// joint adapters.

#pragma once

#include <cstddef>
#include <string>
#include <vector>

#include "fsar/config.hpp"
#include "fsar/param_registry.hpp"
#include "fsar/tensor.hpp"

namespace fsar {

enum class Init { kZeros, kOnes, kNormal };

struct ParamSpec {
  std::string name;
  Shape shape;
  ParamGroup group;
  bool frozen;
  Init init = Init::kZeros;
  /// Standard deviation for kNormal.
  double stddev = 0.0;
};

/// Every parameter the model materializes, in registration order.
std::vector<ParamSpec> parameter_layout(const ModelConfig& config);
/// parameter_layout plus the frozen text tower, which is accounted for but
/// never materialized.
std::vector<ParamSpec> census_layout(const ModelConfig& config);
/// Allocates and initializes every spec into `registry`.
void materialize(const std::vector<ParamSpec>& layout, ParamRegistry& registry, Rng& rng);

struct LinearParams {
  Tensor weight;  // [in, out]
  Tensor bias;    // [out]
  Tensor operator()(const Tensor& x) const { return linear(x, weight, bias); }
};

struct NormParams {
  Tensor gamma;
  Tensor beta;
  Tensor operator()(const Tensor& x) const { return layer_norm(x, gamma, beta); }
};

/// up(gelu(down(x))), plus x when has_skip.
struct AdapterParams {
  LinearParams down;
  LinearParams up;
  bool has_skip = false;
  Tensor operator()(const Tensor& x) const;
};

struct AttentionParams {
  LinearParams q, k, v, o;
  std::size_t heads = 1;
  /// x[B,S,D] -> [B,S,D]; no normalization, no residual.
  Tensor operator()(const Tensor& x, const std::vector<bool>& key_mask = {}) const;
  /// Cross form: queries from xq[B,Sq,D], keys/values from xkv[B,Sk,D].
  Tensor operator()(const Tensor& xq, const Tensor& xkv) const;
};

struct BlockParams {
  NormParams ln1, ln2;
  AttentionParams attn;
  LinearParams fc1, fc2;
  Tensor mlp(const Tensor& x) const { return fc2(gelu(fc1(x))); }
};

struct LayerAdapters {
  AdapterParams temporal;
  AdapterParams multimodal;
  AdapterParams joint;
};

struct FrozenIntermediates {
  Tensor msa;        // MSA(LN1 z)
  Tensor after_msa;  // z + msa
  Tensor mlp;        // MLP(LN2 after_msa)
  Tensor out;        // after_msa + mlp
};

/// Binds the transformer-layer parameters registered under `prefix`.
BlockParams bind_block(const ParamRegistry& registry, const std::string& prefix,
                       std::size_t heads);

class Encoder {
 public:
  /// Binds to parameters already materialized in `registry`.
  Encoder(const ModelConfig& config, const ParamRegistry& registry);

  const ModelConfig& config() const noexcept { return config_; }
  const BlockParams& block(std::size_t layer) const { return blocks_.at(layer); }
  const LayerAdapters& adapters(std::size_t layer) const { return adapters_.at(layer); }
  const LinearParams& fc_text() const noexcept { return fc_text_; }

  /// frames[T, N, patch_dim] -> tokens[T, N+1, D].
  Tensor patch_embed(const Tensor& frames) const;
  FrozenIntermediates frozen_block(const Tensor& z, std::size_t layer) const;

  /// cls[T, 1, D] -> [T, 1, D]; attention runs across the T frames.
  Tensor temporal_adapt(const Tensor& cls, std::size_t layer) const;
  /// text[D'] or [1, D'] -> [T, 1, D], T identical rows; T = 0 means the
  /// configured frame count.
  Tensor project_text(const Tensor& text, std::size_t frames = 0) const;
  /// [z'; x_TA; text] -> [T, N+3, D]. With mask_text the text token is hidden
  /// from every attention query.
  Tensor multimodal_adapt_support(const Tensor& z_after_msa, const Tensor& cls_adapted,
                                  const Tensor& text_proj, std::size_t layer,
                                  bool mask_text = false) const;
  /// [z'; x_TA] -> [T, N+2, D].
  Tensor spatiotemporal_adapt_query(const Tensor& z_after_msa, const Tensor& cls_adapted,
                                    std::size_t layer) const;
  /// Keeps the first N+1 tokens, then frozen MLP plus r-scaled joint adapter.
  Tensor joint_adapt(const Tensor& z_branch, std::size_t layer) const;

  /// Per-frame output features [T, D'].
  Tensor encode_support(const Tensor& frames, const Tensor& text) const;
  Tensor encode_query(const Tensor& frames) const;
  /// Adapter-free backbone.
  Tensor encode_frozen(const Tensor& frames) const;
  /// Final [class] tokens -> ln_post -> projection.
  Tensor output_features(const Tensor& z) const;

 private:
  Tensor encode(const Tensor& frames, const Tensor* text) const;

  ModelConfig config_;
  LinearParams patch_;
  Tensor cls_token_;
  Tensor pos_;
  std::vector<BlockParams> blocks_;
  std::vector<LayerAdapters> adapters_;
  LinearParams fc_text_;
  NormParams ln_post_;
  Tensor proj_;
};

}  // namespace fsar

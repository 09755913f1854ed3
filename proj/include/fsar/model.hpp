// Copyright 2026 The fsar Authors
// SPDX-License-Identifier: Apache-2.0

// Full episode forward pass: encoder, prototype construction, metric and
// text branches, losses.

#pragma once

#include <cstddef>
#include <memory>
#include <vector>

#include "fsar/config.hpp"
#include "fsar/data.hpp"
#include "fsar/encoder.hpp"
#include "fsar/metrics.hpp"
#include "fsar/param_registry.hpp"
#include "fsar/text_provider.hpp"
#include "fsar/tpcm.hpp"

namespace fsar {

struct EpisodeInputs {
  std::size_t way = 0;
  std::vector<Tensor> support_frames;  // each [T, N, patch_dim]
  std::vector<std::size_t> support_labels;
  std::vector<Tensor> query_frames;
  std::vector<std::size_t> query_labels;
  Tensor class_text;  // [way, D'], unit rows
};

/// Frames and class texts of a sampled episode. Training draws one prompt
/// template per class; evaluation uses the template average.
EpisodeInputs prepare_episode(const Episode& episode, const TextProvider& text, SampleMode mode,
                              Rng& rng);

struct EpisodeResult {
  LossTerms losses;
  std::vector<ScoreBundle> bundles;  // one per query
  std::vector<std::size_t> predictions;
  std::size_t correct = 0;
};

class Model {
 public:
  explicit Model(const RunConfig& config);
  Model(const Model&) = delete;
  Model& operator=(const Model&) = delete;

  const RunConfig& config() const noexcept { return config_; }
  ParamRegistry& params() noexcept { return registry_; }
  const ParamRegistry& params() const noexcept { return registry_; }
  const Encoder& encoder() const noexcept { return *encoder_; }
  /// Null when prototype construction is disabled.
  const Tpcm* tpcm() const noexcept { return tpcm_.get(); }
  const MetricDescriptor& metric() const noexcept { return *metric_; }

  EpisodeResult forward(const EpisodeInputs& inputs) const;

 private:
  RunConfig config_;
  ParamRegistry registry_;
  std::unique_ptr<Encoder> encoder_;
  std::unique_ptr<Tpcm> tpcm_;
  const MetricDescriptor* metric_ = nullptr;
};

}  // namespace fsar

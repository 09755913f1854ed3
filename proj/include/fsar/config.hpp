// Copyright 2026 The fsar Authors
// SPDX-License-Identifier: Apache-2.0

// Run configuration and its `key = value` text form.

#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "fsar/data.hpp"

namespace fsar {

struct ModelConfig {
  std::size_t layers = 2;
  std::size_t dim = 32;
  std::size_t heads = 4;
  std::size_t patch_tokens = 4;
  /// Feature length of one input patch.
  std::size_t patch_dim = 12;
  std::size_t frames = 4;
  std::size_t text_dim = 16;
  std::size_t mlp_ratio = 4;
  double adapter_ratio = 0.25;
  double joint_scale_r = 0.5;
  bool joint_skip = false;
  bool proj_trainable = false;
  std::size_t tpcm_heads = 1;

  bool use_adapters = true;
  bool use_tpcm = true;
  /// Support branch consumes projected text tokens; off means the support
  /// branch runs the query-style spatiotemporal path.
  bool text_injection = true;

  /// Frozen text tower shape; census accounting only.
  std::size_t text_layers = 0;
  std::size_t text_width = 0;
  std::size_t text_vocab = 0;
  std::size_t text_context = 0;

  std::uint64_t seed = 1;

  std::size_t bottleneck() const;
  /// Throws ConfigError on inconsistent values.
  void validate() const;
};

struct MetricConfig {
  std::string metric = "otam";
  double alpha = 0.5;
  /// Text-branch temperature.
  double tau = 0.07;
  /// Distance-to-probability temperature.
  double tau_d = 0.1;
  /// OTAM soft-min temperature.
  double lambda = 0.1;
  std::vector<std::size_t> omega{2};
  double trx_temperature = 0.1;
  double label_smoothing = 0.0;

  void validate() const;
};

struct DataConfig {
  /// Embedding file; empty means synthetic data.
  std::filesystem::path path;
  SynthConfig synth;
  /// Template perturbation of the frozen text provider.
  double template_spread = 0.3;
};

struct RunConfig {
  ModelConfig model;
  MetricConfig metric;
  DataConfig data;
  EpisodeSpec episode;
  std::size_t episodes_train = 1000;
  std::size_t episodes_eval = 1000;
  double lr = 1e-3;
  std::vector<std::size_t> milestones{};
  double gamma = 0.1;
  std::uint64_t seed = 1;
  std::size_t workers = 0;  // 0 = hardware concurrency
  std::filesystem::path output = "run";

  void validate() const;
};

/// Parses `key = value` lines; `#` starts a comment. Unknown keys and
/// malformed values raise ConfigError naming the line.
RunConfig parse_config(const std::string& text);
RunConfig load_config(const std::filesystem::path& path);
/// Canonical text form; parse_config(dump_config(c)) reproduces c.
std::string dump_config(const RunConfig& config);

}  // namespace fsar

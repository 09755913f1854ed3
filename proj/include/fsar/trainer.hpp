// Copyright 2026 The fsar Authors
// SPDX-License-Identifier: Apache-2.0

// Optimizer, episodic training and evaluation, parameter census, checkpoints
// and reports.

#pragma once

#include <cstddef>
#include <filesystem>
#include <functional>
#include <string>
#include <vector>

#include "fsar/config.hpp"
#include "fsar/model.hpp"

namespace fsar {

/// Adam with bias correction. Frozen entries have no state and are never
/// touched.
class Adam {
 public:
  explicit Adam(ParamRegistry& params, double beta1 = 0.9, double beta2 = 0.999,
                double eps = 1e-8);
  /// Applies one update from the accumulated gradients. Throws ContractError
  /// when the trainable set changed shape since construction.
  void step(double lr);
  std::size_t steps() const noexcept { return t_; }

 private:
  struct Slot {
    std::size_t entry;
    std::vector<double> m;
    std::vector<double> v;
  };
  ParamRegistry& params_;
  double beta1_, beta2_, eps_;
  std::size_t t_ = 0;
  std::vector<Slot> slots_;
};

/// Learning rate multiplied by gamma at every milestone reached.
struct MultiStepLr {
  double base = 1e-3;
  double gamma = 0.1;
  std::vector<std::size_t> milestones;
  double at(std::size_t episode) const;
};

struct TrainLogRow {
  std::size_t episode = 0;
  double lr = 0.0;
  double loss = 0.0;
  double q2s = 0.0;
  double s2t = 0.0;
  double q2t = 0.0;
  std::size_t correct = 0;
  std::size_t queries = 0;
};

DatasetManifest load_dataset(const RunConfig& config);
TextProvider make_text_provider(const RunConfig& config, const DatasetManifest& manifest);

using TrainCallback = std::function<void(const TrainLogRow&)>;

/// Runs config.episodes_train training episodes, one Adam step each.
/// Deterministic for a fixed configuration.
std::vector<TrainLogRow> train(Model& model, const DatasetManifest& manifest,
                               const TextProvider& text, const TrainCallback& on_episode = {});

struct EpisodeRecord {
  std::size_t index = 0;
  std::size_t correct = 0;
  std::size_t queries = 0;
  std::vector<std::size_t> labels;
  std::vector<std::size_t> predictions;
  std::vector<std::vector<double>> p;  // fused distribution per query
};

struct CensusGroup {
  std::string name;
  std::size_t total = 0;
  std::size_t tunable = 0;
};

struct Census {
  std::size_t total = 0;
  std::size_t tunable = 0;
  std::vector<CensusGroup> groups;
  double ratio() const { return total ? static_cast<double>(tunable) / total : 0.0; }
};

/// Counts from the declared layout, including the frozen text tower.
Census param_census(const ModelConfig& config);
/// Counts of a live registry (materialized parameters only).
Census param_census(const ParamRegistry& params);

struct EvalReport {
  double accuracy = 0.0;
  double ci95 = 0.0;
  std::vector<EpisodeRecord> episodes;
  Census census;
  RunConfig config;
};

/// Samples `episodes` episodes from `split` in evaluation mode; episode i
/// uses an RNG seeded from (config.seed, i), so results do not depend on the
/// worker count.
EvalReport evaluate(const Model& model, const DatasetManifest& manifest, const TextProvider& text,
                    std::size_t episodes, Split split = Split::kTest);

/// Mean and 1.96 * sample std / sqrt(n) of per-episode accuracies.
std::pair<double, double> mean_ci95(const std::vector<double>& values);

inline constexpr std::uint16_t kCheckpointVersion = 1;
/// "FSCK" | u16 version | u32 count | per tensor: u16 name length, name,
/// u8 rank, u32 extents, f32 payload. Little-endian.
void save_checkpoint(const std::filesystem::path& path, const ParamRegistry& params);
/// Names and shapes must match the registry exactly.
void load_checkpoint(const std::filesystem::path& path, ParamRegistry& params);

std::string report_json(const EvalReport& report, bool include_episodes = false);
void write_episode_csv(const std::filesystem::path& path, const EvalReport& report);
void write_train_log(const std::filesystem::path& path, const std::vector<TrainLogRow>& log);

}  // namespace fsar

// Copyright 2026 The fsar Authors
// SPDX-License-Identifier: Apache-2.0

// Video records, dataset manifests, TSN frame selection and episodic sampling.

#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <map>
#include <random>
#include <string>
#include <string_view>
#include <vector>

#include "fsar/tensor.hpp"

namespace fsar {

using Rng = std::mt19937_64;

enum class Split { kTrain, kVal, kTest };
enum class SampleMode { kTrain, kEval };

std::string_view to_string(Split split);
/// Throws InputError for anything but train/val/test.
Split parse_split(std::string_view text);

/// Spatial layout of one frame: rows x cols patches of `dim` features each.
struct GridShape {
  std::uint16_t rows = 0;
  std::uint16_t cols = 0;
  std::uint16_t dim = 0;

  std::size_t patches() const { return std::size_t{rows} * cols; }
  std::size_t frame_size() const { return patches() * dim; }
  friend bool operator==(const GridShape&, const GridShape&) = default;
};

std::string to_string(const GridShape& grid);

struct VideoRecord {
  std::uint32_t class_id = 0;
  std::uint16_t frame_count = 0;
  GridShape grid;
  /// frame_count * rows * cols * dim values, frame-major then row, col, feature.
  std::vector<float> payload;

  friend bool operator==(const VideoRecord&, const VideoRecord&) = default;
};

struct ClassInfo {
  std::string name;
  Split split = Split::kTrain;
  /// Deterministic hook for the text provider; derived from the name.
  std::uint64_t text_seed = 0;

  friend bool operator==(const ClassInfo&, const ClassInfo&) = default;
};

struct DatasetManifest {
  std::vector<VideoRecord> records;
  std::map<std::uint32_t, ClassInfo> classes;

  /// Class ids of one split in ascending order.
  std::vector<std::uint32_t> classes_in(Split split) const;
  /// Shared grid shape; throws InputError for an empty manifest.
  GridShape grid() const;
  /// Checks record/class consistency and the shared-grid invariant.
  void validate() const;

  friend bool operator==(const DatasetManifest&, const DatasetManifest&) = default;
};

/// 64-bit FNV-1a, used to turn class names into text seeds.
std::uint64_t fnv1a64(std::string_view text);

/// TSN frame selection: split [0, frame_count) into `frames` segments with
/// boundaries floor(frame_count * i / frames); training draws uniformly inside
/// each segment, evaluation takes start + floor(length / 2).
std::vector<std::size_t> tsn_sample(std::size_t frame_count, std::size_t frames, SampleMode mode,
                                    Rng& rng);

struct EpisodeVideo {
  const VideoRecord* record = nullptr;
  std::vector<std::size_t> frames;
  /// Episode-local class label in [0, way).
  std::size_t label = 0;
};

struct EpisodeSpec {
  std::size_t way = 5;
  std::size_t shot = 1;
  /// Query videos drawn per class.
  std::size_t queries = 1;
  std::size_t frames = 8;
};

/// One M-way K-shot task. Support videos are ordered by label, then shot.
struct Episode {
  EpisodeSpec spec;
  std::vector<std::uint32_t> class_ids;
  std::vector<std::uint64_t> class_text_seeds;
  std::vector<EpisodeVideo> support;
  std::vector<EpisodeVideo> query;
};

/// Throws ContractError if any Episode invariant is broken.
void validate(const Episode& episode);

Episode sample_episode(const DatasetManifest& manifest, const EpisodeSpec& spec, Split split,
                       SampleMode mode, Rng& rng);

/// Selected frames of one video as a [frames, patches, dim] tensor.
Tensor frames_tensor(const EpisodeVideo& video);

// ---------------------------------------------------------------------------
// Synthetic data

struct SynthConfig {
  std::size_t classes = 100;
  std::size_t videos_per_class = 20;
  std::size_t frames = 16;
  GridShape grid{2, 2, 12};
  std::uint64_t seed = 7;
  /// Per-frame isotropic noise; expected norm of the noise vector.
  double noise = 0.0;
  /// Expected norm of the static per-video nuisance vector (all patches).
  double background = 0.0;
  /// Scale of the class-specific linear temporal drift.
  double drift = 0.5;
  /// Dimension of the class latent, replicated in every patch; 0 means
  /// floor(dim / 2).
  std::size_t class_dims = 0;
};

std::size_t class_latent_dims(const SynthConfig& config);

/// Class latent direction (unit-scale) and drift direction derived from a text seed.
struct ClassLatent {
  std::vector<double> direction;
  std::vector<double> drift;
};
ClassLatent class_latent(std::uint64_t text_seed, std::size_t dims);

/// Class-wise 64/12/24 split of `classes` ids (ids in generation order).
std::vector<Split> class_split_plan(std::size_t classes);

DatasetManifest synth_dataset(const SynthConfig& config);

// ---------------------------------------------------------------------------
// Embedding files

inline constexpr std::uint16_t kEmbeddingFileVersion = 1;

/// Writes the binary embedding file and its `<path>.classes.tsv` sidecar.
void write_embedding_file(const std::filesystem::path& path, const DatasetManifest& manifest);
/// Reads an embedding file. Class names and splits come from the sidecar when
/// present; otherwise names are generated and classes split 64/12/24 by id.
DatasetManifest load_embedding_file(const std::filesystem::path& path);
std::filesystem::path sidecar_path(const std::filesystem::path& path);

}  // namespace fsar

// Copyright 2026 The fsar Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <cstdint>
#include <map>
#include <vector>

#include "fsar/data.hpp"

namespace fsar {

inline constexpr std::size_t kPromptTemplates = 18;

struct TextEmbedding {
  std::vector<double> vector;  // unit norm
  std::uint32_t class_id = 0;
  /// Template index, or -1 for the all-template average.
  int template_id = -1;
};

struct TextProviderConfig {
  std::size_t text_dim = 16;
  /// Extent of the class latents the frozen text tower reads.
  std::size_t latent_dims = 24;
  std::uint64_t seed = 1;
  /// Norm of the per-template perturbation relative to the class component.
  double template_spread = 0.3;
};

/// Frozen, language-free stand-in for a text encoder.
///
/// A class's text seed expands to the same latent the synthetic video
/// generator uses; a fixed random linear "text tower" maps that latent to the
/// joint space, and each of the 18 prompt templates adds its own frozen
/// perturbation before normalization.
class TextProvider {
 public:
  TextProvider(TextProviderConfig config, const DatasetManifest& manifest);

  const TextProviderConfig& config() const noexcept { return config_; }

  /// Throws InputError for unknown class ids or template indices.
  TextEmbedding template_embedding(std::uint32_t class_id, std::size_t template_id) const;
  /// Training draws one template uniformly; evaluation averages all 18 and
  /// renormalizes.
  TextEmbedding embed_class_text(std::uint32_t class_id, SampleMode mode, Rng& rng) const;

 private:
  TextProviderConfig config_;
  std::map<std::uint32_t, std::uint64_t> seeds_;
  std::vector<double> tower_;  // text_dim x latent_dims, row-major
};

}  // namespace fsar

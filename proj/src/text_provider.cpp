// Copyright 2026 The fsar Authors
// SPDX-License-Identifier: Apache-2.0

#include "fsar/text_provider.hpp"

#include <cmath>

#include "fsar/errors.hpp"

namespace fsar {

namespace {

void normalize(std::vector<double>& v) {
  double n = 0.0;
  for (double x : v) n += x * x;
  n = std::sqrt(n);
  if (n > 0.0)
    for (double& x : v) x /= n;
}

}  // namespace

TextProvider::TextProvider(TextProviderConfig config, const DatasetManifest& manifest)
    : config_(config) {
  if (config_.text_dim < 1 || config_.latent_dims < 1) {
    throw InputError("text provider dimensions must be >= 1");
  }
  for (const auto& [id, info] : manifest.classes) seeds_.emplace(id, info.text_seed);
  Rng rng(config_.seed * 0x2545f4914f6cdd1dull + 17);
  std::normal_distribution<double> nd(0.0, 1.0 / std::sqrt(static_cast<double>(config_.latent_dims)));
  tower_.resize(config_.text_dim * config_.latent_dims);
  for (auto& w : tower_) w = nd(rng);
}

TextEmbedding TextProvider::template_embedding(std::uint32_t class_id, std::size_t template_id) const {
  auto it = seeds_.find(class_id);
  if (it == seeds_.end()) throw InputError("unknown class id " + std::to_string(class_id));
  if (template_id >= kPromptTemplates) {
    throw InputError("template index " + std::to_string(template_id) + " out of range");
  }
  const auto latent = class_latent(it->second, config_.latent_dims).direction;
  std::vector<double> v(config_.text_dim, 0.0);
  for (std::size_t i = 0; i < config_.text_dim; ++i)
    for (std::size_t j = 0; j < config_.latent_dims; ++j)
      v[i] += tower_[i * config_.latent_dims + j] * latent[j];
  normalize(v);

  Rng rng(it->second ^ (0x9e3779b97f4a7c15ull * (template_id + 1)));
  std::normal_distribution<double> nd(0.0, 1.0 / std::sqrt(static_cast<double>(config_.text_dim)));
  for (double& x : v) x += config_.template_spread * nd(rng);
  normalize(v);
  return {std::move(v), class_id, static_cast<int>(template_id)};
}

TextEmbedding TextProvider::embed_class_text(std::uint32_t class_id, SampleMode mode, Rng& rng) const {
  if (mode == SampleMode::kTrain) {
    std::uniform_int_distribution<std::size_t> pick(0, kPromptTemplates - 1);
    return template_embedding(class_id, pick(rng));
  }
  std::vector<double> acc(config_.text_dim, 0.0);
  for (std::size_t t = 0; t < kPromptTemplates; ++t) {
    const auto e = template_embedding(class_id, t);
    for (std::size_t i = 0; i < acc.size(); ++i) acc[i] += e.vector[i];
  }
  for (double& x : acc) x /= static_cast<double>(kPromptTemplates);
  normalize(acc);
  return {std::move(acc), class_id, -1};
}

}  // namespace fsar

// Copyright 2026 The fsar Authors
// SPDX-License-Identifier: Apache-2.0

#include "fsar/model.hpp"

#include "fsar/errors.hpp"

namespace fsar {

EpisodeInputs prepare_episode(const Episode& episode, const TextProvider& text, SampleMode mode,
                              Rng& rng) {
  validate(episode);
  EpisodeInputs in;
  in.way = episode.spec.way;
  for (const auto& v : episode.support) {
    in.support_frames.push_back(frames_tensor(v));
    in.support_labels.push_back(v.label);
  }
  for (const auto& v : episode.query) {
    in.query_frames.push_back(frames_tensor(v));
    in.query_labels.push_back(v.label);
  }
  const std::size_t d = text.config().text_dim;
  std::vector<double> rows;
  rows.reserve(in.way * d);
  for (auto id : episode.class_ids) {
    const auto e = text.embed_class_text(id, mode, rng);
    rows.insert(rows.end(), e.vector.begin(), e.vector.end());
  }
  in.class_text = Tensor::from({in.way, d}, std::move(rows));
  return in;
}

Model::Model(const RunConfig& config) : config_(config) {
  config_.validate();
  Rng rng(config_.model.seed);
  materialize(parameter_layout(config_.model), registry_, rng);
  encoder_ = std::make_unique<Encoder>(config_.model, registry_);
  if (config_.model.use_tpcm) tpcm_ = std::make_unique<Tpcm>(config_.model, registry_);
  metric_ = &MetricRegistry::builtin().get(config_.metric.metric);
}

namespace {

Tensor stack_rows(const std::vector<Tensor>& rows) {
  std::vector<Tensor> r;
  r.reserve(rows.size());
  for (const auto& t : rows) r.push_back(reshape(t, {1, t.numel()}));
  return concat(r, 0);
}

std::vector<double> values(const Tensor& t) { return {t.data().begin(), t.data().end()}; }

}  // namespace

EpisodeResult Model::forward(const EpisodeInputs& in) const {
  const std::size_t m = in.way;
  const std::size_t dt = config_.model.text_dim;
  if (in.class_text.rank() != 2 || in.class_text.dim(0) != m || in.class_text.dim(1) != dt) {
    throw DimensionError("forward: class text " + to_string(in.class_text.shape()) + " is not [" +
                         std::to_string(m) + ", " + std::to_string(dt) + "]");
  }
  if (in.support_frames.empty() || in.query_frames.empty()) {
    throw ContractError("forward: episode has no support or no query videos");
  }

  std::vector<Tensor> class_text;
  for (std::size_t k = 0; k < m; ++k) class_text.push_back(slice(in.class_text, 0, k, k + 1));

  // Support features and per-class prototypes.
  std::vector<Tensor> support_avg;
  std::vector<std::vector<Tensor>> per_class(m);
  for (std::size_t k = 0; k < in.support_frames.size(); ++k) {
    const std::size_t y = in.support_labels[k];
    const Tensor f = encoder_->encode_support(in.support_frames[k], class_text[y]);
    support_avg.push_back(mean_axis(f, 0));
    per_class[y].push_back(tpcm_ ? tpcm_->enhance_support(f, class_text[y]) : f);
  }
  std::vector<Tensor> prototypes;
  for (std::size_t c = 0; c < m; ++c) prototypes.push_back(mean_prototype(per_class[c]));

  // Query features, distances and the visual branch.
  std::vector<Tensor> query_avg;
  std::vector<Tensor> neg_scaled;
  std::vector<std::vector<double>> distances(in.query_frames.size());
  for (std::size_t q = 0; q < in.query_frames.size(); ++q) {
    const Tensor f = encoder_->encode_query(in.query_frames[q]);
    query_avg.push_back(mean_axis(f, 0));
    const Tensor fq = tpcm_ ? tpcm_->enhance_query(f) : f;
    for (std::size_t c = 0; c < m; ++c) {
      const Tensor dist = metric_->distance(fq, prototypes[c], config_.metric);
      distances[q].push_back(dist.item());
      neg_scaled.push_back(scale(dist, -1.0 / config_.metric.tau_d));
    }
  }
  const std::size_t nq = in.query_frames.size();
  const Tensor q2s_logits = reshape(stack_rows(neg_scaled), {nq, m});

  // Text branch.
  const Tensor s2t_logits = text_logits(stack_rows(support_avg), in.class_text, config_.metric.tau);
  const Tensor q2t_logits = text_logits(stack_rows(query_avg), in.class_text, config_.metric.tau);

  EpisodeResult out;
  out.losses = combine_losses(
      cross_entropy(q2s_logits, in.query_labels),
      kl_to_target(s2t_logits, in.support_labels, config_.metric.label_smoothing),
      kl_to_target(q2t_logits, in.query_labels, config_.metric.label_smoothing),
      config_.metric.alpha);

  const auto s2t_cos = values(s2t_logits);
  const auto q2t_cos = values(q2t_logits);
  std::vector<double> s2t_sim(s2t_cos.size());
  for (std::size_t k = 0; k < s2t_cos.size(); ++k) s2t_sim[k] = s2t_cos[k] * config_.metric.tau;
  for (std::size_t q = 0; q < nq; ++q) {
    std::vector<double> sim(m);
    for (std::size_t c = 0; c < m; ++c) sim[c] = q2t_cos[q * m + c] * config_.metric.tau;
    out.bundles.push_back(make_score_bundle(distances[q], std::move(sim), s2t_sim, config_.metric));
    out.predictions.push_back(argmax(out.bundles.back().p));
    if (out.predictions.back() == in.query_labels[q]) ++out.correct;
  }
  return out;
}

}  // namespace fsar

// Copyright 2026 The fsar Authors
// SPDX-License-Identifier: Apache-2.0

// Temporal alignment metrics, the cosine text branch, losses and prediction
// fusion.

#pragma once

#include <cstddef>
#include <functional>
#include <string>
#include <string_view>
#include <vector>

#include "fsar/config.hpp"
#include "fsar/tensor.hpp"

namespace fsar {

/// Frame-pair cost 1 - cos(q_i, s_j): q[Tq, D], s[Ts, D] -> [Tq, Ts].
Tensor cosine_cost(const Tensor& q, const Tensor& s);

/// Rows scaled to unit L2 norm. Throws ContractError on a zero row.
Tensor normalize_rows(const Tensor& x);

// --- OTAM -----------------------------------------------------------------
//
// Alignment paths visit every support frame (column) exactly once; the query
// row index starts anywhere, ends anywhere and advances by 0 or 1 per column.
// Each path costs the sum of its cells. The soft form is the lambda-softmin
// over all such paths:
//   g(i, 0) = c(i, 0)
//   g(i, j) = c(i, j) + softmin(g(i, j-1), g(i-1, j-1))
//   D       = softmin_i g(i, Ts-1)

/// Soft-min alignment cost of a [Tq, Ts] cost matrix; differentiable.
Tensor otam_soft(const Tensor& cost, double lambda);
/// Hard-min alignment cost of a row-major [tq, ts] cost matrix.
double otam_hard(const std::vector<double>& cost, std::size_t tq, std::size_t ts);
/// Equal-length sequences required.
Tensor otam_distance(const Tensor& q, const Tensor& s, double lambda);
double otam_hard_distance(const Tensor& q, const Tensor& s);

// --- Bi-MHM ---------------------------------------------------------------

/// 0.5 * (mean_i min_j c(i, j) + mean_j min_i c(i, j)).
Tensor bimhm_from_cost(const Tensor& cost);
Tensor bimhm_distance(const Tensor& q, const Tensor& s);

// --- TRX ------------------------------------------------------------------

/// Strictly increasing index tuples of size `cardinality` over [0, frames),
/// lexicographic.
std::vector<std::vector<std::size_t>> ordered_tuples(std::size_t frames, std::size_t cardinality);
/// Tuple representations: concatenated unit-norm frames, [P, cardinality * D].
Tensor tuple_features(const Tensor& frames, std::size_t cardinality);
/// Each query tuple attends (cosine / temperature) over all support tuples;
/// distance = 1 - mean cosine(query tuple, reconstruction), averaged over
/// the cardinalities in `omega`.
Tensor trx_distance(const Tensor& q, const Tensor& s, const std::vector<std::size_t>& omega,
                    double temperature);

// --- Registry ---------------------------------------------------------------

using DistanceFn = std::function<Tensor(const Tensor& q, const Tensor& s, const MetricConfig&)>;

struct MetricDescriptor {
  std::string name;
  DistanceFn distance;
  bool differentiable = true;
};

class MetricRegistry {
 public:
  /// Throws ContractError for a duplicate name.
  void add(MetricDescriptor descriptor);
  const MetricDescriptor* find(std::string_view name) const;
  /// Throws ConfigError for an unknown name.
  const MetricDescriptor& get(std::string_view name) const;
  std::vector<std::string> names() const;

  /// otam, bimhm and trx.
  static const MetricRegistry& builtin();

 private:
  std::vector<MetricDescriptor> entries_;
};

// --- Text branch, losses, fusion ------------------------------------------

/// cos(features_i, text_m) / tau: features[n, D'], text[M, D'] -> [n, M].
Tensor text_logits(const Tensor& features, const Tensor& text, double tau);

/// Mean over rows of -log softmax(logits)[label].
Tensor cross_entropy(const Tensor& logits, const std::vector<std::size_t>& labels);
/// Mean over rows of KL(g || softmax(logits)), g one-hot at the label with
/// `smoothing` mass spread uniformly.
Tensor kl_to_target(const Tensor& logits, const std::vector<std::size_t>& labels,
                    double smoothing);

struct LossTerms {
  Tensor q2s;
  Tensor s2t;
  Tensor q2t;
  Tensor total;
};

/// total = alpha * 0.5 * (s2t + q2t) + (1 - alpha) * q2s. Throws ConfigError
/// unless alpha lies in [0, 1].
LossTerms combine_losses(Tensor q2s, Tensor s2t, Tensor q2t, double alpha);

/// alpha * p_q2t + (1 - alpha) * p_q2s.
std::vector<double> fuse_predictions(const std::vector<double>& p_q2t,
                                     const std::vector<double>& p_q2s, double alpha);

/// Max-subtracted softmax of a plain vector.
std::vector<double> softmax_values(const std::vector<double>& logits);

/// Scores of one query against the M episode classes.
struct ScoreBundle {
  std::vector<double> distances;        // D(q, prototype_m)
  std::vector<double> p_q2s;            // softmax(-D / tau_d)
  std::vector<double> query_text_sim;   // cos(F_Q avg, text_m)
  std::vector<double> p_q2t;            // softmax(sim / tau)
  std::vector<double> support_text_sim; // cos(F_S avg of support video k, text_m)
                                        // row-major [S, M]
  std::vector<double> p_s2t;            // row-wise softmax, [S, M]
  std::vector<double> p;                // fused
};

/// Builds every distribution of a bundle from raw distances and similarities.
ScoreBundle make_score_bundle(std::vector<double> distances, std::vector<double> query_text_sim,
                              std::vector<double> support_text_sim, const MetricConfig& config);

std::size_t argmax(const std::vector<double>& values);

}  // namespace fsar

// Copyright 2026 The fsar Authors
// SPDX-License-Identifier: Apache-2.0

#include "fsar/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "fsar/errors.hpp"

namespace fsar {

Tensor cosine_cost(const Tensor& q, const Tensor& s) {
  const Tensor cos = cosine_matrix(q, s);
  return sub(Tensor::full(cos.shape(), 1.0), cos);
}

Tensor normalize_rows(const Tensor& x) {
  if (x.rank() < 1) throw DimensionError("normalize_rows: scalar input");
  const std::size_t d = x.shape().back();
  const std::size_t rows = x.numel() / std::max<std::size_t>(d, 1);
  const auto in = x.data();
  std::vector<double> out(in.size());
  std::vector<double> norms(rows);
  for (std::size_t r = 0; r < rows; ++r) {
    double n = 0.0;
    for (std::size_t k = 0; k < d; ++k) n += in[r * d + k] * in[r * d + k];
    n = std::sqrt(n);
    if (n == 0.0) throw ContractError("normalize_rows: zero row " + std::to_string(r));
    norms[r] = n;
    for (std::size_t k = 0; k < d; ++k) out[r * d + k] = in[r * d + k] / n;
  }
  std::vector<double> unit = out;
  return make_result(x.shape(), std::move(out), {x},
                     [unit = std::move(unit), norms = std::move(norms), d, rows](
                         std::span<const double> g, std::span<double* const> in_grads) {
                       if (!in_grads[0]) return;
                       for (std::size_t r = 0; r < rows; ++r) {
                         double dot = 0.0;
                         for (std::size_t k = 0; k < d; ++k) dot += g[r * d + k] * unit[r * d + k];
                         for (std::size_t k = 0; k < d; ++k) {
                           in_grads[0][r * d + k] +=
                               (g[r * d + k] - dot * unit[r * d + k]) / norms[r];
                         }
                       }
                     });
}

// ---------------------------------------------------------------------------
// OTAM

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

double softmin2(double a, double b, double lambda) {
  const double m = std::min(a, b);
  if (m == kInf) return kInf;
  return m - lambda * std::log(std::exp(-(a - m) / lambda) + std::exp(-(b - m) / lambda));
}

double softmin_all(const double* v, std::size_t n, std::size_t stride, double lambda) {
  double m = kInf;
  for (std::size_t i = 0; i < n; ++i) m = std::min(m, v[i * stride]);
  if (m == kInf) return kInf;
  double s = 0.0;
  for (std::size_t i = 0; i < n; ++i) s += std::exp(-(v[i * stride] - m) / lambda);
  return m - lambda * std::log(s);
}

void check_cost(const Tensor& cost, const char* who) {
  if (cost.rank() != 2 || cost.dim(0) < 1 || cost.dim(1) < 1) {
    throw DimensionError(std::string(who) + ": cost must be a non-empty matrix, got " +
                         to_string(cost.shape()));
  }
}

void check_pair(const Tensor& q, const Tensor& s, const char* who) {
  if (q.rank() != 2 || s.rank() != 2 || q.dim(1) != s.dim(1)) {
    throw DimensionError(std::string(who) + ": sequences " + to_string(q.shape()) + " and " +
                         to_string(s.shape()) + " must be [T, D] with equal D");
  }
}

}  // namespace

Tensor otam_soft(const Tensor& cost, double lambda) {
  check_cost(cost, "otam_soft");
  if (!(lambda > 0.0)) throw ContractError("otam_soft: lambda must be > 0");
  const std::size_t tq = cost.dim(0);
  const std::size_t ts = cost.dim(1);
  const auto c = cost.data();
  const std::vector<double> cv(c.begin(), c.end());

  // g(i, j): best-so-far through cell (i, j), cost included.
  std::vector<double> g(tq * ts);
  for (std::size_t i = 0; i < tq; ++i) g[i * ts] = cv[i * ts];
  for (std::size_t j = 1; j < ts; ++j) {
    for (std::size_t i = 0; i < tq; ++i) {
      const double stay = g[i * ts + j - 1];
      const double step = i > 0 ? g[(i - 1) * ts + j - 1] : kInf;
      g[i * ts + j] = cv[i * ts + j] + softmin2(stay, step, lambda);
    }
  }
  const double result = softmin_all(&g[ts - 1], tq, ts, lambda);

  return make_result(
      {}, {result}, {cost},
      [cv, g = std::move(g), tq, ts, lambda, result](std::span<const double> og,
                                                      std::span<double* const> in_grads) {
        if (!in_grads[0]) return;
        // h(i, j): best continuation after cell (i, j), its cost excluded.
        std::vector<double> h(tq * ts, kInf);
        for (std::size_t i = 0; i < tq; ++i) h[i * ts + ts - 1] = 0.0;
        for (std::size_t j = ts - 1; j-- > 0;) {
          for (std::size_t i = 0; i < tq; ++i) {
            const double stay = cv[i * ts + j + 1] + h[i * ts + j + 1];
            const double step = i + 1 < tq ? cv[(i + 1) * ts + j + 1] + h[(i + 1) * ts + j + 1]
                                           : kInf;
            h[i * ts + j] = softmin2(stay, step, lambda);
          }
        }
        // Gibbs occupancy of each cell.
        for (std::size_t k = 0; k < tq * ts; ++k) {
          const double e = g[k] + h[k];
          if (e < kInf) in_grads[0][k] += og[0] * std::exp(-(e - result) / lambda);
        }
      });
}

double otam_hard(const std::vector<double>& cost, std::size_t tq, std::size_t ts) {
  if (tq < 1 || ts < 1 || cost.size() != tq * ts) {
    throw DimensionError("otam_hard: cost size " + std::to_string(cost.size()) + " is not " +
                         std::to_string(tq) + "x" + std::to_string(ts));
  }
  std::vector<double> g(tq * ts);
  for (std::size_t i = 0; i < tq; ++i) g[i * ts] = cost[i * ts];
  for (std::size_t j = 1; j < ts; ++j) {
    for (std::size_t i = 0; i < tq; ++i) {
      double best = g[i * ts + j - 1];
      if (i > 0) best = std::min(best, g[(i - 1) * ts + j - 1]);
      g[i * ts + j] = cost[i * ts + j] + best;
    }
  }
  double best = kInf;
  for (std::size_t i = 0; i < tq; ++i) best = std::min(best, g[i * ts + ts - 1]);
  return best;
}

Tensor otam_distance(const Tensor& q, const Tensor& s, double lambda) {
  check_pair(q, s, "otam_distance");
  if (q.dim(0) != s.dim(0)) {
    throw DimensionError("otam_distance: frame counts differ, " + to_string(q.shape()) + " vs " +
                         to_string(s.shape()));
  }
  return otam_soft(cosine_cost(q, s), lambda);
}

double otam_hard_distance(const Tensor& q, const Tensor& s) {
  check_pair(q, s, "otam_hard_distance");
  if (q.dim(0) != s.dim(0)) {
    throw DimensionError("otam_hard_distance: frame counts differ, " + to_string(q.shape()) +
                         " vs " + to_string(s.shape()));
  }
  NoGradGuard guard;
  const Tensor c = cosine_cost(q, s);
  return otam_hard({c.data().begin(), c.data().end()}, c.dim(0), c.dim(1));
}

// ---------------------------------------------------------------------------
// Bi-MHM

Tensor bimhm_from_cost(const Tensor& cost) {
  check_cost(cost, "bimhm_from_cost");
  const std::size_t tq = cost.dim(0);
  const std::size_t ts = cost.dim(1);
  const auto c = cost.data();
  std::vector<std::size_t> row_arg(tq), col_arg(ts);
  double fwd = 0.0, bwd = 0.0;
  for (std::size_t i = 0; i < tq; ++i) {
    std::size_t a = 0;
    for (std::size_t j = 1; j < ts; ++j)
      if (c[i * ts + j] < c[i * ts + a]) a = j;
    row_arg[i] = a;
    fwd += c[i * ts + a];
  }
  for (std::size_t j = 0; j < ts; ++j) {
    std::size_t a = 0;
    for (std::size_t i = 1; i < tq; ++i)
      if (c[i * ts + j] < c[a * ts + j]) a = i;
    col_arg[j] = a;
    bwd += c[a * ts + j];
  }
  const double value = 0.5 * (fwd / static_cast<double>(tq) + bwd / static_cast<double>(ts));
  return make_result({}, {value}, {cost},
                     [row_arg, col_arg, tq, ts](std::span<const double> og,
                                                std::span<double* const> in_grads) {
                       if (!in_grads[0]) return;
                       for (std::size_t i = 0; i < tq; ++i) {
                         in_grads[0][i * ts + row_arg[i]] += og[0] * 0.5 / static_cast<double>(tq);
                       }
                       for (std::size_t j = 0; j < ts; ++j) {
                         in_grads[0][col_arg[j] * ts + j] += og[0] * 0.5 / static_cast<double>(ts);
                       }
                     });
}

Tensor bimhm_distance(const Tensor& q, const Tensor& s) {
  if (q.rank() == 2 && s.rank() == 2 && (q.dim(0) == 0 || s.dim(0) == 0)) {
    throw InputError("bimhm_distance: empty sequence");
  }
  check_pair(q, s, "bimhm_distance");
  return bimhm_from_cost(cosine_cost(q, s));
}

// ---------------------------------------------------------------------------
// TRX

std::vector<std::vector<std::size_t>> ordered_tuples(std::size_t frames, std::size_t cardinality) {
  std::vector<std::vector<std::size_t>> out;
  if (cardinality < 1 || cardinality > frames) return out;
  std::vector<std::size_t> idx(cardinality);
  for (std::size_t k = 0; k < cardinality; ++k) idx[k] = k;
  while (true) {
    out.push_back(idx);
    std::size_t k = cardinality;
    while (k-- > 0) {
      if (idx[k] < frames - cardinality + k) break;
      if (k == 0) return out;
    }
    ++idx[k];
    for (std::size_t m = k + 1; m < cardinality; ++m) idx[m] = idx[m - 1] + 1;
  }
}

Tensor tuple_features(const Tensor& frames, std::size_t cardinality) {
  if (frames.rank() != 2) {
    throw DimensionError("tuple_features: frames must be [T, D], got " + to_string(frames.shape()));
  }
  if (cardinality < 1 || cardinality > frames.dim(0)) {
    throw InputError("tuple_features: " + std::to_string(frames.dim(0)) +
                     " frames are fewer than tuple size " + std::to_string(cardinality));
  }
  const Tensor unit = normalize_rows(frames);
  std::vector<Tensor> rows;
  for (const auto& t : ordered_tuples(frames.dim(0), cardinality)) {
    std::vector<Tensor> parts;
    for (auto f : t) parts.push_back(slice(unit, 0, f, f + 1));
    rows.push_back(concat(parts, 1));
  }
  return concat(rows, 0);
}

Tensor trx_distance(const Tensor& q, const Tensor& s, const std::vector<std::size_t>& omega,
                    double temperature) {
  check_pair(q, s, "trx_distance");
  if (omega.empty()) throw InputError("trx_distance: empty tuple-size set");
  if (!(temperature > 0.0)) throw ContractError("trx_distance: temperature must be > 0");
  std::vector<Tensor> per_size;
  for (auto w : omega) {
    if (w > q.dim(0) || w > s.dim(0)) {
      throw InputError("trx_distance: tuple size " + std::to_string(w) + " exceeds frame count");
    }
    const Tensor qt = tuple_features(q, w);
    const Tensor st = tuple_features(s, w);
    const Tensor attn = softmax(scale(cosine_matrix(qt, st), 1.0 / temperature), 1);
    const Tensor recon = matmul(attn, st);
    const Tensor sims = mul(normalize_rows(qt), normalize_rows(recon));
    const double rows = static_cast<double>(qt.dim(0));
    per_size.push_back(scale(sum(sims), -1.0 / rows));
  }
  Tensor total = per_size.front();
  for (std::size_t k = 1; k < per_size.size(); ++k) total = add(total, per_size[k]);
  const Tensor mean_neg = scale(total, 1.0 / static_cast<double>(per_size.size()));
  return add(Tensor::scalar(1.0), mean_neg);
}

// ---------------------------------------------------------------------------
// Registry

void MetricRegistry::add(MetricDescriptor d) {
  if (find(d.name)) throw ContractError("metric '" + d.name + "' registered twice");
  entries_.push_back(std::move(d));
}

const MetricDescriptor* MetricRegistry::find(std::string_view name) const {
  for (const auto& e : entries_)
    if (e.name == name) return &e;
  return nullptr;
}

const MetricDescriptor& MetricRegistry::get(std::string_view name) const {
  const auto* d = find(name);
  if (!d) throw ConfigError("unknown metric '" + std::string(name) + "'");
  return *d;
}

std::vector<std::string> MetricRegistry::names() const {
  std::vector<std::string> out;
  for (const auto& e : entries_) out.push_back(e.name);
  return out;
}

const MetricRegistry& MetricRegistry::builtin() {
  static const MetricRegistry registry = [] {
    MetricRegistry r;
    r.add({"otam",
           [](const Tensor& q, const Tensor& s, const MetricConfig& c) {
             return otam_distance(q, s, c.lambda);
           },
           true});
    r.add({"bimhm",
           [](const Tensor& q, const Tensor& s, const MetricConfig&) {
             return bimhm_distance(q, s);
           },
           true});
    r.add({"trx",
           [](const Tensor& q, const Tensor& s, const MetricConfig& c) {
             return trx_distance(q, s, c.omega, c.trx_temperature);
           },
           true});
    return r;
  }();
  return registry;
}

// ---------------------------------------------------------------------------
// Text branch, losses, fusion

Tensor text_logits(const Tensor& features, const Tensor& text, double tau) {
  if (!(tau > 0.0)) throw ContractError("text_logits: tau must be > 0");
  return scale(cosine_matrix(features, text), 1.0 / tau);
}

namespace {

void check_labels(const Tensor& logits, const std::vector<std::size_t>& labels, const char* who) {
  if (logits.rank() != 2 || logits.dim(0) != labels.size()) {
    throw DimensionError(std::string(who) + ": logits " + to_string(logits.shape()) + " vs " +
                         std::to_string(labels.size()) + " labels");
  }
  for (auto y : labels) {
    if (y >= logits.dim(1)) throw ContractError(std::string(who) + ": label out of range");
  }
}

}  // namespace

Tensor cross_entropy(const Tensor& logits, const std::vector<std::size_t>& labels) {
  return kl_to_target(logits, labels, 0.0);
}

Tensor kl_to_target(const Tensor& logits, const std::vector<std::size_t>& labels,
                    double smoothing) {
  check_labels(logits, labels, "kl_to_target");
  const std::size_t n = logits.dim(0);
  const std::size_t m = logits.dim(1);
  std::vector<double> target(n * m, smoothing / static_cast<double>(m));
  double entropy_term = 0.0;  // sum g log g
  for (std::size_t r = 0; r < n; ++r) {
    target[r * m + labels[r]] += 1.0 - smoothing;
    for (std::size_t k = 0; k < m; ++k) {
      const double g = target[r * m + k];
      if (g > 0.0) entropy_term += g * std::log(g);
    }
  }
  const Tensor cross = sum(mul(Tensor::from({n, m}, std::move(target)), log_softmax(logits, 1)));
  // (sum g log g - sum g log p) / n
  return scale(sub(Tensor::scalar(entropy_term), cross), 1.0 / static_cast<double>(n));
}

LossTerms combine_losses(Tensor q2s, Tensor s2t, Tensor q2t, double alpha) {
  if (!(alpha >= 0.0 && alpha <= 1.0)) throw ConfigError("alpha must lie in [0, 1]");
  LossTerms t{std::move(q2s), std::move(s2t), std::move(q2t), Tensor()};
  if (alpha == 0.0) {
    t.total = t.q2s;
  } else if (alpha == 1.0) {
    t.total = scale(add(t.s2t, t.q2t), 0.5);
  } else {
    t.total = add(scale(add(t.s2t, t.q2t), 0.5 * alpha), scale(t.q2s, 1.0 - alpha));
  }
  return t;
}

std::vector<double> fuse_predictions(const std::vector<double>& p_q2t,
                                     const std::vector<double>& p_q2s, double alpha) {
  if (p_q2t.size() != p_q2s.size()) {
    throw DimensionError("fuse_predictions: lengths " + std::to_string(p_q2t.size()) + " and " +
                         std::to_string(p_q2s.size()) + " differ");
  }
  if (!(alpha >= 0.0 && alpha <= 1.0)) throw ConfigError("alpha must lie in [0, 1]");
  if (alpha == 0.0) return p_q2s;
  if (alpha == 1.0) return p_q2t;
  std::vector<double> p(p_q2t.size());
  for (std::size_t k = 0; k < p.size(); ++k) p[k] = alpha * p_q2t[k] + (1.0 - alpha) * p_q2s[k];
  return p;
}

std::vector<double> softmax_values(const std::vector<double>& logits) {
  std::vector<double> out(logits.size());
  if (logits.empty()) return out;
  const double m = *std::max_element(logits.begin(), logits.end());
  double s = 0.0;
  for (std::size_t k = 0; k < logits.size(); ++k) s += out[k] = std::exp(logits[k] - m);
  for (auto& v : out) v /= s;
  return out;
}

ScoreBundle make_score_bundle(std::vector<double> distances, std::vector<double> query_text_sim,
                              std::vector<double> support_text_sim, const MetricConfig& config) {
  const std::size_t m = distances.size();
  if (m == 0 || query_text_sim.size() != m || support_text_sim.size() % m != 0) {
    throw DimensionError("make_score_bundle: inconsistent class counts");
  }
  ScoreBundle b;
  std::vector<double> z(m);
  for (std::size_t k = 0; k < m; ++k) z[k] = -distances[k] / config.tau_d;
  b.p_q2s = softmax_values(z);
  for (std::size_t k = 0; k < m; ++k) z[k] = query_text_sim[k] / config.tau;
  b.p_q2t = softmax_values(z);
  b.p_s2t.reserve(support_text_sim.size());
  for (std::size_t r = 0; r < support_text_sim.size() / m; ++r) {
    for (std::size_t k = 0; k < m; ++k) z[k] = support_text_sim[r * m + k] / config.tau;
    const auto row = softmax_values(z);
    b.p_s2t.insert(b.p_s2t.end(), row.begin(), row.end());
  }
  b.p = fuse_predictions(b.p_q2t, b.p_q2s, config.alpha);
  b.distances = std::move(distances);
  b.query_text_sim = std::move(query_text_sim);
  b.support_text_sim = std::move(support_text_sim);
  return b;
}

std::size_t argmax(const std::vector<double>& values) {
  return static_cast<std::size_t>(std::max_element(values.begin(), values.end()) -
                                  values.begin());
}

}  // namespace fsar

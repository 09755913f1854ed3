// Copyright 2026 The fsar Authors
// SPDX-License-Identifier: Apache-2.0

#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

#include "fsar/errors.hpp"
#include "fsar/metrics.hpp"
#include "oracles.hpp"

namespace {

using fsar::Tensor;
using oracle::Vec;

// TRX with explicit tuple loops for one cardinality.
double trx_oracle(const Vec& q, const Vec& s, std::size_t t, std::size_t d, std::size_t w,
                  double temperature) {
  const auto tuples = fsar::ordered_tuples(t, w);
  const auto feat = [&](const Vec& x, const std::vector<std::size_t>& idx) {
    Vec f;
    for (auto i : idx) {
      double n = 0.0;
      for (std::size_t c = 0; c < d; ++c) n += x[i * d + c] * x[i * d + c];
      for (std::size_t c = 0; c < d; ++c) f.push_back(x[i * d + c] / std::sqrt(n));
    }
    return f;
  };
  const std::size_t fd = w * d;
  double total = 0.0;
  for (const auto& qi : tuples) {
    const Vec qf = feat(q, qi);
    Vec logits;
    std::vector<Vec> sf;
    for (const auto& sj : tuples) {
      sf.push_back(feat(s, sj));
      logits.push_back(oracle::cosine(qf.data(), sf.back().data(), fd) / temperature);
    }
    const Vec p = oracle::softmax(logits);
    Vec recon(fd, 0.0);
    for (std::size_t j = 0; j < sf.size(); ++j)
      for (std::size_t c = 0; c < fd; ++c) recon[c] += p[j] * sf[j][c];
    total += oracle::cosine(qf.data(), recon.data(), fd);
  }
  return 1.0 - total / static_cast<double>(tuples.size());
}

Tensor random_seq(std::size_t t, std::size_t d, std::mt19937_64& rng, bool grad = false) {
  return oracle::random_tensor({t, d}, rng, 1.0, grad);
}

bool sums_to_one(const Vec& p, double tol) {
  double s = 0.0;
  for (double v : p) {
    if (v < 0.0) return false;
    s += v;
  }
  return std::abs(s - 1.0) <= tol;
}

}  // namespace

TEST_CASE("OTAM") {
  std::mt19937_64 rng(1);

  SUBCASE("identical sequences cost nothing") {
    const Tensor q = random_seq(5, 8, rng);
    CHECK(std::abs(fsar::otam_hard_distance(q, q)) < 1e-6);
    CHECK(fsar::otam_distance(q, q, 1e-3).item() < 1e-6);
  }
  SUBCASE("two-frame hand-set cost") {
    const Vec c{0, 1, 1, 0};
    const auto st = oracle::enumerate_paths(c, 2, 2, 0.1);
    CHECK(st.paths == 3);
    CHECK(fsar::otam_hard(c, 2, 2) == 0.0);
    const double soft = fsar::otam_soft(Tensor::from({2, 2}, c), 0.1).item();
    CHECK(soft <= 0.0);
    CHECK(soft >= -0.1 * std::log(3.0));
    CHECK(soft == doctest::Approx(st.soft_min).epsilon(1e-12));
  }
  SUBCASE("random T=4 matches path enumeration") {
    for (int trial = 0; trial < 50; ++trial) {
      const Tensor q = random_seq(4, 6, rng), s = random_seq(4, 6, rng);
      const Vec c = oracle::cost_matrix(oracle::values(q), oracle::values(s), 4, 4, 6);
      const auto st = oracle::enumerate_paths(c, 4, 4, 0.1);
      CHECK(fsar::otam_hard_distance(q, s) == doctest::Approx(st.hard_min).epsilon(1e-12));
      CHECK(fsar::otam_distance(q, s, 0.1).item() == doctest::Approx(st.soft_min).epsilon(1e-10));
      CHECK(std::abs(fsar::otam_distance(q, s, 1e-3).item() - st.hard_min) < 1e-3);
    }
  }
  SUBCASE("rectangular costs enumerate correctly") {
    const Vec c = oracle::random_vec(3 * 5, rng);
    const auto st = oracle::enumerate_paths(c, 3, 5, 0.2);
    CHECK(fsar::otam_hard(c, 3, 5) == doctest::Approx(st.hard_min).epsilon(1e-12));
    CHECK(fsar::otam_soft(Tensor::from({3, 5}, c), 0.2).item() ==
          doctest::Approx(st.soft_min).epsilon(1e-10));
  }
  SUBCASE("length mismatch") {
    CHECK_THROWS_AS(fsar::otam_distance(random_seq(3, 4, rng), random_seq(4, 4, rng), 0.1),
                    fsar::DimensionError);
  }
}

TEST_CASE("Bi-MHM") {
  std::mt19937_64 rng(2);

  SUBCASE("identical sequences cost nothing") {
    const Tensor q = random_seq(5, 8, rng);
    CHECK(std::abs(fsar::bimhm_distance(q, q).item()) < 1e-12);
  }
  SUBCASE("an exact frame match zeroes that frame's forward minimum") {
    Vec q(3 * 6, 0.0), s(3 * 6, 0.0);
    q[0 * 6 + 0] = 1;  // matches s frame 2
    q[1 * 6 + 1] = 1;
    q[2 * 6 + 2] = 1;
    s[0 * 6 + 3] = 1;
    s[1 * 6 + 4] = 1;
    s[2 * 6 + 0] = 2;
    const auto c = oracle::values(fsar::cosine_cost(Tensor::from({3, 6}, q), Tensor::from({3, 6}, s)));
    CHECK(*std::min_element(c.begin(), c.begin() + 3) == doctest::Approx(0.0));
    CHECK(*std::min_element(c.begin() + 3, c.begin() + 6) == doctest::Approx(1.0));
  }
  SUBCASE("random T=5 matches the double loop") {
    for (int trial = 0; trial < 20; ++trial) {
      const Tensor q = random_seq(5, 7, rng), s = random_seq(5, 7, rng);
      const Vec c = oracle::cost_matrix(oracle::values(q), oracle::values(s), 5, 5, 7);
      CHECK(fsar::bimhm_distance(q, s).item() == doctest::Approx(oracle::bimhm(c, 5, 5)).epsilon(1e-12));
    }
  }
  SUBCASE("frame order does not matter") {
    const Tensor q = random_seq(4, 5, rng), s = random_seq(4, 5, rng);
    auto sv = oracle::values(s);
    std::rotate(sv.begin(), sv.begin() + 5, sv.end());
    CHECK(fsar::bimhm_distance(q, Tensor::from({4, 5}, sv)).item() ==
          doctest::Approx(fsar::bimhm_distance(q, s).item()).epsilon(1e-12));
  }
  SUBCASE("empty sequence") {
    CHECK_THROWS_AS(fsar::bimhm_distance(Tensor::zeros({0, 4}), random_seq(2, 4, rng)),
                    fsar::InputError);
  }
}

TEST_CASE("TRX") {
  std::mt19937_64 rng(3);

  SUBCASE("ordered pairs of three frames") {
    const auto t = fsar::ordered_tuples(3, 2);
    CHECK(t == std::vector<std::vector<std::size_t>>{{0, 1}, {0, 2}, {1, 2}});
    CHECK(fsar::tuple_features(random_seq(3, 4, rng), 2).shape() == fsar::Shape{3, 8});
    CHECK(fsar::ordered_tuples(8, 3).size() == 56);
  }
  SUBCASE("random input matches the tuple-loop oracle") {
    for (std::size_t w : {1, 2, 3}) {
      const Tensor q = random_seq(5, 4, rng), s = random_seq(5, 4, rng);
      const double want = trx_oracle(oracle::values(q), oracle::values(s), 5, 4, w, 0.1);
      CHECK(fsar::trx_distance(q, s, {w}, 0.1).item() == doctest::Approx(want).epsilon(1e-12));
    }
    const Tensor q = random_seq(4, 4, rng), s = random_seq(4, 4, rng);
    const double both = 0.5 * (trx_oracle(oracle::values(q), oracle::values(s), 4, 4, 2, 0.2) +
                               trx_oracle(oracle::values(q), oracle::values(s), 4, 4, 3, 0.2));
    CHECK(fsar::trx_distance(q, s, {2, 3}, 0.2).item() == doctest::Approx(both).epsilon(1e-12));
  }
  SUBCASE("orthogonal tuples reconstruct the support mean") {
    // Query frames live in dims 0-2, support frames in dims 3-5: every logit
    // is zero, so each reconstruction is the mean support tuple, orthogonal
    // to every query tuple.
    Vec q(3 * 6, 0.0), s(3 * 6, 0.0);
    for (std::size_t i = 0; i < 3; ++i) {
      q[i * 6 + i] = 1.0 + static_cast<double>(i);
      s[i * 6 + 3 + i] = 2.0;
    }
    const double d = fsar::trx_distance(Tensor::from({3, 6}, q), Tensor::from({3, 6}, s), {2}, 0.1).item();
    CHECK(d == doctest::Approx(1.0).epsilon(1e-12));
    CHECK(trx_oracle(q, s, 3, 6, 2, 0.1) == doctest::Approx(1.0).epsilon(1e-12));
  }
  SUBCASE("a video is closer to itself than to random videos") {
    std::size_t wins = 0;
    for (int trial = 0; trial < 100; ++trial) {
      const Tensor q = random_seq(4, 8, rng);
      const double self = fsar::trx_distance(q, q, {2}, 0.1).item();
      bool ok = true;
      for (int other = 0; other < 4; ++other)
        ok &= self <= fsar::trx_distance(q, random_seq(4, 8, rng), {2}, 0.1).item();
      wins += ok;
    }
    CHECK(wins == 100);
  }
  SUBCASE("tuple size above the frame count") {
    CHECK_THROWS_AS(fsar::trx_distance(random_seq(2, 4, rng), random_seq(2, 4, rng), {3}, 0.1),
                    fsar::InputError);
  }
}

TEST_CASE("every metric is invariant to positive frame rescaling") {
  std::mt19937_64 rng(4);
  const Tensor q = random_seq(4, 6, rng), s = random_seq(4, 6, rng);
  auto sv = oracle::values(s);
  std::uniform_real_distribution<double> u(0.1, 10.0);
  for (std::size_t i = 0; i < 4; ++i) {
    const double k = u(rng);
    for (std::size_t c = 0; c < 6; ++c) sv[i * 6 + c] *= k;
  }
  const Tensor scaled = Tensor::from({4, 6}, sv);
  fsar::MetricConfig mc;
  for (const auto& name : fsar::MetricRegistry::builtin().names()) {
    CAPTURE(name);
    const auto& m = fsar::MetricRegistry::builtin().get(name);
    CHECK(m.distance(q, scaled, mc).item() == doctest::Approx(m.distance(q, s, mc).item()).epsilon(1e-10));
  }
}

TEST_CASE("metric gradients match finite differences") {
  std::mt19937_64 rng(5);
  fsar::MetricConfig mc;
  mc.omega = {2, 3};
  for (const auto& name : fsar::MetricRegistry::builtin().names()) {
    CAPTURE(name);
    Tensor q = random_seq(4, 5, rng, true), s = random_seq(4, 5, rng, true);
    const auto& m = fsar::MetricRegistry::builtin().get(name);
    const auto r = oracle::grad_check({q, s}, [&] { return m.distance(q, s, mc); });
    CHECK(r.checked == 40);
    CHECK(r.worst < 1e-4);
  }
}

TEST_CASE("metric registry") {
  const auto& reg = fsar::MetricRegistry::builtin();
  CHECK(reg.names() == std::vector<std::string>{"otam", "bimhm", "trx"});
  CHECK_THROWS_AS(reg.get("dtw"), fsar::ConfigError);
  fsar::MetricRegistry local;
  local.add({"l2", [](const Tensor& q, const Tensor& s, const fsar::MetricConfig&) {
               return fsar::mean(fsar::mul(fsar::sub(q, s), fsar::sub(q, s)));
             }});
  CHECK(local.find("l2") != nullptr);
  CHECK_THROWS_AS(local.add({"l2", nullptr}), fsar::ContractError);
}

TEST_CASE("text branch") {
  std::mt19937_64 rng(6);

  SUBCASE("cosine endpoints") {
    const Tensor x = random_seq(1, 5, rng);
    const Tensor both = fsar::concat({x, fsar::scale(x, -1.0)}, 0);
    const auto l = oracle::values(fsar::text_logits(x, both, 1.0));
    CHECK(l[0] == doctest::Approx(1.0).epsilon(1e-12));
    CHECK(l[1] == doctest::Approx(-1.0).epsilon(1e-12));
  }
  SUBCASE("matching text wins") {
    Vec text(4 * 4, 0.0);
    for (std::size_t m = 0; m < 4; ++m) text[m * 4 + m] = 1.0;
    const Tensor f = Tensor::from({1, 4}, {0, 0, 3, 0});
    const auto l = oracle::values(fsar::text_logits(f, Tensor::from({4, 4}, text), 0.07));
    CHECK(fsar::argmax(fsar::softmax_values(l)) == 2);
  }
  SUBCASE("random vectors match dot over norms") {
    const Tensor f = random_seq(3, 6, rng), t = random_seq(5, 6, rng);
    const auto l = oracle::values(fsar::text_logits(f, t, 0.07));
    const auto fv = oracle::values(f), tv = oracle::values(t);
    for (std::size_t i = 0; i < 3; ++i)
      for (std::size_t m = 0; m < 5; ++m)
        CHECK(std::abs(l[i * 5 + m] * 0.07 - oracle::cosine(&fv[i * 6], &tv[m * 6], 6)) < 1e-9);
  }
  SUBCASE("zero vector") {
    CHECK_THROWS_AS(fsar::text_logits(Tensor::zeros({1, 4}), random_seq(2, 4, rng), 0.07),
                    fsar::ContractError);
  }
}

TEST_CASE("losses") {
  std::mt19937_64 rng(7);
  const Tensor logits = random_seq(3, 5, rng);
  const std::vector<std::size_t> labels{1, 4, 0};

  SUBCASE("cross entropy and KL against direct formulas") {
    const auto lv = oracle::values(logits);
    double ce = 0.0, kl = 0.0;
    for (std::size_t r = 0; r < 3; ++r) {
      const Vec p = oracle::softmax(Vec(lv.begin() + static_cast<long>(r * 5),
                                        lv.begin() + static_cast<long>((r + 1) * 5)));
      ce -= std::log(p[labels[r]]);
      for (std::size_t k = 0; k < 5; ++k) {
        const double g = 0.1 / 5 + (k == labels[r] ? 0.9 : 0.0);
        kl += g * std::log(g / p[k]);
      }
    }
    CHECK(fsar::cross_entropy(logits, labels).item() == doctest::Approx(ce / 3).epsilon(1e-12));
    CHECK(fsar::kl_to_target(logits, labels, 0.1).item() == doctest::Approx(kl / 3).epsilon(1e-12));
    CHECK(fsar::kl_to_target(logits, labels, 0.0).item() ==
          doctest::Approx(fsar::cross_entropy(logits, labels).item()).epsilon(1e-12));
  }
  SUBCASE("perfect prediction costs nothing") {
    const Tensor sure = Tensor::from({1, 3}, {0, -1000, -1000});
    CHECK(fsar::cross_entropy(sure, {0}).item() == 0.0);
  }
  SUBCASE("alpha endpoints") {
    const Tensor a = Tensor::scalar(0.7), b = Tensor::scalar(1.3), c = Tensor::scalar(2.1);
    CHECK(fsar::combine_losses(a, b, c, 0.0).total.item() == 0.7);
    CHECK(fsar::combine_losses(a, b, c, 1.0).total.item() == 0.5 * (1.3 + 2.1));
    CHECK(fsar::combine_losses(a, b, c, 0.25).total.item() ==
          doctest::Approx(0.25 * 0.5 * 3.4 + 0.75 * 0.7).epsilon(1e-15));
    CHECK_THROWS_AS(fsar::combine_losses(a, b, c, 1.5), fsar::ConfigError);
    CHECK_THROWS_AS(fsar::combine_losses(a, b, c, -0.1), fsar::ConfigError);
    CHECK_THROWS_AS(fsar::combine_losses(a, b, c, NAN), fsar::ConfigError);
  }
}

TEST_CASE("prediction fusion") {
  CHECK(fsar::fuse_predictions({1, 0}, {0, 1}, 0.5) == Vec{0.5, 0.5});
  CHECK(fsar::fuse_predictions({0.3, 0.7}, {0.9, 0.1}, 0.0) == Vec{0.9, 0.1});
  CHECK(fsar::fuse_predictions({0.3, 0.7}, {0.9, 0.1}, 1.0) == Vec{0.3, 0.7});
  CHECK_THROWS_AS(fsar::fuse_predictions({1}, {0.5, 0.5}, 0.5), fsar::DimensionError);
  CHECK_THROWS_AS(fsar::fuse_predictions({1, 0}, {0.5, 0.5}, 2.0), fsar::ConfigError);

  std::mt19937_64 rng(8);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (int trial = 0; trial < 1000; ++trial) {
    const auto a = fsar::softmax_values(oracle::random_vec(5, rng, 5.0));
    const auto b = fsar::softmax_values(oracle::random_vec(5, rng, 5.0));
    CHECK(sums_to_one(fsar::fuse_predictions(a, b, u(rng)), 1e-12));
  }
}

TEST_CASE("score bundles hold distributions") {
  std::mt19937_64 rng(9);
  fsar::MetricConfig mc;
  mc.alpha = 0.3;
  const auto b = fsar::make_score_bundle(oracle::random_vec(5, rng), oracle::random_vec(5, rng),
                                         oracle::random_vec(10, rng), mc);
  CHECK(sums_to_one(b.p_q2s, 1e-12));
  CHECK(sums_to_one(b.p_q2t, 1e-12));
  CHECK(sums_to_one(b.p, 1e-12));
  CHECK(sums_to_one(Vec(b.p_s2t.begin(), b.p_s2t.begin() + 5), 1e-12));
  CHECK(sums_to_one(Vec(b.p_s2t.begin() + 5, b.p_s2t.end()), 1e-12));
  for (std::size_t k = 0; k < 5; ++k)
    CHECK(b.p[k] == doctest::Approx(0.3 * b.p_q2t[k] + 0.7 * b.p_q2s[k]).epsilon(1e-15));
  // Smaller distance means larger probability.
  CHECK(fsar::argmax(b.p_q2s) ==
        static_cast<std::size_t>(std::min_element(b.distances.begin(), b.distances.end()) -
                                 b.distances.begin()));
  CHECK_THROWS_AS(fsar::make_score_bundle({1, 2}, {1}, {}, mc), fsar::DimensionError);
}

TEST_CASE("every metric is unchanged by one feature permutation applied to both sequences") {
  std::mt19937_64 rng(10);
  const std::size_t t = 4, d = 6;
  const Tensor q = random_seq(t, d, rng), s = random_seq(t, d, rng);
  std::vector<std::size_t> perm(d);
  std::iota(perm.begin(), perm.end(), 0);
  std::shuffle(perm.begin(), perm.end(), rng);
  const auto permute = [&](const Tensor& x) {
    const auto v = oracle::values(x);
    Vec out(v.size());
    for (std::size_t i = 0; i < t; ++i)
      for (std::size_t c = 0; c < d; ++c) out[i * d + c] = v[i * d + perm[c]];
    return Tensor::from({t, d}, out);
  };
  fsar::MetricConfig mc;
  for (const auto& name : fsar::MetricRegistry::builtin().names()) {
    CAPTURE(name);
    const auto& m = fsar::MetricRegistry::builtin().get(name);
    CHECK(m.distance(permute(q), permute(s), mc).item() ==
          doctest::Approx(m.distance(q, s, mc).item()).epsilon(1e-12));
  }
}

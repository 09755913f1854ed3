// Copyright 2026 The fsar Authors
// SPDX-License-Identifier: Apache-2.0

#include <doctest.h>

#include <memory>
#include <random>
#include <set>

#include "fsar/encoder.hpp"
#include "fsar/errors.hpp"
#include "fsar/tpcm.hpp"
#include "oracles.hpp"

namespace {

using fsar::Tensor;
using oracle::Vec;

struct Fixture {
  fsar::ModelConfig config;
  fsar::ParamRegistry registry;
  std::unique_ptr<fsar::Tpcm> tpcm;
  std::size_t d;

  Fixture() {
    config.dim = 8;
    config.heads = 2;
    config.text_dim = 6;
    config.patch_tokens = 2;
    config.patch_dim = 3;
    d = config.text_dim;
    fsar::Rng rng(3);
    fsar::materialize(fsar::parameter_layout(config), registry, rng);
    // Non-default norms and biases so the oracle sees every term.
    std::mt19937_64 r(4);
    std::normal_distribution<double> nd(0.0, 0.3);
    for (const auto& e : registry.entries())
      if (e.name.rfind("tpcm.", 0) == 0 && e.name.find("weight") == std::string::npos)
        for (double& v : const_cast<Tensor&>(e.tensor).mutable_data()) v += nd(r);
    tpcm = std::make_unique<fsar::Tpcm>(config, registry);
  }

  Vec get(const std::string& name) const { return oracle::values(registry.get("tpcm." + name)); }

  void zero(const std::string& name) {
    for (double& v : const_cast<Tensor&>(registry.get("tpcm." + name)).mutable_data()) v = 0.0;
  }

  // Explicit q/k/v arithmetic for a single head: queries q[tq, d], keys and
  // values from kv[tk, d].
  Vec layer(const Vec& q, std::size_t tq, const Vec& kv, std::size_t tk) const {
    const Vec nq = oracle::layer_norm(q, get("ln1.gamma"), get("ln1.beta"), d);
    const Vec nkv = oracle::layer_norm(kv, get("ln1.gamma"), get("ln1.beta"), d);
    const Vec qq = oracle::linear(nq, get("attn.q.weight"), get("attn.q.bias"), tq, d, d);
    const Vec kk = oracle::linear(nkv, get("attn.k.weight"), get("attn.k.bias"), tk, d, d);
    const Vec vv = oracle::linear(nkv, get("attn.v.weight"), get("attn.v.bias"), tk, d, d);
    Vec att(tq * d, 0.0);
    for (std::size_t i = 0; i < tq; ++i) {
      Vec logits(tk);
      for (std::size_t j = 0; j < tk; ++j) {
        double s = 0.0;
        for (std::size_t c = 0; c < d; ++c) s += qq[i * d + c] * kk[j * d + c];
        logits[j] = s / std::sqrt(static_cast<double>(d));
      }
      const Vec p = oracle::softmax(logits);
      for (std::size_t j = 0; j < tk; ++j)
        for (std::size_t c = 0; c < d; ++c) att[i * d + c] += p[j] * vv[j * d + c];
    }
    const Vec bar =
        oracle::add(q, oracle::linear(att, get("attn.o.weight"), get("attn.o.bias"), tq, d, d));
    return oracle::add(bar, ffn(bar, tq));
  }

  Vec ffn(const Vec& x, std::size_t rows) const {
    const Vec n = oracle::layer_norm(x, get("ln2.gamma"), get("ln2.beta"), d);
    const Vec h = oracle::gelu(oracle::linear(n, get("mlp.fc1.weight"), get("mlp.fc1.bias"), rows,
                                              d, 4 * d));
    return oracle::linear(h, get("mlp.fc2.weight"), get("mlp.fc2.bias"), rows, 4 * d, d);
  }
};

}  // namespace

TEST_CASE("support enhancement matches the step-by-step oracle") {
  Fixture fx;
  std::mt19937_64 rng(1);
  const std::size_t t = 5;
  const Vec s = oracle::random_vec(t * fx.d, rng);
  const Vec text = oracle::random_vec(fx.d, rng);
  Vec q = s;
  for (std::size_t i = 0; i < t; ++i)
    for (std::size_t c = 0; c < fx.d; ++c) q[i * fx.d + c] += text[c];
  Vec kv = s;
  kv.insert(kv.end(), text.begin(), text.end());
  const auto got = fx.tpcm->enhance_support(Tensor::from({t, fx.d}, s), Tensor::from({fx.d}, text));
  CHECK(got.shape() == fsar::Shape{t, fx.d});
  CHECK(oracle::max_abs_diff(oracle::values(got), fx.layer(q, t, kv, t + 1)) < 1e-10);
}

TEST_CASE("keys and values include the text token") {
  Fixture fx;
  const auto& b = fx.tpcm->params();
  std::mt19937_64 rng(2);
  const std::size_t t = 4;
  const Tensor s = oracle::random_tensor({1, t, fx.d}, rng);
  const Tensor kv = oracle::random_tensor({1, t + 1, fx.d}, rng);
  const auto probs = fsar::attention_probabilities(b.attn.q(s), b.attn.k(kv), 1);
  CHECK(probs.size() == t * (t + 1));
}

TEST_CASE("zero text and zero attention output leave the FFN residual") {
  Fixture fx;
  fx.zero("attn.o.weight");
  fx.zero("attn.o.bias");
  std::mt19937_64 rng(3);
  const std::size_t t = 4;
  const Vec s = oracle::random_vec(t * fx.d, rng);
  const auto got = fx.tpcm->enhance_support(Tensor::from({t, fx.d}, s), Tensor::zeros({fx.d}));
  CHECK(oracle::max_abs_diff(oracle::values(got), oracle::add(s, fx.ffn(s, t))) < 1e-12);
}

TEST_CASE("query enhancement") {
  Fixture fx;
  std::mt19937_64 rng(4);
  const std::size_t t = 6;

  SUBCASE("random input matches the self-attention oracle") {
    const Vec x = oracle::random_vec(t * fx.d, rng);
    const auto got = fx.tpcm->enhance_query(Tensor::from({t, fx.d}, x));
    CHECK(oracle::max_abs_diff(oracle::values(got), fx.layer(x, t, x, t)) < 1e-10);
  }
  SUBCASE("constant input attends uniformly and stays constant over time") {
    const Vec row = oracle::random_vec(fx.d, rng);
    Vec x;
    for (std::size_t i = 0; i < t; ++i) x.insert(x.end(), row.begin(), row.end());
    const Tensor xt = Tensor::from({1, t, fx.d}, x);
    const auto& b = fx.tpcm->params();
    for (double p : fsar::attention_probabilities(b.attn.q(b.ln1(xt)), b.attn.k(b.ln1(xt)), 1))
      CHECK(p == doctest::Approx(1.0 / t).epsilon(1e-12));
    const auto out = oracle::values(fx.tpcm->enhance_query(fsar::reshape(xt, {t, fx.d})));
    // Uniform weights over identical values return v(row) itself.
    const Vec n = oracle::layer_norm(row, fx.get("ln1.gamma"), fx.get("ln1.beta"), fx.d);
    const Vec v = oracle::linear(n, fx.get("attn.v.weight"), fx.get("attn.v.bias"), 1, fx.d, fx.d);
    const Vec bar = oracle::add(row, oracle::linear(v, fx.get("attn.o.weight"), fx.get("attn.o.bias"), 1, fx.d, fx.d));
    const Vec want = oracle::add(bar, fx.ffn(bar, 1));
    for (std::size_t i = 0; i < t; ++i)
      CHECK(oracle::max_abs_diff(Vec(out.begin() + static_cast<long>(i * fx.d),
                                     out.begin() + static_cast<long>((i + 1) * fx.d)),
                                 want) < 1e-12);
  }
  SUBCASE("dimension mismatch") {
    CHECK_THROWS_AS(fx.tpcm->enhance_query(Tensor::zeros({t, fx.d + 1})), fsar::DimensionError);
    CHECK_THROWS_AS(fx.tpcm->enhance_support(Tensor::zeros({t, fx.d}), Tensor::zeros({fx.d + 1})),
                    fsar::DimensionError);
  }
}

TEST_CASE("both paths draw on one parameter set") {
  Fixture fx;
  std::mt19937_64 rng(5);
  const std::size_t t = 3;
  const Tensor s = oracle::random_tensor({t, fx.d}, rng);
  const Tensor text = oracle::random_tensor({fx.d}, rng);
  const auto ids_of = [&](const Tensor& loss) {
    fx.registry.zero_grad();
    std::set<std::string> touched;
    for (const auto& e : fx.registry.entries()) const_cast<Tensor&>(e.tensor).set_requires_grad(e.name.rfind("tpcm.", 0) == 0);
    fsar::backward(loss);
    for (const auto& e : fx.registry.entries())
      if (e.tensor.has_grad()) {
        bool nonzero = false;
        for (double g : e.tensor.grad()) nonzero |= g != 0.0;
        if (nonzero) touched.insert(e.name);
      }
    return touched;
  };
  const auto sup = ids_of(fsar::sum(fx.tpcm->enhance_support(s, text)));
  const auto qry = ids_of(fsar::sum(fx.tpcm->enhance_query(s)));
  CHECK(sup.size() == 16);
  CHECK(sup == qry);
}

TEST_CASE("prototypes") {
  std::mt19937_64 rng(6);
  const Tensor a = oracle::random_tensor({4, 6}, rng);
  CHECK(oracle::values(fsar::mean_prototype({a})) == oracle::values(a));
  CHECK(oracle::max_abs_diff(oracle::values(fsar::mean_prototype({a, a})), oracle::values(a)) < 1e-15);

  std::vector<Tensor> five;
  Vec want(24, 0.0);
  for (int k = 0; k < 5; ++k) {
    five.push_back(oracle::random_tensor({4, 6}, rng));
    const auto v = oracle::values(five.back());
    for (std::size_t i = 0; i < 24; ++i) want[i] += v[i] / 5.0;
  }
  CHECK(oracle::max_abs_diff(oracle::values(fsar::mean_prototype(five)), want) < 1e-12);
  CHECK_THROWS_AS(fsar::mean_prototype({}), fsar::ContractError);
}

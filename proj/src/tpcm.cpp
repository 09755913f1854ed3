// Copyright 2026 The fsar Authors
// SPDX-License-Identifier: Apache-2.0

#include "fsar/tpcm.hpp"

#include "fsar/errors.hpp"

namespace fsar {

Tpcm::Tpcm(const ModelConfig& config, const ParamRegistry& registry)
    : dim_(config.text_dim), block_(bind_block(registry, "tpcm", config.tpcm_heads)) {}

Tensor Tpcm::finish(const Tensor& q, const Tensor& attended) const {
  const std::size_t t = q.dim(0);
  const Tensor bar = add(q, reshape(attended, {t, dim_}));
  return add(bar, block_.mlp(block_.ln2(bar)));
}

Tensor Tpcm::enhance_support(const Tensor& support, const Tensor& text) const {
  if (support.rank() != 2 || support.dim(1) != dim_ || text.numel() != dim_) {
    throw DimensionError("enhance_support: support " + to_string(support.shape()) + " and text " +
                         to_string(text.shape()) + " must share feature dim " +
                         std::to_string(dim_));
  }
  const std::size_t t = support.dim(0);
  const Tensor text_row = reshape(text, {1, dim_});
  const Tensor q = add(support, tile(text_row, 0, t));
  const Tensor kv = concat({support, text_row}, 0);
  const Tensor a = block_.attn(reshape(block_.ln1(q), {1, t, dim_}),
                               reshape(block_.ln1(kv), {1, t + 1, dim_}));
  return finish(q, a);
}

Tensor Tpcm::enhance_query(const Tensor& query) const {
  if (query.rank() != 2 || query.dim(1) != dim_) {
    throw DimensionError("enhance_query: query " + to_string(query.shape()) +
                         " must have feature dim " + std::to_string(dim_));
  }
  const std::size_t t = query.dim(0);
  const Tensor a = block_.attn(reshape(block_.ln1(query), {1, t, dim_}));
  return finish(query, a);
}

Tensor mean_prototype(const std::vector<Tensor>& enhanced) {
  if (enhanced.empty()) throw ContractError("mean_prototype: no support videos");
  if (enhanced.size() == 1) return enhanced.front();
  std::vector<Tensor> rows;
  rows.reserve(enhanced.size());
  const Shape s = enhanced.front().shape();
  for (const auto& e : enhanced) {
    if (e.shape() != s) {
      throw DimensionError("mean_prototype: " + to_string(e.shape()) + " vs " + to_string(s));
    }
    rows.push_back(reshape(e, {1, s[0], s[1]}));
  }
  return mean_axis(concat(rows, 0), 0);
}

}  // namespace fsar

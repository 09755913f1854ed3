// Copyright 2026 The fsar Authors
// SPDX-License-Identifier: Apache-2.0

// Text-guided prototype construction.

#pragma once

#include <cstddef>
#include <vector>

#include "fsar/encoder.hpp"

namespace fsar {

/// One pre-norm attention + FFN layer shared by the support and query paths.
class Tpcm {
 public:
  Tpcm(const ModelConfig& config, const ParamRegistry& registry);

  const BlockParams& params() const noexcept { return block_; }

  /// support[T, D'], text[1, D'] or [D'] -> [T, D']. Queries are
  /// support + text (repeated); keys and values are [support; text].
  Tensor enhance_support(const Tensor& support, const Tensor& text) const;
  /// Self-attention form for query features [T, D'].
  Tensor enhance_query(const Tensor& query) const;

 private:
  Tensor finish(const Tensor& q, const Tensor& attended) const;

  std::size_t dim_;
  BlockParams block_;
};

/// Frame-wise mean of K enhanced support sequences of one class.
Tensor mean_prototype(const std::vector<Tensor>& enhanced);

}  // namespace fsar

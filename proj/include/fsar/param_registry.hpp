// Copyright 2026 The fsar Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <string>
#include <string_view>
#include <vector>

#include "fsar/tensor.hpp"

namespace fsar {

enum class ParamGroup {
  kBackbone,     // frozen pre-trained visual encoder
  kAdapter,      // temporal / multimodal / joint adapters
  kFcText,       // text-to-visual projection shared across layers
  kTpcm,         // text-guided prototype construction
  kProjection,   // visual output projection to the joint space
  kTextEncoder,  // frozen text tower (census accounting only)
};

std::string_view to_string(ParamGroup group);

/// Named parameter tensors with a per-entry freeze flag.
///
/// Frozen entries have requires_grad() == false, so no gradient ever reaches
/// them; optimizers additionally skip them by construction.
class ParamRegistry {
 public:
  struct Entry {
    std::string name;
    Tensor tensor;
    ParamGroup group;
    bool frozen;
  };

  /// Throws ContractError when the name or the tensor storage is already registered.
  const Tensor& add(std::string name, Tensor tensor, ParamGroup group, bool frozen);

  const std::vector<Entry>& entries() const noexcept { return entries_; }
  const Entry* find(std::string_view name) const;
  /// Throws InputError for unknown names.
  const Tensor& get(std::string_view name) const;

  void set_frozen(std::string_view name, bool frozen);
  void set_group_frozen(ParamGroup group, bool frozen);
  void freeze_all();

  void zero_grad();

  std::size_t total_count() const;
  std::size_t trainable_count() const;

 private:
  std::vector<Entry> entries_;
};

}  // namespace fsar

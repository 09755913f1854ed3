// Copyright 2026 The fsar Authors
// SPDX-License-Identifier: Apache-2.0

#include "fsar/param_registry.hpp"

#include <algorithm>

#include "fsar/errors.hpp"

namespace fsar {

std::string_view to_string(ParamGroup group) {
  switch (group) {
    case ParamGroup::kBackbone: return "backbone-frozen";
    case ParamGroup::kAdapter: return "adapters";
    case ParamGroup::kFcText: return "fc_text";
    case ParamGroup::kTpcm: return "tpcm";
    case ParamGroup::kProjection: return "projection";
    case ParamGroup::kTextEncoder: return "text-encoder-frozen";
  }
  return "unknown";
}

const Tensor& ParamRegistry::add(std::string name, Tensor tensor, ParamGroup group, bool frozen) {
  if (!tensor.defined()) throw ContractError("parameter '" + name + "' is undefined");
  for (const auto& e : entries_) {
    if (e.name == name) throw ContractError("parameter '" + name + "' registered twice");
    if (e.tensor.id() == tensor.id()) {
      throw ContractError("parameter '" + name + "' aliases '" + e.name + "'");
    }
  }
  tensor.set_requires_grad(!frozen);
  entries_.push_back({std::move(name), std::move(tensor), group, frozen});
  return entries_.back().tensor;
}

const ParamRegistry::Entry* ParamRegistry::find(std::string_view name) const {
  auto it = std::find_if(entries_.begin(), entries_.end(),
                         [&](const Entry& e) { return e.name == name; });
  return it == entries_.end() ? nullptr : &*it;
}

const Tensor& ParamRegistry::get(std::string_view name) const {
  const Entry* e = find(name);
  if (!e) throw InputError("unknown parameter '" + std::string(name) + "'");
  return e->tensor;
}

void ParamRegistry::set_frozen(std::string_view name, bool frozen) {
  for (auto& e : entries_) {
    if (e.name == name) {
      e.frozen = frozen;
      e.tensor.set_requires_grad(!frozen);
      return;
    }
  }
  throw InputError("unknown parameter '" + std::string(name) + "'");
}

void ParamRegistry::set_group_frozen(ParamGroup group, bool frozen) {
  for (auto& e : entries_) {
    if (e.group == group) {
      e.frozen = frozen;
      e.tensor.set_requires_grad(!frozen);
    }
  }
}

void ParamRegistry::freeze_all() {
  for (auto& e : entries_) {
    e.frozen = true;
    e.tensor.set_requires_grad(false);
  }
}

void ParamRegistry::zero_grad() {
  for (auto& e : entries_) e.tensor.zero_grad();
}

std::size_t ParamRegistry::total_count() const {
  std::size_t n = 0;
  for (const auto& e : entries_) n += e.tensor.numel();
  return n;
}

std::size_t ParamRegistry::trainable_count() const {
  std::size_t n = 0;
  for (const auto& e : entries_)
    if (!e.frozen) n += e.tensor.numel();
  return n;
}

}  // namespace fsar

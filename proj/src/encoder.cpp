// Copyright 2026 The fsar Authors
// SPDX-License-Identifier: Apache-2.0

#include "fsar/encoder.hpp"

#include <cmath>

#include "fsar/errors.hpp"

namespace fsar {

namespace {

double inv_sqrt(std::size_t n) { return 1.0 / std::sqrt(static_cast<double>(n)); }

void add_linear(std::vector<ParamSpec>& out, const std::string& name, std::size_t in,
                std::size_t outd, ParamGroup group, bool frozen, Init weight_init,
                double bias_sd, bool bias = true) {
  out.push_back({name + ".weight", {in, outd}, group, frozen, weight_init,
                 weight_init == Init::kNormal ? inv_sqrt(in) : 0.0});
  if (bias) {
    out.push_back({name + ".bias", {outd}, group, frozen,
                   bias_sd > 0.0 ? Init::kNormal : Init::kZeros, bias_sd});
  }
}

void add_norm(std::vector<ParamSpec>& out, const std::string& name, std::size_t d,
              ParamGroup group, bool frozen) {
  out.push_back({name + ".gamma", {d}, group, frozen, Init::kOnes, 0.0});
  out.push_back({name + ".beta", {d}, group, frozen, Init::kZeros, 0.0});
}

void add_adapter(std::vector<ParamSpec>& out, const std::string& name, std::size_t d,
                 std::size_t b) {
  add_linear(out, name + ".down", d, b, ParamGroup::kAdapter, false, Init::kNormal, 0.0);
  add_linear(out, name + ".up", b, d, ParamGroup::kAdapter, false, Init::kZeros, 0.0);
}

void add_transformer_layer(std::vector<ParamSpec>& out, const std::string& p, std::size_t d,
                           std::size_t hidden, ParamGroup group, bool frozen, double bias_sd,
                           double branch_scale = 1.0) {
  add_norm(out, p + ".ln1", d, group, frozen);
  for (const char* n : {".attn.q", ".attn.k", ".attn.v", ".attn.o"}) {
    add_linear(out, p + n, d, d, group, frozen, Init::kNormal, bias_sd);
  }
  out[out.size() - 2].stddev *= branch_scale;
  add_norm(out, p + ".ln2", d, group, frozen);
  add_linear(out, p + ".mlp.fc1", d, hidden, group, frozen, Init::kNormal, bias_sd);
  add_linear(out, p + ".mlp.fc2", hidden, d, group, frozen, Init::kNormal, bias_sd);
  out[out.size() - 2].stddev *= branch_scale;
}

constexpr double kFrozenBiasSd = 0.02;
constexpr double kTokenSd = 0.1;
// Output weights of the frozen attention and MLP branches are shrunk so the
// residual stream stays close to the patch embedding.
constexpr double kFrozenBranchScale = 0.3;

}  // namespace

std::vector<ParamSpec> parameter_layout(const ModelConfig& c) {
  c.validate();
  const std::size_t d = c.dim;
  const std::size_t dt = c.text_dim;
  std::vector<ParamSpec> out;
  const auto bb = ParamGroup::kBackbone;
  add_linear(out, "backbone.patch", c.patch_dim, d, bb, true, Init::kNormal, 0.0, false);
  out.push_back({"backbone.cls", {d}, bb, true, Init::kNormal, kTokenSd});
  out.push_back({"backbone.pos", {c.patch_tokens + 1, d}, bb, true, Init::kNormal, kTokenSd});
  for (std::size_t l = 0; l < c.layers; ++l) {
    add_transformer_layer(out, "backbone.layer" + std::to_string(l), d, c.mlp_ratio * d, bb, true,
                          kFrozenBiasSd, kFrozenBranchScale);
  }
  add_norm(out, "backbone.ln_post", d, bb, true);
  out.push_back({"projection.weight", {d, dt}, ParamGroup::kProjection, !c.proj_trainable,
                 Init::kNormal, inv_sqrt(d)});

  if (c.use_adapters) {
    const std::size_t b = c.bottleneck();
    for (std::size_t l = 0; l < c.layers; ++l) {
      const std::string p = "adapter.layer" + std::to_string(l);
      add_adapter(out, p + ".temporal", d, b);
      add_adapter(out, p + ".multimodal", d, b);
      add_adapter(out, p + ".joint", d, b);
    }
    if (c.text_injection) {
      add_linear(out, "fc_text", dt, d, ParamGroup::kFcText, false, Init::kNormal, 0.0);
    }
  }
  if (c.use_tpcm) {
    add_transformer_layer(out, "tpcm", dt, 4 * dt, ParamGroup::kTpcm, false, 0.0);
  }
  return out;
}

std::vector<ParamSpec> census_layout(const ModelConfig& c) {
  auto out = parameter_layout(c);
  if (c.text_layers == 0) return out;
  const std::size_t w = c.text_width;
  const auto g = ParamGroup::kTextEncoder;
  out.push_back({"text.token_embedding", {c.text_vocab, w}, g, true, Init::kZeros, 0.0});
  out.push_back({"text.positional", {c.text_context, w}, g, true, Init::kZeros, 0.0});
  for (std::size_t l = 0; l < c.text_layers; ++l) {
    add_transformer_layer(out, "text.layer" + std::to_string(l), w, 4 * w, g, true, 0.0);
  }
  add_norm(out, "text.ln_final", w, g, true);
  out.push_back({"text.projection", {w, c.text_dim}, g, true, Init::kZeros, 0.0});
  return out;
}

void materialize(const std::vector<ParamSpec>& layout, ParamRegistry& registry, Rng& rng) {
  for (const auto& s : layout) {
    std::vector<double> values(numel(s.shape), 0.0);
    if (s.init == Init::kOnes) {
      std::fill(values.begin(), values.end(), 1.0);
    } else if (s.init == Init::kNormal) {
      std::normal_distribution<double> nd(0.0, s.stddev);
      for (auto& v : values) v = nd(rng);
    }
    registry.add(s.name, Tensor::from(s.shape, std::move(values)), s.group, s.frozen);
  }
}

Tensor AdapterParams::operator()(const Tensor& x) const {
  Tensor y = up(gelu(down(x)));
  return has_skip ? add(x, y) : y;
}

Tensor AttentionParams::operator()(const Tensor& x, const std::vector<bool>& key_mask) const {
  return o(attention(q(x), k(x), v(x), heads, key_mask));
}

Tensor AttentionParams::operator()(const Tensor& xq, const Tensor& xkv) const {
  return o(attention(q(xq), k(xkv), v(xkv), heads));
}

namespace {

LinearParams bind_linear(const ParamRegistry& r, const std::string& name, bool bias = true) {
  return {r.get(name + ".weight"), bias ? r.get(name + ".bias") : Tensor()};
}

NormParams bind_norm(const ParamRegistry& r, const std::string& name) {
  return {r.get(name + ".gamma"), r.get(name + ".beta")};
}

AdapterParams bind_adapter(const ParamRegistry& r, const std::string& name, bool skip) {
  return {bind_linear(r, name + ".down"), bind_linear(r, name + ".up"), skip};
}

}  // namespace

BlockParams bind_block(const ParamRegistry& r, const std::string& p, std::size_t heads) {
  BlockParams b;
  b.ln1 = bind_norm(r, p + ".ln1");
  b.ln2 = bind_norm(r, p + ".ln2");
  b.attn = {bind_linear(r, p + ".attn.q"), bind_linear(r, p + ".attn.k"),
            bind_linear(r, p + ".attn.v"), bind_linear(r, p + ".attn.o"), heads};
  b.fc1 = bind_linear(r, p + ".mlp.fc1");
  b.fc2 = bind_linear(r, p + ".mlp.fc2");
  return b;
}

Encoder::Encoder(const ModelConfig& config, const ParamRegistry& r) : config_(config) {
  config_.validate();
  patch_ = bind_linear(r, "backbone.patch", false);
  cls_token_ = r.get("backbone.cls");
  pos_ = r.get("backbone.pos");
  for (std::size_t l = 0; l < config_.layers; ++l) {
    blocks_.push_back(bind_block(r, "backbone.layer" + std::to_string(l), config_.heads));
    if (config_.use_adapters) {
      const std::string p = "adapter.layer" + std::to_string(l);
      adapters_.push_back({bind_adapter(r, p + ".temporal", false),
                           bind_adapter(r, p + ".multimodal", false),
                           bind_adapter(r, p + ".joint", config_.joint_skip)});
    }
  }
  if (config_.use_adapters && config_.text_injection) fc_text_ = bind_linear(r, "fc_text");
  ln_post_ = bind_norm(r, "backbone.ln_post");
  proj_ = r.get("projection.weight");
}

Tensor Encoder::patch_embed(const Tensor& frames) const {
  if (frames.rank() != 3 || frames.dim(1) != config_.patch_tokens ||
      frames.dim(2) != config_.patch_dim) {
    throw DimensionError("patch_embed: frames " + to_string(frames.shape()) +
                         " do not match grid [T, " + std::to_string(config_.patch_tokens) + ", " +
                         std::to_string(config_.patch_dim) + "]");
  }
  const std::size_t t = frames.dim(0);
  const std::size_t d = config_.dim;
  const Tensor cls = tile(reshape(cls_token_, {1, 1, d}), 0, t);
  const Tensor tokens = concat({cls, patch_(frames)}, 1);
  const Tensor pos = tile(reshape(pos_, {1, config_.patch_tokens + 1, d}), 0, t);
  return add(tokens, pos);
}

FrozenIntermediates Encoder::frozen_block(const Tensor& z, std::size_t layer) const {
  const BlockParams& b = block(layer);
  FrozenIntermediates out;
  out.msa = b.attn(b.ln1(z));
  out.after_msa = add(z, out.msa);
  out.mlp = b.mlp(b.ln2(out.after_msa));
  out.out = add(out.after_msa, out.mlp);
  return out;
}

Tensor Encoder::temporal_adapt(const Tensor& cls, std::size_t layer) const {
  if (cls.rank() != 3 || cls.dim(1) != 1) {
    throw DimensionError("temporal_adapt: expected [T, 1, D], got " + to_string(cls.shape()));
  }
  const std::size_t t = cls.dim(0);
  if (t < 2) throw ContractError("temporal_adapt: needs at least 2 frames");
  const BlockParams& b = block(layer);
  const Tensor x = reshape(cls, {1, t, config_.dim});
  const Tensor y = add(x, adapters(layer).temporal(b.attn(b.ln1(x))));
  return reshape(y, {t, 1, config_.dim});
}

Tensor Encoder::project_text(const Tensor& text, std::size_t frames) const {
  if (!fc_text_.weight.defined()) throw ContractError("project_text: no text projection");
  if (text.numel() != config_.text_dim) {
    throw DimensionError("project_text: text " + to_string(text.shape()) + " is not [" +
                         std::to_string(config_.text_dim) + "]");
  }
  const Tensor row = fc_text_(reshape(text, {1, config_.text_dim}));
  return tile(reshape(row, {1, 1, config_.dim}), 0, frames ? frames : config_.frames);
}

Tensor Encoder::multimodal_adapt_support(const Tensor& z_after_msa, const Tensor& cls_adapted,
                                         const Tensor& text_proj, std::size_t layer,
                                         bool mask_text) const {
  const std::size_t t = z_after_msa.dim(0);
  if (cls_adapted.dim(0) != t || text_proj.dim(0) != t) {
    throw DimensionError("multimodal_adapt_support: frame axes " + to_string(z_after_msa.shape()) +
                         ", " + to_string(cls_adapted.shape()) + ", " +
                         to_string(text_proj.shape()) + " disagree");
  }
  const Tensor cat = concat({z_after_msa, cls_adapted, text_proj}, 1);
  std::vector<bool> mask;
  if (mask_text) {
    mask.assign(cat.dim(1), false);
    mask.back() = true;
  }
  const BlockParams& b = block(layer);
  return add(cat, adapters(layer).multimodal(b.attn(b.ln1(cat), mask)));
}

Tensor Encoder::spatiotemporal_adapt_query(const Tensor& z_after_msa, const Tensor& cls_adapted,
                                           std::size_t layer) const {
  if (cls_adapted.dim(0) != z_after_msa.dim(0)) {
    throw DimensionError("spatiotemporal_adapt_query: frame axes " +
                         to_string(z_after_msa.shape()) + ", " + to_string(cls_adapted.shape()) +
                         " disagree");
  }
  const Tensor cat = concat({z_after_msa, cls_adapted}, 1);
  const BlockParams& b = block(layer);
  return add(cat, adapters(layer).multimodal(b.attn(b.ln1(cat))));
}

Tensor Encoder::joint_adapt(const Tensor& z_branch, std::size_t layer) const {
  const Tensor s = slice(z_branch, 1, 0, config_.patch_tokens + 1);
  const BlockParams& b = block(layer);
  const Tensor n = b.ln2(s);
  Tensor out = add(s, b.mlp(n));
  if (config_.joint_scale_r != 0.0) {
    out = add(out, scale(adapters(layer).joint(n), config_.joint_scale_r));
  }
  return out;
}

Tensor Encoder::output_features(const Tensor& z) const {
  const std::size_t t = z.dim(0);
  const Tensor cls = reshape(slice(z, 1, 0, 1), {t, config_.dim});
  return matmul(ln_post_(cls), proj_);
}

Tensor Encoder::encode(const Tensor& frames, const Tensor* text) const {
  Tensor z = patch_embed(frames);
  if (!config_.use_adapters) {
    for (std::size_t l = 0; l < config_.layers; ++l) z = frozen_block(z, l).out;
    return output_features(z);
  }
  const bool inject = text != nullptr && config_.text_injection;
  const Tensor text_proj = inject ? project_text(*text, frames.dim(0)) : Tensor();
  for (std::size_t l = 0; l < config_.layers; ++l) {
    const BlockParams& b = block(l);
    const Tensor after_msa = add(z, b.attn(b.ln1(z)));
    const Tensor x_ta = temporal_adapt(slice(z, 1, 0, 1), l);
    const Tensor branch = inject ? multimodal_adapt_support(after_msa, x_ta, text_proj, l)
                                 : spatiotemporal_adapt_query(after_msa, x_ta, l);
    z = joint_adapt(branch, l);
  }
  return output_features(z);
}

Tensor Encoder::encode_support(const Tensor& frames, const Tensor& text) const {
  return encode(frames, &text);
}

Tensor Encoder::encode_query(const Tensor& frames) const { return encode(frames, nullptr); }

Tensor Encoder::encode_frozen(const Tensor& frames) const {
  Tensor z = patch_embed(frames);
  for (std::size_t l = 0; l < config_.layers; ++l) z = frozen_block(z, l).out;
  return output_features(z);
}

}  // namespace fsar

// Copyright 2026 The fsar Authors
// SPDX-License-Identifier: Apache-2.0

#include "fsar/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <map>
#include <sstream>
#include <thread>
#include <tuple>

#include <json.hpp>

#include "byte_io.hpp"
#include "fsar/errors.hpp"

namespace fsar {

// ---------------------------------------------------------------------------
// Optimizer and schedule

Adam::Adam(ParamRegistry& params, double beta1, double beta2, double eps)
    : params_(params), beta1_(beta1), beta2_(beta2), eps_(eps) {
  const auto& entries = params_.entries();
  for (std::size_t i = 0; i < entries.size(); ++i) {
    if (entries[i].frozen) continue;
    const std::size_t n = entries[i].tensor.numel();
    slots_.push_back({i, std::vector<double>(n, 0.0), std::vector<double>(n, 0.0)});
  }
}

void Adam::step(double lr) {
  const auto& entries = params_.entries();
  ++t_;
  const double c1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
  const double c2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
  for (auto& slot : slots_) {
    if (slot.entry >= entries.size() || entries[slot.entry].tensor.numel() != slot.m.size()) {
      throw ContractError("adam: optimizer state does not match the parameter set");
    }
    const auto& e = entries[slot.entry];
    if (e.frozen) continue;
    Tensor t = e.tensor;
    if (!t.has_grad()) continue;
    const auto g = t.grad();
    auto w = t.mutable_data();
    for (std::size_t k = 0; k < w.size(); ++k) {
      slot.m[k] = beta1_ * slot.m[k] + (1.0 - beta1_) * g[k];
      slot.v[k] = beta2_ * slot.v[k] + (1.0 - beta2_) * g[k] * g[k];
      const double mh = slot.m[k] / c1;
      const double vh = slot.v[k] / c2;
      w[k] -= lr * mh / (std::sqrt(vh) + eps_);
    }
  }
}

double MultiStepLr::at(std::size_t episode) const {
  double lr = base;
  for (auto m : milestones)
    if (episode >= m) lr *= gamma;
  return lr;
}

// ---------------------------------------------------------------------------
// Training

DatasetManifest load_dataset(const RunConfig& config) {
  if (!config.data.path.empty()) {
    auto m = load_embedding_file(config.data.path);
    const auto g = m.grid();
    if (g.patches() != config.model.patch_tokens || g.dim != config.model.patch_dim) {
      throw ConfigError("data grid " + to_string(g) + " does not match patch_tokens " +
                        std::to_string(config.model.patch_tokens) + " and patch_dim " +
                        std::to_string(config.model.patch_dim));
    }
    return m;
  }
  return synth_dataset(config.data.synth);
}

TextProvider make_text_provider(const RunConfig& config, const DatasetManifest& manifest) {
  TextProviderConfig tc;
  tc.text_dim = config.model.text_dim;
  tc.latent_dims = class_latent_dims(config.data.synth);
  tc.seed = config.data.synth.seed;
  tc.template_spread = config.data.template_spread;
  return TextProvider(tc, manifest);
}

std::vector<TrainLogRow> train(Model& model, const DatasetManifest& manifest,
                               const TextProvider& text, const TrainCallback& on_episode) {
  const RunConfig& cfg = model.config();
  ParamRegistry& params = model.params();
  Adam adam(params);
  const MultiStepLr schedule{cfg.lr, cfg.gamma, cfg.milestones};
  const bool trainable = params.trainable_count() > 0;
  Rng rng(cfg.seed * 0x9e3779b97f4a7c15ull + 0x5851f42d4c957f2dull);

  std::vector<TrainLogRow> log;
  log.reserve(cfg.episodes_train);
  for (std::size_t ep = 0; ep < cfg.episodes_train; ++ep) {
    const Episode episode = sample_episode(manifest, cfg.episode, Split::kTrain,
                                           SampleMode::kTrain, rng);
    const EpisodeInputs inputs = prepare_episode(episode, text, SampleMode::kTrain, rng);
    params.zero_grad();
    const EpisodeResult r = model.forward(inputs);
    const double lr = schedule.at(ep);
    if (trainable) {
      backward(r.losses.total);
      adam.step(lr);
    }
    TrainLogRow row{ep,
                    lr,
                    r.losses.total.item(),
                    r.losses.q2s.item(),
                    r.losses.s2t.item(),
                    r.losses.q2t.item(),
                    r.correct,
                    inputs.query_frames.size()};
    if (on_episode) on_episode(row);
    log.push_back(row);
  }
  params.zero_grad();
  return log;
}

// ---------------------------------------------------------------------------
// Evaluation

std::pair<double, double> mean_ci95(const std::vector<double>& v) {
  if (v.empty()) return {0.0, 0.0};
  const double n = static_cast<double>(v.size());
  double mean = 0.0;
  for (double x : v) mean += x;
  mean /= n;
  if (v.size() < 2) return {mean, 0.0};
  double ss = 0.0;
  for (double x : v) ss += (x - mean) * (x - mean);
  const double sd = std::sqrt(ss / (n - 1.0));
  return {mean, 1.96 * sd / std::sqrt(n)};
}

namespace {

std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t index) {
  std::uint64_t z = seed * 0xbf58476d1ce4e5b9ull + index + 0x9e3779b97f4a7c15ull;
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
  return z ^ (z >> 31);
}

EpisodeRecord eval_one(const Model& model, const DatasetManifest& manifest,
                       const TextProvider& text, Split split, std::size_t index) {
  const RunConfig& cfg = model.config();
  Rng rng(mix_seed(cfg.seed, index));
  const Episode episode = sample_episode(manifest, cfg.episode, split, SampleMode::kEval, rng);
  const EpisodeInputs inputs = prepare_episode(episode, text, SampleMode::kEval, rng);
  const EpisodeResult r = model.forward(inputs);
  EpisodeRecord rec;
  rec.index = index;
  rec.correct = r.correct;
  rec.queries = inputs.query_frames.size();
  rec.labels = inputs.query_labels;
  rec.predictions = r.predictions;
  for (const auto& b : r.bundles) rec.p.push_back(b.p);
  return rec;
}

}  // namespace

EvalReport evaluate(const Model& model, const DatasetManifest& manifest, const TextProvider& text,
                    std::size_t episodes, Split split) {
  const RunConfig& cfg = model.config();
  if (episodes < 1) throw InputError("evaluate: episode count must be >= 1");
  // Fail fast on split exhaustion before spawning workers.
  {
    Rng probe(cfg.seed);
    sample_episode(manifest, cfg.episode, split, SampleMode::kEval, probe);
  }
  EvalReport report;
  report.config = cfg;
  report.census = param_census(model.params());
  report.episodes.resize(episodes);

  std::size_t workers = cfg.workers ? cfg.workers : std::thread::hardware_concurrency();
  workers = std::clamp<std::size_t>(workers, 1, episodes);
  std::vector<std::exception_ptr> errors(workers);
  std::vector<std::thread> pool;
  for (std::size_t w = 0; w < workers; ++w) {
    pool.emplace_back([&, w] {
      try {
        NoGradGuard guard;
        for (std::size_t i = w; i < episodes; i += workers) {
          report.episodes[i] = eval_one(model, manifest, text, split, i);
        }
      } catch (...) {
        errors[w] = std::current_exception();
      }
    });
  }
  for (auto& t : pool) t.join();
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);

  std::vector<double> acc;
  acc.reserve(episodes);
  for (const auto& r : report.episodes) {
    acc.push_back(static_cast<double>(r.correct) / static_cast<double>(r.queries));
  }
  std::tie(report.accuracy, report.ci95) = mean_ci95(acc);
  return report;
}

// ---------------------------------------------------------------------------
// Census

namespace {

Census tally(const std::vector<std::tuple<ParamGroup, std::size_t, bool>>& items) {
  std::map<ParamGroup, CensusGroup> groups;
  Census c;
  for (const auto& [group, count, frozen] : items) {
    auto& g = groups[group];
    g.name = std::string(to_string(group));
    g.total += count;
    c.total += count;
    if (!frozen) {
      g.tunable += count;
      c.tunable += count;
    }
  }
  for (auto& [k, g] : groups) c.groups.push_back(g);
  return c;
}

}  // namespace

Census param_census(const ModelConfig& config) {
  std::vector<std::tuple<ParamGroup, std::size_t, bool>> items;
  for (const auto& s : census_layout(config)) items.emplace_back(s.group, numel(s.shape), s.frozen);
  return tally(items);
}

Census param_census(const ParamRegistry& params) {
  std::vector<std::tuple<ParamGroup, std::size_t, bool>> items;
  for (const auto& e : params.entries()) items.emplace_back(e.group, e.tensor.numel(), e.frozen);
  return tally(items);
}

// ---------------------------------------------------------------------------
// Checkpoints

namespace {
constexpr char kCheckpointMagic[4] = {'F', 'S', 'C', 'K'};
}

void save_checkpoint(const std::filesystem::path& path, const ParamRegistry& params) {
  detail::ByteWriter w;
  w.bytes(kCheckpointMagic, 4);
  w.u16(kCheckpointVersion);
  w.u32(static_cast<std::uint32_t>(params.entries().size()));
  for (const auto& e : params.entries()) {
    w.u16(static_cast<std::uint16_t>(e.name.size()));
    w.bytes(e.name.data(), e.name.size());
    const auto& shape = e.tensor.shape();
    w.u8(static_cast<std::uint8_t>(shape.size()));
    for (auto d : shape) w.u32(static_cast<std::uint32_t>(d));
    for (double v : e.tensor.data()) w.f32(static_cast<float>(v));
  }
  detail::write_all(path, w.buffer());
}

void load_checkpoint(const std::filesystem::path& path, ParamRegistry& params) {
  detail::ByteReader r(detail::read_all(path));
  if (!r.has(10)) throw FormatError("truncated checkpoint header", r.offset());
  if (std::memcmp(r.here(), kCheckpointMagic, 4) != 0) {
    throw FormatError("bad magic, expected 'FSCK'", 0);
  }
  r.skip(4);
  const auto version = r.u16();
  if (version != kCheckpointVersion) {
    throw FormatError("unsupported checkpoint version " + std::to_string(version), 4);
  }
  const auto count = r.u32();
  if (count != params.entries().size()) {
    throw FormatError("checkpoint holds " + std::to_string(count) + " tensors, model has " +
                          std::to_string(params.entries().size()),
                      6);
  }
  std::vector<std::pair<Tensor, std::vector<double>>> staged;
  for (std::uint32_t i = 0; i < count; ++i) {
    const std::size_t at = r.offset();
    if (!r.has(2)) throw FormatError("truncated tensor header", at);
    const std::size_t len = r.u16();
    if (!r.has(len + 1)) throw FormatError("truncated tensor name", at);
    const std::string name(reinterpret_cast<const char*>(r.here()), len);
    r.skip(len);
    const std::size_t rank = r.u8();
    if (!r.has(rank * 4)) throw FormatError("truncated shape of '" + name + "'", at);
    Shape shape(rank);
    for (auto& d : shape) d = r.u32();
    const auto* entry = params.find(name);
    if (!entry) throw FormatError("checkpoint tensor '" + name + "' is not a model parameter", at);
    if (entry->tensor.shape() != shape) {
      throw FormatError("checkpoint tensor '" + name + "' has shape " + to_string(shape) +
                            ", model expects " + to_string(entry->tensor.shape()),
                        at);
    }
    const std::size_t n = numel(shape);
    if (!r.has(n * 4)) throw FormatError("truncated payload of '" + name + "'", at);
    std::vector<double> values(n);
    for (auto& v : values) v = r.f32();
    staged.emplace_back(entry->tensor, std::move(values));
  }
  if (r.remaining() != 0) throw FormatError("trailing bytes after last tensor", r.offset());
  for (auto& [t, values] : staged) {
    Tensor handle = t;
    std::copy(values.begin(), values.end(), handle.mutable_data().begin());
  }
}

// ---------------------------------------------------------------------------
// Reports

std::string report_json(const EvalReport& report, bool include_episodes) {
  nlohmann::ordered_json j;
  j["accuracy"] = report.accuracy;
  j["ci95"] = report.ci95;
  j["episodes"] = report.episodes.size();
  j["census"]["total"] = report.census.total;
  j["census"]["tunable"] = report.census.tunable;
  for (const auto& g : report.census.groups) {
    j["census"]["groups"][g.name] = {{"total", g.total}, {"tunable", g.tunable}};
  }
  std::istringstream cfg(dump_config(report.config));
  std::string line;
  while (std::getline(cfg, line)) {
    const auto eq = line.find(" = ");
    if (eq != std::string::npos) j["config"][line.substr(0, eq)] = line.substr(eq + 3);
  }
  if (include_episodes) {
    auto& arr = j["per_episode"] = nlohmann::ordered_json::array();
    for (const auto& e : report.episodes) {
      arr.push_back({{"index", e.index},
                     {"correct", e.correct},
                     {"queries", e.queries},
                     {"labels", e.labels},
                     {"predictions", e.predictions},
                     {"p", e.p}});
    }
  }
  return j.dump(2);
}

void write_episode_csv(const std::filesystem::path& path, const EvalReport& report) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw InputError("cannot write '" + path.string() + "'");
  out << "episode,query,label,prediction,correct,p\n";
  out.precision(9);
  for (const auto& e : report.episodes) {
    for (std::size_t q = 0; q < e.labels.size(); ++q) {
      out << e.index << ',' << q << ',' << e.labels[q] << ',' << e.predictions[q] << ','
          << (e.labels[q] == e.predictions[q] ? 1 : 0) << ',';
      for (std::size_t k = 0; k < e.p[q].size(); ++k) out << (k ? " " : "") << e.p[q][k];
      out << '\n';
    }
  }
}

void write_train_log(const std::filesystem::path& path, const std::vector<TrainLogRow>& log) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw InputError("cannot write '" + path.string() + "'");
  out << "episode,lr,loss,loss_q2s,loss_s2t,loss_q2t,correct,queries\n";
  out.precision(10);
  for (const auto& r : log) {
    out << r.episode << ',' << r.lr << ',' << r.loss << ',' << r.q2s << ',' << r.s2t << ','
        << r.q2t << ',' << r.correct << ',' << r.queries << '\n';
  }
}

}  // namespace fsar

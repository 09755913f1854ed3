// Copyright 2026 The fsar Authors
// SPDX-License-Identifier: Apache-2.0

#include "fsar/data.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numeric>
#include <set>

#include "fsar/errors.hpp"

namespace fsar {

std::string_view to_string(Split split) {
  switch (split) {
    case Split::kTrain: return "train";
    case Split::kVal: return "val";
    case Split::kTest: return "test";
  }
  return "train";
}

Split parse_split(std::string_view text) {
  if (text == "train") return Split::kTrain;
  if (text == "val") return Split::kVal;
  if (text == "test") return Split::kTest;
  throw InputError("unknown split '" + std::string(text) + "'");
}

std::string to_string(const GridShape& grid) {
  return std::to_string(grid.rows) + "x" + std::to_string(grid.cols) + "x" +
         std::to_string(grid.dim);
}

std::uint64_t fnv1a64(std::string_view text) {
  std::uint64_t h = 14695981039346656037ull;
  for (unsigned char c : text) {
    h ^= c;
    h *= 1099511628211ull;
  }
  return h;
}

std::vector<std::uint32_t> DatasetManifest::classes_in(Split split) const {
  std::vector<std::uint32_t> out;
  for (const auto& [id, info] : classes)
    if (info.split == split) out.push_back(id);
  return out;
}

GridShape DatasetManifest::grid() const {
  if (records.empty()) throw InputError("manifest has no records");
  return records.front().grid;
}

void DatasetManifest::validate() const {
  for (std::size_t i = 0; i < records.size(); ++i) {
    const auto& r = records[i];
    if (!classes.count(r.class_id)) {
      throw InputError("record " + std::to_string(i) + " has unknown class id " +
                       std::to_string(r.class_id));
    }
    if (r.grid != records.front().grid) {
      throw InputError("record " + std::to_string(i) + " grid " + to_string(r.grid) +
                       " differs from " + to_string(records.front().grid));
    }
    if (r.payload.size() != std::size_t{r.frame_count} * r.grid.frame_size()) {
      throw InputError("record " + std::to_string(i) + " payload length mismatch");
    }
  }
}

// ---------------------------------------------------------------------------
// Frame selection and episodes

std::vector<std::size_t> tsn_sample(std::size_t frame_count, std::size_t frames, SampleMode mode,
                                    Rng& rng) {
  if (frames < 1 || frame_count < frames) {
    throw InputError("tsn_sample: need frame_count >= frames >= 1, got frame_count=" +
                     std::to_string(frame_count) + " frames=" + std::to_string(frames));
  }
  std::vector<std::size_t> out(frames);
  for (std::size_t i = 0; i < frames; ++i) {
    const std::size_t begin = frame_count * i / frames;
    const std::size_t end = frame_count * (i + 1) / frames;
    const std::size_t length = end - begin;
    if (mode == SampleMode::kEval) {
      out[i] = begin + length / 2;
    } else {
      std::uniform_int_distribution<std::size_t> pick(0, length - 1);
      out[i] = begin + pick(rng);
    }
  }
  return out;
}

void validate(const Episode& episode) {
  const auto& s = episode.spec;
  if (episode.class_ids.size() != s.way) throw ContractError("episode: class count != way");
  if (std::set<std::uint32_t>(episode.class_ids.begin(), episode.class_ids.end()).size() != s.way) {
    throw ContractError("episode: support classes are not distinct");
  }
  if (episode.support.size() != s.way * s.shot) throw ContractError("episode: support size != way*shot");
  std::vector<std::size_t> per_class(s.way, 0);
  std::set<const VideoRecord*> support_videos;
  for (const auto& v : episode.support) {
    if (v.label >= s.way) throw ContractError("episode: support label out of range");
    if (v.record->class_id != episode.class_ids[v.label]) {
      throw ContractError("episode: support video class does not match its label");
    }
    ++per_class[v.label];
    support_videos.insert(v.record);
  }
  for (std::size_t c : per_class)
    if (c != s.shot) throw ContractError("episode: a support class does not have exactly K videos");
  if (episode.query.empty()) throw ContractError("episode: no query videos");
  for (const auto& v : episode.query) {
    if (v.label >= s.way || v.record->class_id != episode.class_ids[v.label]) {
      throw ContractError("episode: query class is not among the support classes");
    }
    if (support_videos.count(v.record)) throw ContractError("episode: query video leaks into support");
  }
}

Episode sample_episode(const DatasetManifest& manifest, const EpisodeSpec& spec, Split split,
                       SampleMode mode, Rng& rng) {
  if (spec.way < 1 || spec.shot < 1 || spec.frames < 1) {
    throw InputError("sample_episode: way, shot and frames must be >= 1");
  }
  const std::size_t needed = spec.shot + spec.queries;
  std::map<std::uint32_t, std::vector<std::size_t>> by_class;
  for (auto id : manifest.classes_in(split)) by_class[id];
  for (std::size_t i = 0; i < manifest.records.size(); ++i) {
    auto it = by_class.find(manifest.records[i].class_id);
    if (it != by_class.end() && manifest.records[i].frame_count >= spec.frames) {
      it->second.push_back(i);
    }
  }
  std::vector<std::uint32_t> eligible;
  for (const auto& [id, vids] : by_class)
    if (vids.size() >= needed) eligible.push_back(id);
  if (eligible.size() < spec.way) {
    throw InputError("sample_episode: split '" + std::string(to_string(split)) + "' has " +
                     std::to_string(eligible.size()) + " classes with >= " +
                     std::to_string(needed) + " videos of >= " + std::to_string(spec.frames) +
                     " frames, need " + std::to_string(spec.way) + " (deficit " +
                     std::to_string(spec.way - eligible.size()) + ")");
  }
  std::shuffle(eligible.begin(), eligible.end(), rng);
  eligible.resize(spec.way);

  Episode ep;
  ep.spec = spec;
  ep.class_ids = eligible;
  for (std::size_t label = 0; label < spec.way; ++label) {
    const auto id = eligible[label];
    ep.class_text_seeds.push_back(manifest.classes.at(id).text_seed);
    auto vids = by_class[id];
    std::shuffle(vids.begin(), vids.end(), rng);
    for (std::size_t k = 0; k < needed; ++k) {
      const VideoRecord& rec = manifest.records[vids[k]];
      EpisodeVideo v{&rec, tsn_sample(rec.frame_count, spec.frames, mode, rng), label};
      (k < spec.shot ? ep.support : ep.query).push_back(std::move(v));
    }
  }
  return ep;
}

Tensor frames_tensor(const EpisodeVideo& video) {
  const auto& rec = *video.record;
  const std::size_t fs = rec.grid.frame_size();
  std::vector<double> values;
  values.reserve(video.frames.size() * fs);
  for (std::size_t f : video.frames) {
    if (f >= rec.frame_count) throw InputError("frame index out of range");
    const float* src = rec.payload.data() + f * fs;
    values.insert(values.end(), src, src + fs);
  }
  return Tensor::from({video.frames.size(), rec.grid.patches(), rec.grid.dim}, std::move(values));
}

// ---------------------------------------------------------------------------
// Synthetic data

namespace {

std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ull;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ull;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebull;
  return x ^ (x >> 31);
}

std::vector<double> gaussian(std::size_t n, double stddev, Rng& rng) {
  std::normal_distribution<double> nd(0.0, stddev);
  std::vector<double> v(n);
  for (auto& x : v) x = nd(rng);
  return v;
}

// Columns of a random orthogonal matrix, stored column-major (n columns of n).
std::vector<std::vector<double>> random_orthogonal(std::size_t n, Rng& rng) {
  std::vector<std::vector<double>> cols;
  while (cols.size() < n) {
    auto v = gaussian(n, 1.0, rng);
    for (const auto& c : cols) {
      double dot = 0.0;
      for (std::size_t i = 0; i < n; ++i) dot += v[i] * c[i];
      for (std::size_t i = 0; i < n; ++i) v[i] -= dot * c[i];
    }
    double norm = 0.0;
    for (double x : v) norm += x * x;
    norm = std::sqrt(norm);
    if (norm < 1e-8) continue;
    for (double& x : v) x /= norm;
    cols.push_back(std::move(v));
  }
  return cols;
}

}  // namespace

std::size_t class_latent_dims(const SynthConfig& config) {
  const std::size_t dim = config.grid.dim;
  const std::size_t k = config.class_dims ? config.class_dims : std::max<std::size_t>(1, dim / 2);
  return std::min(k, dim);
}

ClassLatent class_latent(std::uint64_t text_seed, std::size_t dims) {
  Rng rng(splitmix64(text_seed));
  const double sd = 1.0 / std::sqrt(static_cast<double>(dims));
  ClassLatent out;
  out.direction = gaussian(dims, sd, rng);
  out.drift = gaussian(dims, sd, rng);
  return out;
}

std::vector<Split> class_split_plan(std::size_t classes) {
  const auto n_train = static_cast<std::size_t>(std::llround(0.64 * static_cast<double>(classes)));
  const auto n_val = static_cast<std::size_t>(std::llround(0.12 * static_cast<double>(classes)));
  std::vector<Split> plan(classes, Split::kTest);
  for (std::size_t i = 0; i < classes; ++i) {
    if (i < n_train) plan[i] = Split::kTrain;
    else if (i < n_train + n_val) plan[i] = Split::kVal;
  }
  return plan;
}

DatasetManifest synth_dataset(const SynthConfig& config) {
  if (config.classes < 1 || config.videos_per_class < 1 || config.frames < 1 ||
      config.grid.frame_size() < 1) {
    throw InputError("synth_dataset: all counts must be >= 1");
  }
  if (config.frames > 0xffff) throw InputError("synth_dataset: frame count exceeds u16");
  const std::size_t fs = config.grid.frame_size();
  const std::size_t np = config.grid.patches();
  const std::size_t dim = config.grid.dim;
  const std::size_t kc = class_latent_dims(config);

  // One random orthogonal basis of the patch space, shared by all patches.
  // Its first kc columns carry the class latent (the same in every patch);
  // the remaining columns of every patch carry that patch's background.
  Rng rng(config.seed);
  const auto basis = random_orthogonal(dim, rng);
  const std::size_t kn = np * (dim - kc);
  const auto plan = class_split_plan(config.classes);

  DatasetManifest m;
  for (std::size_t c = 0; c < config.classes; ++c) {
    char tag[32];
    std::snprintf(tag, sizeof tag, "%08llx",
                  static_cast<unsigned long long>(splitmix64(config.seed ^ (c * 0x51ed27ull)) &
                                                  0xffffffffull));
    ClassInfo info;
    info.name = "class_" + std::to_string(c) + "_" + tag;
    info.split = plan[c];
    info.text_seed = fnv1a64(info.name);
    m.classes.emplace(static_cast<std::uint32_t>(c), info);
  }

  const double bg_sd = kn ? config.background / std::sqrt(static_cast<double>(kn)) : 0.0;
  const double noise_sd = config.noise / std::sqrt(static_cast<double>(fs));
  std::vector<double> latent(kc);
  std::vector<double> frame(fs);
  for (std::size_t c = 0; c < config.classes; ++c) {
    const auto lat = class_latent(m.classes.at(static_cast<std::uint32_t>(c)).text_seed, kc);
    for (std::size_t v = 0; v < config.videos_per_class; ++v) {
      VideoRecord rec;
      rec.class_id = static_cast<std::uint32_t>(c);
      rec.frame_count = static_cast<std::uint16_t>(config.frames);
      rec.grid = config.grid;
      rec.payload.reserve(config.frames * fs);
      const auto bg = gaussian(kn, bg_sd, rng);
      for (std::size_t f = 0; f < config.frames; ++f) {
        const double t = config.frames > 1
                             ? static_cast<double>(f) / static_cast<double>(config.frames - 1) - 0.5
                             : 0.0;
        for (std::size_t i = 0; i < kc; ++i) {
          latent[i] = lat.direction[i] + config.drift * t * lat.drift[i];
        }
        std::fill(frame.begin(), frame.end(), 0.0);
        for (std::size_t p = 0; p < np; ++p) {
          double* out = &frame[p * dim];
          for (std::size_t i = 0; i < kc; ++i)
            for (std::size_t k = 0; k < dim; ++k) out[k] += latent[i] * basis[i][k];
          const double* b = &bg[p * (dim - kc)];
          for (std::size_t j = kc; j < dim; ++j)
            for (std::size_t k = 0; k < dim; ++k) out[k] += b[j - kc] * basis[j][k];
        }
        if (noise_sd > 0.0) {
          std::normal_distribution<double> nd(0.0, noise_sd);
          for (double& x : frame) x += nd(rng);
        }
        for (double x : frame) rec.payload.push_back(static_cast<float>(x));
      }
      m.records.push_back(std::move(rec));
    }
  }
  return m;
}

}  // namespace fsar

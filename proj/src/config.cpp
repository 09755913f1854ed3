// Copyright 2026 The fsar Authors
// SPDX-License-Identifier: Apache-2.0

#include "fsar/config.hpp"

#include <cmath>
#include <fstream>
#include <functional>
#include <sstream>

#include "fsar/errors.hpp"

namespace fsar {

std::size_t ModelConfig::bottleneck() const {
  return static_cast<std::size_t>(std::floor(adapter_ratio * static_cast<double>(dim)));
}

void ModelConfig::validate() const {
  if (layers < 1) throw ConfigError("layers must be >= 1");
  if (dim < 1 || heads < 1 || dim % heads != 0) {
    throw ConfigError("dim " + std::to_string(dim) + " is not divisible by heads " +
                      std::to_string(heads));
  }
  if (patch_tokens < 1) throw ConfigError("patch_tokens must be >= 1");
  if (patch_dim < 1) throw ConfigError("patch_dim must be >= 1");
  if (frames < 2) throw ConfigError("frames must be >= 2");
  if (text_dim < 1) throw ConfigError("text_dim must be >= 1");
  if (mlp_ratio < 1) throw ConfigError("mlp_ratio must be >= 1");
  if (!(adapter_ratio > 0.0 && adapter_ratio < 1.0)) {
    throw ConfigError("adapter_ratio must lie in (0, 1)");
  }
  if (bottleneck() < 1) throw ConfigError("adapter bottleneck floor(adapter_ratio * dim) is 0");
  if (!std::isfinite(joint_scale_r)) throw ConfigError("joint_scale_r must be finite");
  if (tpcm_heads < 1 || text_dim % tpcm_heads != 0) {
    throw ConfigError("text_dim must be divisible by tpcm_heads");
  }
}

void MetricConfig::validate() const {
  if (metric != "otam" && metric != "bimhm" && metric != "trx") {
    throw ConfigError("unknown metric '" + metric + "' (expected otam, bimhm or trx)");
  }
  if (!(alpha >= 0.0 && alpha <= 1.0)) throw ConfigError("alpha must lie in [0, 1]");
  if (!(tau > 0.0)) throw ConfigError("tau must be > 0");
  if (!(tau_d > 0.0)) throw ConfigError("tau_d must be > 0");
  if (!(lambda > 0.0)) throw ConfigError("lambda must be > 0");
  if (!(trx_temperature > 0.0)) throw ConfigError("trx_temperature must be > 0");
  if (omega.empty()) throw ConfigError("omega must list at least one tuple size");
  for (auto w : omega)
    if (w < 1) throw ConfigError("omega entries must be >= 1");
  if (!(label_smoothing >= 0.0 && label_smoothing < 1.0)) {
    throw ConfigError("label_smoothing must lie in [0, 1)");
  }
}

void RunConfig::validate() const {
  model.validate();
  metric.validate();
  if (episode.way < 1 || episode.shot < 1 || episode.queries < 1) {
    throw ConfigError("way, shot and queries must be >= 1");
  }
  if (episode.frames != model.frames) {
    throw ConfigError("episode frames differ from model frames");
  }
  if (episodes_train < 1 || episodes_eval < 1) throw ConfigError("episode counts must be >= 1");
  if (!(lr > 0.0)) throw ConfigError("lr must be > 0");
  if (!(gamma > 0.0 && gamma <= 1.0)) throw ConfigError("gamma must lie in (0, 1]");
  for (std::size_t i = 1; i < milestones.size(); ++i) {
    if (milestones[i] <= milestones[i - 1]) {
      throw ConfigError("milestones must be strictly increasing");
    }
  }
  for (auto w : metric.omega) {
    if (w > model.frames) throw ConfigError("omega tuple size exceeds frames");
  }
}

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

std::size_t to_size(const std::string& v) {
  std::size_t pos = 0;
  const long long x = std::stoll(v, &pos);
  if (pos != v.size() || x < 0) throw std::invalid_argument(v);
  return static_cast<std::size_t>(x);
}

double to_double(const std::string& v) {
  std::size_t pos = 0;
  const double x = std::stod(v, &pos);
  if (pos != v.size()) throw std::invalid_argument(v);
  return x;
}

bool to_bool(const std::string& v) {
  if (v == "true" || v == "1" || v == "on" || v == "yes") return true;
  if (v == "false" || v == "0" || v == "off" || v == "no") return false;
  throw std::invalid_argument(v);
}

std::vector<std::size_t> to_list(const std::string& v) {
  std::vector<std::size_t> out;
  if (trim(v).empty()) return out;
  std::stringstream ss(v);
  std::string item;
  while (std::getline(ss, item, ',')) out.push_back(to_size(trim(item)));
  return out;
}

std::string list_text(const std::vector<std::size_t>& v) {
  std::string s;
  for (std::size_t i = 0; i < v.size(); ++i) s += (i ? "," : "") + std::to_string(v[i]);
  return s;
}

using Setter = std::function<void(RunConfig&, const std::string&)>;

const std::map<std::string, Setter>& setters() {
  static const std::map<std::string, Setter> table = {
      {"layers", [](RunConfig& c, const std::string& v) { c.model.layers = to_size(v); }},
      {"dim", [](RunConfig& c, const std::string& v) { c.model.dim = to_size(v); }},
      {"heads", [](RunConfig& c, const std::string& v) { c.model.heads = to_size(v); }},
      {"patch_tokens",
       [](RunConfig& c, const std::string& v) { c.model.patch_tokens = to_size(v); }},
      {"patch_dim", [](RunConfig& c, const std::string& v) { c.model.patch_dim = to_size(v); }},
      {"frames",
       [](RunConfig& c, const std::string& v) { c.model.frames = c.episode.frames = to_size(v); }},
      {"text_dim", [](RunConfig& c, const std::string& v) { c.model.text_dim = to_size(v); }},
      {"mlp_ratio", [](RunConfig& c, const std::string& v) { c.model.mlp_ratio = to_size(v); }},
      {"adapter_ratio",
       [](RunConfig& c, const std::string& v) { c.model.adapter_ratio = to_double(v); }},
      {"joint_scale_r",
       [](RunConfig& c, const std::string& v) { c.model.joint_scale_r = to_double(v); }},
      {"joint_skip", [](RunConfig& c, const std::string& v) { c.model.joint_skip = to_bool(v); }},
      {"proj_trainable",
       [](RunConfig& c, const std::string& v) { c.model.proj_trainable = to_bool(v); }},
      {"tpcm_heads", [](RunConfig& c, const std::string& v) { c.model.tpcm_heads = to_size(v); }},
      {"use_adapters",
       [](RunConfig& c, const std::string& v) { c.model.use_adapters = to_bool(v); }},
      {"use_tpcm", [](RunConfig& c, const std::string& v) { c.model.use_tpcm = to_bool(v); }},
      {"text_injection",
       [](RunConfig& c, const std::string& v) { c.model.text_injection = to_bool(v); }},
      {"text_layers", [](RunConfig& c, const std::string& v) { c.model.text_layers = to_size(v); }},
      {"text_width", [](RunConfig& c, const std::string& v) { c.model.text_width = to_size(v); }},
      {"text_vocab", [](RunConfig& c, const std::string& v) { c.model.text_vocab = to_size(v); }},
      {"text_context",
       [](RunConfig& c, const std::string& v) { c.model.text_context = to_size(v); }},
      {"seed",
       [](RunConfig& c, const std::string& v) { c.seed = c.model.seed = to_size(v); }},
      {"metric", [](RunConfig& c, const std::string& v) { c.metric.metric = v; }},
      {"alpha", [](RunConfig& c, const std::string& v) { c.metric.alpha = to_double(v); }},
      {"tau", [](RunConfig& c, const std::string& v) { c.metric.tau = to_double(v); }},
      {"tau_d", [](RunConfig& c, const std::string& v) { c.metric.tau_d = to_double(v); }},
      {"lambda", [](RunConfig& c, const std::string& v) { c.metric.lambda = to_double(v); }},
      {"omega", [](RunConfig& c, const std::string& v) { c.metric.omega = to_list(v); }},
      {"trx_temperature",
       [](RunConfig& c, const std::string& v) { c.metric.trx_temperature = to_double(v); }},
      {"label_smoothing",
       [](RunConfig& c, const std::string& v) { c.metric.label_smoothing = to_double(v); }},
      {"way", [](RunConfig& c, const std::string& v) { c.episode.way = to_size(v); }},
      {"shot", [](RunConfig& c, const std::string& v) { c.episode.shot = to_size(v); }},
      {"queries", [](RunConfig& c, const std::string& v) { c.episode.queries = to_size(v); }},
      {"episodes_train",
       [](RunConfig& c, const std::string& v) { c.episodes_train = to_size(v); }},
      {"episodes_eval", [](RunConfig& c, const std::string& v) { c.episodes_eval = to_size(v); }},
      {"lr", [](RunConfig& c, const std::string& v) { c.lr = to_double(v); }},
      {"milestones", [](RunConfig& c, const std::string& v) { c.milestones = to_list(v); }},
      {"gamma", [](RunConfig& c, const std::string& v) { c.gamma = to_double(v); }},
      {"workers", [](RunConfig& c, const std::string& v) { c.workers = to_size(v); }},
      {"output", [](RunConfig& c, const std::string& v) { c.output = v; }},
      {"data", [](RunConfig& c, const std::string& v) { c.data.path = v; }},
      {"template_spread",
       [](RunConfig& c, const std::string& v) { c.data.template_spread = to_double(v); }},
      {"synth_classes",
       [](RunConfig& c, const std::string& v) { c.data.synth.classes = to_size(v); }},
      {"synth_videos",
       [](RunConfig& c, const std::string& v) { c.data.synth.videos_per_class = to_size(v); }},
      {"synth_frames",
       [](RunConfig& c, const std::string& v) { c.data.synth.frames = to_size(v); }},
      {"synth_seed", [](RunConfig& c, const std::string& v) { c.data.synth.seed = to_size(v); }},
      {"synth_noise",
       [](RunConfig& c, const std::string& v) { c.data.synth.noise = to_double(v); }},
      {"synth_background",
       [](RunConfig& c, const std::string& v) { c.data.synth.background = to_double(v); }},
      {"synth_drift",
       [](RunConfig& c, const std::string& v) { c.data.synth.drift = to_double(v); }},
      {"synth_class_dims",
       [](RunConfig& c, const std::string& v) { c.data.synth.class_dims = to_size(v); }},
      {"grid_rows",
       [](RunConfig& c, const std::string& v) {
         c.data.synth.grid.rows = static_cast<std::uint16_t>(to_size(v));
       }},
      {"grid_cols",
       [](RunConfig& c, const std::string& v) {
         c.data.synth.grid.cols = static_cast<std::uint16_t>(to_size(v));
       }},
  };
  return table;
}

}  // namespace

RunConfig parse_config(const std::string& text) {
  RunConfig c;
  c.episode.frames = c.model.frames;
  std::istringstream in(text);
  std::string raw;
  std::size_t line_no = 0;
  while (std::getline(in, raw)) {
    ++line_no;
    const auto hash = raw.find('#');
    const std::string line = trim(hash == std::string::npos ? raw : raw.substr(0, hash));
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      throw ConfigError("line " + std::to_string(line_no) + ": expected 'key = value'");
    }
    const std::string key = trim(line.substr(0, eq));
    const std::string value = trim(line.substr(eq + 1));
    const auto it = setters().find(key);
    if (it == setters().end()) {
      throw ConfigError("line " + std::to_string(line_no) + ": unknown key '" + key + "'");
    }
    try {
      it->second(c, value);
    } catch (const std::invalid_argument&) {
      throw ConfigError("line " + std::to_string(line_no) + ": bad value '" + value +
                        "' for '" + key + "'");
    } catch (const std::out_of_range&) {
      throw ConfigError("line " + std::to_string(line_no) + ": value out of range for '" + key +
                        "'");
    }
  }
  // The synthetic grid feeds the patch shape unless a file supplies it.
  c.data.synth.grid.dim = static_cast<std::uint16_t>(c.model.patch_dim);
  if (c.data.path.empty() && c.data.synth.grid.patches() != c.model.patch_tokens) {
    throw ConfigError("grid_rows * grid_cols must equal patch_tokens");
  }
  c.validate();
  return c;
}

RunConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw InputError("cannot open config '" + path.string() + "'");
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_config(ss.str());
}

std::string dump_config(const RunConfig& c) {
  std::ostringstream o;
  o.precision(17);
  const auto b = [](bool x) { return x ? "true" : "false"; };
  o << "layers = " << c.model.layers << "\n"
    << "dim = " << c.model.dim << "\n"
    << "heads = " << c.model.heads << "\n"
    << "patch_tokens = " << c.model.patch_tokens << "\n"
    << "patch_dim = " << c.model.patch_dim << "\n"
    << "frames = " << c.model.frames << "\n"
    << "text_dim = " << c.model.text_dim << "\n"
    << "mlp_ratio = " << c.model.mlp_ratio << "\n"
    << "adapter_ratio = " << c.model.adapter_ratio << "\n"
    << "joint_scale_r = " << c.model.joint_scale_r << "\n"
    << "joint_skip = " << b(c.model.joint_skip) << "\n"
    << "proj_trainable = " << b(c.model.proj_trainable) << "\n"
    << "tpcm_heads = " << c.model.tpcm_heads << "\n"
    << "use_adapters = " << b(c.model.use_adapters) << "\n"
    << "use_tpcm = " << b(c.model.use_tpcm) << "\n"
    << "text_injection = " << b(c.model.text_injection) << "\n"
    << "text_layers = " << c.model.text_layers << "\n"
    << "text_width = " << c.model.text_width << "\n"
    << "text_vocab = " << c.model.text_vocab << "\n"
    << "text_context = " << c.model.text_context << "\n"
    << "seed = " << c.seed << "\n"
    << "metric = " << c.metric.metric << "\n"
    << "alpha = " << c.metric.alpha << "\n"
    << "tau = " << c.metric.tau << "\n"
    << "tau_d = " << c.metric.tau_d << "\n"
    << "lambda = " << c.metric.lambda << "\n"
    << "omega = " << list_text(c.metric.omega) << "\n"
    << "trx_temperature = " << c.metric.trx_temperature << "\n"
    << "label_smoothing = " << c.metric.label_smoothing << "\n"
    << "way = " << c.episode.way << "\n"
    << "shot = " << c.episode.shot << "\n"
    << "queries = " << c.episode.queries << "\n"
    << "episodes_train = " << c.episodes_train << "\n"
    << "episodes_eval = " << c.episodes_eval << "\n"
    << "lr = " << c.lr << "\n"
    << "milestones = " << list_text(c.milestones) << "\n"
    << "gamma = " << c.gamma << "\n"
    << "workers = " << c.workers << "\n"
    << "output = " << c.output.string() << "\n";
  if (!c.data.path.empty()) o << "data = " << c.data.path.string() << "\n";
  o << "template_spread = " << c.data.template_spread << "\n"
    << "synth_classes = " << c.data.synth.classes << "\n"
    << "synth_videos = " << c.data.synth.videos_per_class << "\n"
    << "synth_frames = " << c.data.synth.frames << "\n"
    << "synth_seed = " << c.data.synth.seed << "\n"
    << "synth_noise = " << c.data.synth.noise << "\n"
    << "synth_background = " << c.data.synth.background << "\n"
    << "synth_drift = " << c.data.synth.drift << "\n"
    << "synth_class_dims = " << c.data.synth.class_dims << "\n"
    << "grid_rows = " << c.data.synth.grid.rows << "\n"
    << "grid_cols = " << c.data.synth.grid.cols << "\n";
  return o.str();
}

}  // namespace fsar

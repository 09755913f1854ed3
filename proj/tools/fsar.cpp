// Copyright 2026 The fsar Authors
// SPDX-License-Identifier: Apache-2.0

// Command-line driver: train, eval, census, gen-data.

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>

#include <CLI11.hpp>

#include "fsar/config.hpp"
#include "fsar/data.hpp"
#include "fsar/errors.hpp"
#include "fsar/model.hpp"
#include "fsar/trainer.hpp"

namespace {

int run_train(const std::string& config_path, const std::string& out_dir, bool quiet) {
  auto config = fsar::load_config(config_path);
  config.output = out_dir;
  std::filesystem::create_directories(out_dir);
  const auto manifest = fsar::load_dataset(config);
  const auto text = fsar::make_text_provider(config, manifest);
  fsar::Model model(config);
  const std::size_t every = std::max<std::size_t>(1, config.episodes_train / 20);
  std::size_t window_correct = 0, window_queries = 0;
  double window_loss = 0.0;
  const auto log = fsar::train(model, manifest, text, [&](const fsar::TrainLogRow& r) {
    window_correct += r.correct;
    window_queries += r.queries;
    window_loss += r.loss;
    if (!quiet && (r.episode + 1) % every == 0) {
      std::printf("episode %6zu  lr %.2e  loss %.4f  train-acc %.3f\n", r.episode + 1, r.lr,
                  window_loss / static_cast<double>(every),
                  static_cast<double>(window_correct) / static_cast<double>(window_queries));
      window_correct = window_queries = 0;
      window_loss = 0.0;
    }
  });
  const auto dir = std::filesystem::path(out_dir);
  fsar::save_checkpoint(dir / "checkpoint.fsck", model.params());
  fsar::write_train_log(dir / "train_log.csv", log);
  std::ofstream(dir / "config.txt") << fsar::dump_config(config);
  std::printf("wrote %s\n", (dir / "checkpoint.fsck").string().c_str());
  return 0;
}

int run_eval(const std::string& config_path, const std::string& checkpoint, std::size_t episodes,
             bool json, std::string csv_path, const std::string& split_name) {
  auto config = fsar::load_config(config_path);
  if (episodes) config.episodes_eval = episodes;
  const auto manifest = fsar::load_dataset(config);
  const auto text = fsar::make_text_provider(config, manifest);
  fsar::Model model(config);
  if (!checkpoint.empty()) fsar::load_checkpoint(checkpoint, model.params());
  const auto report = fsar::evaluate(model, manifest, text, config.episodes_eval,
                                     fsar::parse_split(split_name));
  if (csv_path.empty()) {
    csv_path = checkpoint.empty() ? std::string("episodes.csv") : checkpoint + ".episodes.csv";
  }
  fsar::write_episode_csv(csv_path, report);
  if (json) {
    std::cout << fsar::report_json(report) << "\n";
  } else {
    std::printf("accuracy %.4f +- %.4f over %zu episodes (per-episode csv: %s)\n", report.accuracy,
                report.ci95, report.episodes.size(), csv_path.c_str());
  }
  return 0;
}

int run_census(const std::string& config_path) {
  const auto config = fsar::load_config(config_path);
  const auto c = fsar::param_census(config.model);
  std::printf("%-22s %14s %14s\n", "group", "total", "tunable");
  for (const auto& g : c.groups) {
    std::printf("%-22s %14zu %14zu\n", g.name.c_str(), g.total, g.tunable);
  }
  std::printf("%-22s %14zu %14zu\n", "all", c.total, c.tunable);
  std::printf("tunable/total %.6f\n", c.ratio());
  return 0;
}

int run_gen_data(const fsar::SynthConfig& synth, const std::string& out) {
  const auto manifest = fsar::synth_dataset(synth);
  fsar::write_embedding_file(out, manifest);
  std::printf("wrote %zu videos of %zu classes to %s\n", manifest.records.size(),
              manifest.classes.size(), out.c_str());
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Few-shot video recognition with multimodal adapters"};
  app.require_subcommand(1);

  std::string config_path, out_dir, checkpoint, csv_path, split_name = "test";
  std::size_t episodes = 0;
  bool json = false, quiet = false;

  auto* train = app.add_subcommand("train", "episodic training");
  train->add_option("--config", config_path, "config file")->required();
  train->add_option("--out", out_dir, "output directory")->required();
  train->add_flag("--quiet", quiet, "no progress lines");

  auto* eval = app.add_subcommand("eval", "episodic evaluation");
  eval->add_option("--config", config_path, "config file")->required();
  eval->add_option("--checkpoint", checkpoint, "trained checkpoint (omit for initial weights)");
  eval->add_option("--episodes", episodes, "episode count (default: episodes_eval)");
  eval->add_option("--csv", csv_path, "per-episode csv (default: <checkpoint>.episodes.csv)");
  eval->add_option("--split", split_name, "train, val or test")->default_val("test");
  eval->add_flag("--json", json, "print the report as JSON");

  auto* census = app.add_subcommand("census", "parameter census");
  census->add_option("--config", config_path, "config file")->required();

  fsar::SynthConfig synth;
  std::string data_out;
  auto* gen = app.add_subcommand("gen-data", "write a synthetic embedding file");
  gen->add_option("--classes", synth.classes)->required();
  gen->add_option("--videos", synth.videos_per_class, "videos per class")->required();
  gen->add_option("--frames", synth.frames)->required();
  gen->add_option("--seed", synth.seed)->required();
  gen->add_option("--out", data_out)->required();
  gen->add_option("--noise", synth.noise, "per-frame noise norm");
  gen->add_option("--background", synth.background, "per-video nuisance norm");
  gen->add_option("--rows", synth.grid.rows, "grid rows")->default_val(2);
  gen->add_option("--cols", synth.grid.cols, "grid cols")->default_val(2);
  gen->add_option("--dim", synth.grid.dim, "patch feature length")->default_val(12);

  CLI11_PARSE(app, argc, argv);

  try {
    if (*train) return run_train(config_path, out_dir, quiet);
    if (*eval) return run_eval(config_path, checkpoint, episodes, json, csv_path, split_name);
    if (*census) return run_census(config_path);
    if (*gen) return run_gen_data(synth, data_out);
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
  return 0;
}

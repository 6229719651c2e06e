// ergl: feature extraction, training sweeps, evaluation and inference.

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "CLI11.hpp"

#include "ergl/checkpoint.hpp"
#include "ergl/config.hpp"
#include "ergl/csv.hpp"
#include "ergl/dataset.hpp"
#include "ergl/errors.hpp"
#include "ergl/features.hpp"
#include "ergl/gradient_suite.hpp"
#include "ergl/pseudo_labels.hpp"
#include "ergl/synth.hpp"
#include "ergl/train.hpp"

namespace fs = std::filesystem;
using namespace ergl;
using namespace ergl::pipeline;

namespace {

struct ExtractArgs {
  std::string input, output, manifest, out_dir;
};

int run_extract(const ExtractArgs& a) {
  if (!a.input.empty()) {
    if (a.output.empty()) throw ConfigError("extract-features: --input needs --output");
    features::write_mel_file(a.output, features::load_features(a.input));
    std::cout << "wrote " << a.output << '\n';
    return 0;
  }
  if (a.manifest.empty() || a.out_dir.empty()) {
    throw ConfigError("extract-features: pass --input/--output or --manifest/--out-dir");
  }
  DatasetManifest m = read_manifest(a.manifest);
  fs::create_directories(fs::path(a.out_dir) / "features");
  for (ManifestEntry& e : m.entries) {
    const fs::path rel = fs::path("features") / (e.clip_id + ".mel");
    features::write_mel_file(fs::path(a.out_dir) / rel, features::load_features(e.path));
    e.path = fs::absolute(fs::path(a.out_dir) / rel);
  }
  write_manifest(fs::path(a.out_dir) / "manifest.csv", m);
  std::cout << "extracted " << m.entries.size() << " clips into " << a.out_dir << '\n';
  return 0;
}

struct RankArgs {
  std::string labels, manifest;
  std::size_t n = 25;
  double val_fraction = 0.30;
  std::uint64_t seed = 0;
};

int run_rank(const RankArgs& a) {
  const encoder::PseudoLabelTable table = encoder::read_pseudo_labels(a.labels);
  std::vector<std::string> ids;
  if (a.manifest.empty()) {
    ids = table.clip_ids();
  } else {
    // Same split as training, so the ranking never sees validation clips.
    ids = split_train_val(read_manifest(a.manifest), a.val_fraction, a.seed).train;
  }
  if (a.n < 1 || a.n > table.num_events()) {
    throw ConfigError("--n must be in [1, " + std::to_string(table.num_events()) + "]");
  }
  const auto ranked = encoder::rank_events(table, ids);
  std::cerr << "ranked " << table.num_events() << " events over " << ids.size() << " clips\n";
  std::cout << "rank,event_index,event_name,total\n";
  for (std::size_t r = 0; r < a.n; ++r) {
    char total[32];
    std::snprintf(total, sizeof total, "%.9g", ranked[r].total);
    std::cout << r + 1 << ',' << ranked[r].index << ','
              << csv::join_line({table.event_names()[ranked[r].index]}) << ',' << total << '\n';
  }
  return 0;
}

struct TrainArgs {
  std::string config, manifest, labels, out;
  std::vector<std::size_t> n, u_layers;
  std::optional<std::size_t> epochs, batch_size;
  std::optional<double> lr, val_fraction;
  std::optional<std::uint64_t> seed;
  std::optional<std::string> profile;
  bool quiet = false;
};

int run_train(const TrainArgs& a) {
  TrainConfig base;
  std::string manifest = a.manifest, labels = a.labels, out = a.out;
  if (!a.config.empty()) {
    std::vector<std::pair<std::string, std::string>> extras;
    base = read_config_file(a.config, {"manifest", "labels", "out"}, &extras);
    const fs::path dir = fs::path(a.config).parent_path();
    for (const auto& [key, value] : extras) {
      const std::string resolved = fs::path(value).is_relative() ? (dir / value).string() : value;
      if (key == "manifest" && manifest.empty()) manifest = resolved;
      if (key == "labels" && labels.empty()) labels = resolved;
      if (key == "out" && out.empty()) out = resolved;
    }
  }
  if (a.epochs) base.epochs = *a.epochs;
  if (a.batch_size) base.batch_size = *a.batch_size;
  if (a.lr) base.lr = *a.lr;
  if (a.val_fraction) base.val_fraction = *a.val_fraction;
  if (a.seed) base.seed = *a.seed;
  if (a.profile) base.profile = parse_profile(*a.profile);
  if (manifest.empty() || labels.empty() || out.empty()) {
    throw ConfigError("train: manifest, labels and out must be set by flag or config");
  }

  const std::vector<std::size_t> ns = a.n.empty() ? std::vector{base.n_events} : a.n;
  const std::vector<std::size_t> us = a.u_layers.empty() ? std::vector{base.u_layers} : a.u_layers;
  // Validate every setting before spending time on any of them.
  for (std::size_t n : ns) {
    for (std::size_t u : us) {
      TrainConfig c = base;
      c.n_events = n;
      c.u_layers = u;
      c.validate();
    }
  }

  const Dataset data = load_dataset(manifest, labels);
  for (std::size_t n : ns) {
    for (std::size_t u : us) {
      TrainConfig c = base;
      c.n_events = n;
      c.u_layers = u;
      const fs::path dir = fs::path(out) / ("n" + std::to_string(n) + "_u" + std::to_string(u));
      fs::create_directories(dir);
      const TrainResult r = train(c, data, [&](const EpochMetrics& m) {
        if (!a.quiet) std::cerr << "n=" << n << " u=" << u << " " << format_metrics_row(m) << '\n';
      });
      write_metrics_csv(dir / "metrics.csv", r.metrics);
      save_checkpoint(dir / "model.ckpt", r.checkpoint);
      std::cout << dir.string() << ": best val_acc_macro " << r.checkpoint.best_val_acc
                << " at epoch " << r.checkpoint.best_epoch << '\n';
    }
  }
  return 0;
}

struct EvalArgs {
  std::string ckpt, manifest, predictions;
};

int run_evaluate(const EvalArgs& a) {
  const Checkpoint ckpt = load_checkpoint(a.ckpt);
  const Evaluation ev = evaluate(ckpt, read_manifest(a.manifest));
  std::cout << "scene,clips,accuracy\n";
  for (std::size_t c = 0; c < ev.scene_vocab.size(); ++c) {
    std::size_t clips = 0;
    for (std::size_t v : ev.confusion[c]) clips += v;
    std::cout << csv::join_line({ev.scene_vocab[c]}) << ',' << clips << ',';
    if (clips == 0) std::cout << "n/a\n";
    else std::cout << ev.per_class[c] << '\n';
  }
  std::cout << "class_average_accuracy," << ev.macro << '\n'
            << "overall_accuracy," << ev.overall << '\n';
  if (!a.predictions.empty()) {
    std::ofstream out(a.predictions);
    if (!out) throw IoError("cannot write " + a.predictions);
    out << "clip_id,scene,predicted\n";
    for (std::size_t i = 0; i < ev.clip_ids.size(); ++i) {
      out << csv::join_line({ev.clip_ids[i], ev.scene_vocab[ev.labels[i]],
                             ev.scene_vocab[ev.predictions[i]]})
          << '\n';
    }
  }
  return 0;
}

struct PredictArgs {
  std::string ckpt, input;
};

int run_predict(const PredictArgs& a) {
  const Checkpoint ckpt = load_checkpoint(a.ckpt);
  const Prediction p = predict(ckpt, fs::path(a.input));
  std::cout << "scene: " << p.scene_name << '\n' << "scene_scores:\n";
  for (std::size_t s = 0; s < p.scene_probs.size(); ++s) {
    std::cout << "  " << ckpt.scene_vocab[s] << ' ' << p.scene_probs[s] << " (logit " << p.logits[s]
              << ")\n";
  }
  std::cout << "event_probabilities:\n";
  for (std::size_t k = 0; k < p.event_probs.size(); ++k) {
    std::cout << "  [" << ckpt.event_ids[k] << "] " << ckpt.event_names[k] << ' '
              << p.event_probs[k] << '\n';
  }
  return 0;
}

int run_gradcheck(std::uint64_t seed, double step) {
  bool ok = true;
  for (const GradSuiteEntry& e : run_gradient_suite(seed, step)) {
    ok = ok && e.passed();
    std::printf("%s  %-44s max_rel_err=%.3e over %zu entries\n", e.passed() ? "PASS" : "FAIL",
                e.name.c_str(), e.report.max_rel_error, e.report.checked);
  }
  if (!ok) {
    std::cerr << "ergl: error: gradient check exceeded " << kGradSuiteTolerance << '\n';
    return 1;
  }
  return 0;
}

int run_synth(const SynthConfig& c, const std::string& out) {
  const SynthData d = synth_data(c, out);
  std::cout << "manifest: " << d.manifest.string() << '\n'
            << "pseudo_labels: " << d.labels.string() << '\n';
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Event relational graph acoustic scene classifier"};
  app.require_subcommand(1);
  app.set_help_all_flag("--help-all");

  ExtractArgs ex;
  auto* extract = app.add_subcommand("extract-features", "Compute cached log-mel features");
  extract->add_option("--input", ex.input, "Single .wav or feature file");
  extract->add_option("--output", ex.output, "Destination .mel file for --input");
  extract->add_option("--manifest", ex.manifest, "Manifest of clips to convert");
  extract->add_option("--out-dir", ex.out_dir, "Destination directory for --manifest");

  RankArgs rk;
  auto* rank = app.add_subcommand("rank-events", "Rank events by summed pseudo-label probability");
  rank->add_option("--labels", rk.labels, "Pseudo-label CSV")->required();
  rank->add_option("--n", rk.n, "Number of events to list")->required();
  rank->add_option("--manifest", rk.manifest, "Rank over this manifest's training split only");
  rank->add_option("--val-fraction", rk.val_fraction, "Validation fraction of the split");

  TrainArgs tr;
  auto* train_cmd = app.add_subcommand("train", "Train one model per (n, U) setting");
  train_cmd->add_option("--config", tr.config, "key = value config file");
  train_cmd->add_option("--manifest", tr.manifest, "Manifest CSV");
  train_cmd->add_option("--labels", tr.labels, "Pseudo-label CSV");
  train_cmd->add_option("--out", tr.out, "Output directory");
  train_cmd->add_option("--n", tr.n, "Event counts, comma separated")->delimiter(',');
  train_cmd->add_option("--u-layers", tr.u_layers, "GCN depths, comma separated")->delimiter(',');
  train_cmd->add_option("--epochs", tr.epochs);
  train_cmd->add_option("--batch-size", tr.batch_size);
  train_cmd->add_option("--lr", tr.lr);
  train_cmd->add_option("--val-fraction", tr.val_fraction);
  train_cmd->add_option("--profile", tr.profile, "paper or test");
  train_cmd->add_flag("--quiet", tr.quiet, "No per-epoch progress");

  EvalArgs ev;
  auto* eval_cmd = app.add_subcommand("evaluate", "Per-class and class-average accuracy");
  eval_cmd->add_option("--ckpt", ev.ckpt, "Checkpoint")->required();
  eval_cmd->add_option("--manifest", ev.manifest, "Manifest of clips to score")->required();
  eval_cmd->add_option("--predictions", ev.predictions, "Write per-clip decisions to this CSV");

  PredictArgs pr;
  auto* predict_cmd = app.add_subcommand("predict", "Classify one clip");
  predict_cmd->add_option("--ckpt", pr.ckpt, "Checkpoint")->required();
  predict_cmd->add_option("--input", pr.input, ".wav or cached feature file")->required();

  double grad_step = kGradSuiteStep;
  auto* grad_cmd = app.add_subcommand("gradcheck", "Finite-difference gradient suite");
  grad_cmd->add_option("--step", grad_step, "Central-difference step");

  SynthConfig sc;
  std::string synth_out;
  auto* synth_cmd = app.add_subcommand("synth-data", "Generate a separable synthetic dataset");
  synth_cmd->add_option("--out", synth_out, "Output directory")->required();
  synth_cmd->add_option("--scenes", sc.n_scenes);
  synth_cmd->add_option("--clips-per-scene", sc.clips_per_scene);
  synth_cmd->add_option("--events", sc.n_events);
  synth_cmd->add_option("--seconds", sc.clip_seconds);

  // --seed is accepted by every subcommand; evaluate and predict are
  // deterministic and ignore it.
  std::uint64_t seed = 0;
  std::optional<std::uint64_t> train_seed;
  for (CLI::App* sub : {extract, eval_cmd, predict_cmd, grad_cmd}) {
    sub->add_option("--seed", seed, "Random seed");
  }
  rank->add_option("--seed", rk.seed, "Split seed (matches train's seed)");
  synth_cmd->add_option("--seed", sc.seed, "Random seed");
  train_cmd->add_option("--seed", train_seed, "Random seed (overrides config)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::cerr << "ergl: error: " << e.what() << '\n';
    return e.get_exit_code() != 0 ? e.get_exit_code() : 2;
  }

  try {
    if (*extract) return run_extract(ex);
    if (*rank) return run_rank(rk);
    if (*train_cmd) {
      tr.seed = train_seed;
      return run_train(tr);
    }
    if (*eval_cmd) return run_evaluate(ev);
    if (*predict_cmd) return run_predict(pr);
    if (*grad_cmd) return run_gradcheck(seed, grad_step);
    if (*synth_cmd) return run_synth(sc, synth_out);
  } catch (const std::exception& e) {
    std::string msg = e.what();
    for (char& c : msg) {
      if (c == '\n') c = ' ';
    }
    std::cerr << "ergl: error: " << msg << '\n';
    return 1;
  }
  return 1;
}

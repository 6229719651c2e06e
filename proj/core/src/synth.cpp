#include "ergl/synth.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>

#include "ergl/dataset.hpp"
#include "ergl/errors.hpp"
#include "ergl/features.hpp"
#include "ergl/pseudo_labels.hpp"

namespace ergl::pipeline {

namespace {

constexpr double kTwoPi = 6.283185307179586;
constexpr double kLabelNoise = 0.05;
constexpr double kInactiveMax = 0.05;

bool separated(const std::vector<std::vector<double>>& t) {
  for (std::size_t a = 0; a < t.size(); ++a) {
    for (std::size_t b = a + 1; b < t.size(); ++b) {
      double gap = 0.0;
      for (std::size_t k = 0; k < t[a].size(); ++k) gap = std::max(gap, std::abs(t[a][k] - t[b][k]));
      if (gap < kTemplateSeparation) return false;
    }
  }
  return true;
}

// Log-spaced tone frequencies between 200 Hz and 6 kHz, one per event.
double event_frequency(std::size_t k, std::size_t n_events) {
  const double t = n_events > 1 ? static_cast<double>(k) / static_cast<double>(n_events - 1) : 0.0;
  return 200.0 * std::pow(6000.0 / 200.0, t);
}

std::string numbered(const char* prefix, std::size_t i, int width) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%s%0*zu", prefix, width, i);
  return buf;
}

}  // namespace

std::vector<std::vector<double>> scene_templates(std::size_t n_scenes, std::size_t n_events,
                                                 Rng& rng) {
  if (n_scenes < 2) throw ConfigError("synth_data needs at least 2 scenes");
  if (n_events < 1) throw ConfigError("synth_data needs at least 1 event");
  // With one event only two well-separated templates exist; beyond 2^n_events
  // scenes the rejection loop could never finish.
  if (n_events < 63 && n_scenes > (std::size_t{1} << n_events)) {
    throw ConfigError("too many scenes for " + std::to_string(n_events) + " events");
  }
  std::vector<std::vector<double>> t(n_scenes, std::vector<double>(n_events));
  do {
    for (auto& scene : t) {
      for (double& p : scene) p = rng.uniform() < 0.5 ? rng.uniform(0.0, 0.2) : rng.uniform(0.7, 1.0);
    }
  } while (!separated(t));
  return t;
}

SynthData synth_data(const SynthConfig& config, const std::filesystem::path& out_dir) {
  if (config.clips_per_scene < 2) throw ConfigError("synth_data needs at least 2 clips per scene");
  if (config.n_events > config.vocab_size) throw ConfigError("n_events exceeds vocab_size");
  if (!(config.clip_seconds > 0.0)) throw ConfigError("clip_seconds must be positive");

  Rng rng(config.seed);
  SynthData out;
  out.templates = scene_templates(config.n_scenes, config.n_events, rng);

  std::filesystem::create_directories(out_dir / "features");
  std::vector<std::string> event_names;
  for (std::size_t k = 0; k < config.vocab_size; ++k) event_names.push_back(numbered("event_", k, 3));
  encoder::PseudoLabelTable table(event_names);
  DatasetManifest manifest;

  const auto num_samples =
      static_cast<std::size_t>(std::llround(config.clip_seconds * features::kSampleRate));
  for (std::size_t s = 0; s < config.n_scenes; ++s) {
    const std::string scene = numbered("scene_", s, 2);
    manifest.scene_vocab.push_back(scene);
    for (std::size_t c = 0; c < config.clips_per_scene; ++c) {
      const std::string clip_id = scene + numbered("_clip_", c, 3);

      std::vector<double> row(config.vocab_size);
      for (std::size_t k = 0; k < config.vocab_size; ++k) {
        row[k] = k < config.n_events
                     ? std::clamp(out.templates[s][k] + kLabelNoise * rng.normal(), 0.0, 1.0)
                     : rng.uniform(0.0, kInactiveMax);
      }

      // Each active event is a tone whose level follows its pseudo-label.
      features::AudioClip clip;
      clip.clip_id = clip_id;
      clip.samples.assign(num_samples, 0.0f);
      const double gain = 0.8 / static_cast<double>(config.n_events);
      for (std::size_t k = 0; k < config.n_events; ++k) {
        const double f = event_frequency(k, config.n_events);
        const double phase = rng.uniform(0.0, kTwoPi);
        const double amp = gain * row[k];
        for (std::size_t i = 0; i < num_samples; ++i) {
          clip.samples[i] += static_cast<float>(
              amp * std::sin(kTwoPi * f * static_cast<double>(i) / features::kSampleRate + phase));
        }
      }
      for (float& x : clip.samples) x += static_cast<float>(0.01 * rng.normal());

      const std::filesystem::path rel = std::filesystem::path("features") / (clip_id + ".mel");
      features::write_mel_file(out_dir / rel, features::log_mel(clip));
      manifest.entries.push_back({clip_id, rel, scene});
      table.add_row(clip_id, std::move(row));
    }
  }

  out.manifest = out_dir / "manifest.csv";
  out.labels = out_dir / "pseudo_labels.csv";
  write_manifest(out.manifest, manifest);
  encoder::write_pseudo_labels(out.labels, table);
  return out;
}

}  // namespace ergl::pipeline

#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <vector>

#include "ergl/random.hpp"

namespace ergl::pipeline {

struct SynthConfig {
  std::size_t n_scenes = 2;
  std::size_t clips_per_scene = 32;
  std::size_t n_events = 6;        // events with scene-dependent probabilities
  std::uint64_t seed = 0;
  double clip_seconds = 1.0;
  std::size_t vocab_size = 527;    // pseudo-label table width
};

struct SynthData {
  std::filesystem::path manifest;
  std::filesystem::path labels;
  std::vector<std::vector<double>> templates;  // [scene][event], active events only
};

inline constexpr double kTemplateSeparation = 0.5;

// Per-scene event-probability templates: each event is low (U[0, 0.2)) or high
// (U[0.7, 1)); redrawn until every pair of scenes differs by at least
// kTemplateSeparation in some event.
std::vector<std::vector<double>> scene_templates(std::size_t n_scenes, std::size_t n_events,
                                                 Rng& rng);

// Writes <out_dir>/manifest.csv, <out_dir>/pseudo_labels.csv and one cached
// feature file per clip under <out_dir>/features. Active events occupy the
// first n_events columns; the remaining columns stay near zero.
SynthData synth_data(const SynthConfig& config, const std::filesystem::path& out_dir);

}  // namespace ergl::pipeline

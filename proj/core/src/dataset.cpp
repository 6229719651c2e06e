#include "ergl/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <set>
#include <unordered_map>
#include <unordered_set>

#include "ergl/csv.hpp"
#include "ergl/errors.hpp"
#include "ergl/features.hpp"
#include "ergl/random.hpp"

namespace ergl::pipeline {

std::size_t DatasetManifest::scene_index(const std::string& scene) const {
  auto it = std::lower_bound(scene_vocab.begin(), scene_vocab.end(), scene);
  if (it == scene_vocab.end() || *it != scene) {
    throw InputError("scene label '" + scene + "' is not in the scene vocabulary");
  }
  return static_cast<std::size_t>(it - scene_vocab.begin());
}

DatasetManifest read_manifest(const std::filesystem::path& path) {
  const csv::Table t = csv::read_file(path);
  if (t.header != std::vector<std::string>{"clip_id", "path", "scene"}) {
    throw IoError(path.string() + ": manifest header must be clip_id,path,scene");
  }
  if (t.rows.empty()) throw InputError(path.string() + ": empty dataset");
  DatasetManifest m;
  std::unordered_set<std::string> seen;
  std::set<std::string> scenes;
  const std::filesystem::path base = path.parent_path();
  for (std::size_t r = 0; r < t.rows.size(); ++r) {
    const auto& f = t.rows[r];
    if (f[0].empty() || f[1].empty() || f[2].empty()) {
      throw IoError(path.string() + ":" + std::to_string(t.line_numbers[r]) + ": empty field");
    }
    if (!seen.insert(f[0]).second) throw InputError("duplicate clip_id in manifest: " + f[0]);
    std::filesystem::path p = f[1];
    if (p.is_relative()) p = base / p;
    m.entries.push_back({f[0], p.lexically_normal(), f[2]});
    scenes.insert(f[2]);
  }
  m.scene_vocab.assign(scenes.begin(), scenes.end());
  return m;
}

void write_manifest(const std::filesystem::path& path, const DatasetManifest& manifest) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path.string());
  const std::filesystem::path base = path.parent_path();
  out << "clip_id,path,scene\n";
  for (const ManifestEntry& e : manifest.entries) {
    std::filesystem::path p = e.path;
    if (p.is_absolute() && !base.empty()) {
      const auto rel = p.lexically_relative(std::filesystem::absolute(base));
      if (!rel.empty()) p = rel;
    }
    out << csv::join_line({e.clip_id, p.generic_string(), e.scene}) << '\n';
  }
  if (!out) throw IoError("failed writing " + path.string());
}

std::vector<Example> load_examples(const DatasetManifest& manifest,
                                   const std::vector<std::string>& scene_vocab) {
  DatasetManifest vocab_view;
  vocab_view.scene_vocab = scene_vocab;
  std::vector<Example> out;
  out.reserve(manifest.entries.size());
  for (const ManifestEntry& e : manifest.entries) {
    Example ex;
    ex.clip_id = e.clip_id;
    ex.scene = vocab_view.scene_index(e.scene);
    ex.features = features::load_features(e.path).values;
    out.push_back(std::move(ex));
  }
  return out;
}

Dataset load_dataset(const std::filesystem::path& manifest_path,
                     const std::filesystem::path& labels_path) {
  Dataset d;
  d.manifest = read_manifest(manifest_path);
  d.labels = encoder::read_pseudo_labels(labels_path);
  std::string missing;
  std::size_t n_missing = 0;
  for (const ManifestEntry& e : d.manifest.entries) {
    if (d.labels.contains(e.clip_id)) continue;
    if (n_missing++ < 10) missing += (missing.empty() ? "" : ", ") + e.clip_id;
  }
  if (n_missing) {
    throw InputError(std::to_string(n_missing) + " manifest clip(s) have no pseudo-labels: " +
                     missing + (n_missing > 10 ? ", ..." : ""));
  }
  d.examples = load_examples(d.manifest, d.manifest.scene_vocab);
  return d;
}

Split split_train_val(const DatasetManifest& manifest, double val_fraction, std::uint64_t seed) {
  if (!(val_fraction > 0.0 && val_fraction < 1.0)) {
    throw ConfigError("val_fraction must be in (0, 1)");
  }
  std::unordered_map<std::string, std::vector<std::string>> by_scene;
  for (const ManifestEntry& e : manifest.entries) by_scene[e.scene].push_back(e.clip_id);

  Rng rng(seed);
  std::unordered_set<std::string> val_ids;
  for (const std::string& scene : manifest.scene_vocab) {
    std::vector<std::string>& ids = by_scene[scene];
    if (ids.size() < 2) {
      throw ConfigError("scene '" + scene + "' has " + std::to_string(ids.size()) +
                        " clip(s); a train/validation split needs at least 2");
    }
    auto n_val = static_cast<std::size_t>(std::llround(static_cast<double>(ids.size()) * val_fraction));
    n_val = std::clamp<std::size_t>(n_val, 1, ids.size() - 1);
    rng.shuffle(ids);
    val_ids.insert(ids.begin(), ids.begin() + static_cast<std::ptrdiff_t>(n_val));
  }
  Split split;
  for (const ManifestEntry& e : manifest.entries) {
    (val_ids.count(e.clip_id) ? split.val : split.train).push_back(e.clip_id);
  }
  return split;
}

}  // namespace ergl::pipeline

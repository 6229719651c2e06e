#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "ergl/pseudo_labels.hpp"
#include "ergl/tensor.hpp"

namespace ergl::pipeline {

struct ManifestEntry {
  std::string clip_id;
  std::filesystem::path path;  // audio (.wav) or cached features; absolute after loading
  std::string scene;
};

struct DatasetManifest {
  std::vector<ManifestEntry> entries;
  std::vector<std::string> scene_vocab;  // sorted, unique

  // Throws InputError for a scene outside the vocabulary.
  std::size_t scene_index(const std::string& scene) const;
};

// CSV with header "clip_id,path,scene"; relative paths resolve against the
// manifest's directory.
DatasetManifest read_manifest(const std::filesystem::path& path);
// Paths are written relative to the manifest's directory when possible.
void write_manifest(const std::filesystem::path& path, const DatasetManifest& manifest);

struct Example {
  std::string clip_id;
  std::size_t scene = 0;
  Tensor<float> features;  // [frames, bins]
};

struct Dataset {
  DatasetManifest manifest;
  encoder::PseudoLabelTable labels;
  std::vector<Example> examples;  // manifest order
};

// Loads features for every manifest entry, labelling scenes with `scene_vocab`.
std::vector<Example> load_examples(const DatasetManifest& manifest,
                                   const std::vector<std::string>& scene_vocab);

// Joins the manifest with the pseudo-label table on clip_id; every clip must
// have a pseudo-label row.
Dataset load_dataset(const std::filesystem::path& manifest_path,
                     const std::filesystem::path& labels_path);

struct Split {
  std::vector<std::string> train;
  std::vector<std::string> val;
};

// Stratified by scene: round(count * val_fraction) clips of each scene,
// clamped to [1, count - 1], go to validation. Both lists keep manifest order.
Split split_train_val(const DatasetManifest& manifest, double val_fraction, std::uint64_t seed);

}  // namespace ergl::pipeline

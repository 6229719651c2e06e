#pragma once

#include <cstddef>
#include <filesystem>
#include <functional>
#include <string>
#include <vector>

#include "ergl/checkpoint.hpp"
#include "ergl/dataset.hpp"
#include "ergl/features.hpp"

namespace ergl::pipeline {

struct EpochMetrics {
  std::size_t epoch = 0;  // 1-based
  double train_loss = 0.0;
  double event_loss = 0.0;
  double scene_loss = 0.0;
  double val_acc_macro = 0.0;
  double val_acc_overall = 0.0;

  bool operator==(const EpochMetrics&) const = default;
};

// CSV "epoch,train_loss,event_loss,scene_loss,val_acc_macro,val_acc_overall".
void write_metrics_csv(const std::filesystem::path& path, const std::vector<EpochMetrics>& rows);
std::string format_metrics_row(const EpochMetrics& m);

struct TrainResult {
  Checkpoint checkpoint;  // parameters of the best validation epoch
  std::vector<EpochMetrics> metrics;
  std::vector<std::string> train_ids;
  std::vector<std::string> val_ids;
};

using EpochCallback = std::function<void(const EpochMetrics&)>;

// Training batches for `count` shuffled examples: consecutive runs of
// batch_size, the last partial batch kept. A trailing batch of a single clip
// joins the previous batch because batch norm needs two samples.
std::vector<std::pair<std::size_t, std::size_t>> batch_ranges(std::size_t count,
                                                              std::size_t batch_size);

// Splits the data, selects event_ids from the training split, then trains with
// AdamW on the summed scene and event losses, keeping the best validation
// epoch (ties go to the later epoch).
TrainResult train(const TrainConfig& config, const Dataset& data,
                  const EpochCallback& on_epoch = {});

struct Evaluation {
  std::vector<std::string> scene_vocab;
  std::vector<std::vector<std::size_t>> confusion;  // [true][predicted]
  std::vector<double> per_class;   // NaN for classes absent from the evaluated set
  double macro = 0.0;              // mean over present classes
  double overall = 0.0;
  std::vector<std::string> clip_ids;
  std::vector<std::size_t> labels;
  std::vector<std::size_t> predictions;
};

// Accuracy summaries from true and predicted class indices.
Evaluation score_predictions(std::vector<std::size_t> labels, std::vector<std::size_t> predictions,
                             std::size_t num_classes);

// Eval-mode scene decisions for `examples`, batched.
std::vector<std::size_t> predict_scenes(ErglModel<float>& model,
                                        const std::vector<const Example*>& examples,
                                        std::size_t batch_size);

// Scenes are mapped through the checkpoint's vocabulary; unseen scene names
// raise InputError.
Evaluation evaluate(const Checkpoint& ckpt, const DatasetManifest& manifest);

struct Prediction {
  std::size_t scene = 0;
  std::string scene_name;
  std::vector<float> logits;
  std::vector<double> scene_probs;   // softmax of logits
  std::vector<double> event_probs;   // one per checkpoint event_id
};

Prediction predict(const Checkpoint& ckpt, const features::MelSpectrogram& mel);
Prediction predict(const Checkpoint& ckpt, const std::filesystem::path& input);

}  // namespace ergl::pipeline

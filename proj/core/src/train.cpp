#include "ergl/train.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <unordered_map>

#include "ergl/errors.hpp"
#include "ergl/ops.hpp"
#include "ergl/optim.hpp"

namespace ergl::pipeline {

namespace {

// [b, frames, bins] batch; every clip must have the same feature shape.
Tensor<float> stack_features(const std::vector<const Example*>& batch) {
  const Shape& first = batch.front()->features.shape();
  Shape shape{batch.size()};
  shape.insert(shape.end(), first.begin(), first.end());
  std::vector<float> data;
  data.reserve(shape_numel(shape));
  for (const Example* ex : batch) {
    if (ex->features.shape() != first) {
      throw InputError("clip " + ex->clip_id + " has features " +
                       shape_str(ex->features.shape()) + " but the batch expects " +
                       shape_str(first) + "; all clips must share one duration");
    }
    data.insert(data.end(), ex->features.storage().begin(), ex->features.storage().end());
  }
  return Tensor<float>(std::move(shape), std::move(data));
}

std::size_t argmax_row(const Tensor<float>& logits, std::size_t row) {
  const std::size_t s = logits.extent(1);
  const float* p = logits.data() + row * s;
  return static_cast<std::size_t>(std::max_element(p, p + s) - p);
}

std::vector<const Example*> pick(const std::vector<Example>& examples,
                                 const std::vector<std::string>& ids) {
  std::unordered_map<std::string, const Example*> by_id;
  for (const Example& e : examples) by_id.emplace(e.clip_id, &e);
  std::vector<const Example*> out;
  out.reserve(ids.size());
  for (const std::string& id : ids) out.push_back(by_id.at(id));
  return out;
}

}  // namespace

std::string format_metrics_row(const EpochMetrics& m) {
  char buf[256];
  std::snprintf(buf, sizeof buf, "%zu,%.9g,%.9g,%.9g,%.9g,%.9g", m.epoch, m.train_loss,
                m.event_loss, m.scene_loss, m.val_acc_macro, m.val_acc_overall);
  return buf;
}

void write_metrics_csv(const std::filesystem::path& path, const std::vector<EpochMetrics>& rows) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path.string());
  out << "epoch,train_loss,event_loss,scene_loss,val_acc_macro,val_acc_overall\n";
  for (const EpochMetrics& m : rows) out << format_metrics_row(m) << '\n';
  if (!out) throw IoError("failed writing " + path.string());
}

std::vector<std::pair<std::size_t, std::size_t>> batch_ranges(std::size_t count,
                                                              std::size_t batch_size) {
  if (batch_size < 2) throw ConfigError("batch_size must be at least 2");
  if (count < 2) throw ConfigError("training needs at least 2 clips");
  std::vector<std::pair<std::size_t, std::size_t>> out;
  for (std::size_t begin = 0; begin < count; begin += batch_size) {
    out.emplace_back(begin, std::min(count, begin + batch_size));
  }
  if (out.size() > 1 && out.back().second - out.back().first == 1) {
    out.pop_back();
    out.back().second = count;
  }
  return out;
}

Evaluation score_predictions(std::vector<std::size_t> labels, std::vector<std::size_t> predictions,
                             std::size_t num_classes) {
  if (labels.size() != predictions.size()) throw DimensionError("labels/predictions length mismatch");
  if (labels.empty()) throw InputError("nothing to evaluate");
  Evaluation ev;
  ev.confusion.assign(num_classes, std::vector<std::size_t>(num_classes, 0));
  std::size_t correct = 0;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] >= num_classes || predictions[i] >= num_classes) {
      throw InputError("class index out of range");
    }
    ++ev.confusion[labels[i]][predictions[i]];
    correct += labels[i] == predictions[i];
  }
  ev.per_class.assign(num_classes, std::numeric_limits<double>::quiet_NaN());
  double sum = 0.0;
  std::size_t present = 0;
  for (std::size_t c = 0; c < num_classes; ++c) {
    std::size_t total = 0;
    for (std::size_t v : ev.confusion[c]) total += v;
    if (total == 0) continue;
    ev.per_class[c] = static_cast<double>(ev.confusion[c][c]) / static_cast<double>(total);
    sum += ev.per_class[c];
    ++present;
  }
  ev.macro = sum / static_cast<double>(present);
  ev.overall = static_cast<double>(correct) / static_cast<double>(labels.size());
  ev.labels = std::move(labels);
  ev.predictions = std::move(predictions);
  return ev;
}

std::vector<std::size_t> predict_scenes(ErglModel<float>& model,
                                        const std::vector<const Example*>& examples,
                                        std::size_t batch_size) {
  std::vector<std::size_t> out;
  out.reserve(examples.size());
  Rng unused(0);
  for (std::size_t begin = 0; begin < examples.size(); begin += batch_size) {
    const std::size_t end = std::min(examples.size(), begin + batch_size);
    std::vector<const Example*> batch(examples.begin() + static_cast<std::ptrdiff_t>(begin),
                                      examples.begin() + static_cast<std::ptrdiff_t>(end));
    Tape<float> tape(false);
    auto result = model.forward(tape, tape.constant(stack_features(batch)), Mode::kEval, unused);
    const Tensor<float>& logits = result.logits.value();
    for (std::size_t i = 0; i < batch.size(); ++i) out.push_back(argmax_row(logits, i));
  }
  return out;
}

TrainResult train(const TrainConfig& config, const Dataset& data, const EpochCallback& on_epoch) {
  config.validate();
  if (data.examples.empty()) throw InputError("empty dataset");
  if (config.n_events > data.labels.num_events()) {
    throw ConfigError("n_events " + std::to_string(config.n_events) + " exceeds the " +
                      std::to_string(data.labels.num_events()) + " events in the pseudo-label table");
  }

  TrainResult result;
  const Split split = split_train_val(data.manifest, config.val_fraction, config.seed);
  result.train_ids = split.train;
  result.val_ids = split.val;

  // Event selection sees the training split only.
  const std::vector<std::size_t> event_ids =
      encoder::rank_top_n(data.labels, split.train, config.n_events);

  const std::vector<const Example*> train_set = pick(data.examples, split.train);
  const std::vector<const Example*> val_set = pick(data.examples, split.val);
  std::vector<std::size_t> val_labels;
  for (const Example* e : val_set) val_labels.push_back(e->scene);

  // Pseudo-label targets restricted to the selected events, per training clip.
  std::vector<std::vector<float>> targets;
  for (const Example* e : train_set) {
    const auto row = data.labels.row(e->clip_id);
    std::vector<float>& t = targets.emplace_back();
    for (std::size_t id : event_ids) t.push_back(static_cast<float>(row[id]));
  }

  const std::size_t num_scenes = data.manifest.scene_vocab.size();
  Rng rng(config.seed);
  ErglModel<float> model(config.model_config(num_scenes), rng.next());
  AdamWOptions opts;
  opts.lr = config.lr;
  opts.weight_decay = config.weight_decay;
  AdamW<float> optimizer(model.registry().param_ptrs(), opts);

  Checkpoint& best = result.checkpoint;
  best.config = config;
  best.event_ids = event_ids;
  for (std::size_t id : event_ids) best.event_names.push_back(data.labels.event_names()[id]);
  best.scene_vocab = data.manifest.scene_vocab;
  bool have_best = false;

  std::vector<std::size_t> order(train_set.size());
  const std::size_t n = config.n_events;
  for (std::size_t epoch = 1; epoch <= config.epochs; ++epoch) {
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    rng.shuffle(order);

    double total_sum = 0.0, event_sum = 0.0, scene_sum = 0.0;
    const auto ranges = batch_ranges(order.size(), config.batch_size);
    for (std::size_t bi = 0; bi < ranges.size(); ++bi) {
      const auto [begin, end] = ranges[bi];
      const std::size_t b = end - begin;
      std::vector<const Example*> batch;
      std::vector<std::size_t> scene_labels;
      std::vector<float> event_targets;
      for (std::size_t k = begin; k < end; ++k) {
        batch.push_back(train_set[order[k]]);
        scene_labels.push_back(train_set[order[k]]->scene);
        const auto& t = targets[order[k]];
        event_targets.insert(event_targets.end(), t.begin(), t.end());
      }

      double l_total, l_event, l_scene;
      try {
        Tape<float> tape;
        auto out = model.forward(tape, tape.constant(stack_features(batch)), Mode::kTrain, rng);
        Var<float> scene_loss = loss_ce(out.logits, std::span<const std::size_t>(scene_labels));
        Var<float> ev_loss = encoder::event_loss(
            out.nodes, tape.constant(Tensor<float>(Shape{b, n}, std::move(event_targets))));
        Var<float> loss = add(scene_loss, ev_loss);
        l_total = loss.value().item();
        l_event = ev_loss.value().item();
        l_scene = scene_loss.value().item();
        if (!std::isfinite(l_total)) throw NumericError("non-finite loss");
        optimizer.zero_grad();
        tape.backward(loss);
        optimizer.step();
      } catch (const NumericError& e) {
        throw NumericError("training diverged at epoch " + std::to_string(epoch) + ", batch " +
                           std::to_string(bi + 1) + ": " + e.what());
      }
      total_sum += l_total * static_cast<double>(b);
      event_sum += l_event * static_cast<double>(b);
      scene_sum += l_scene * static_cast<double>(b);
    }

    const Evaluation val = score_predictions(val_labels, predict_scenes(model, val_set, config.batch_size),
                                             num_scenes);
    EpochMetrics m;
    m.epoch = epoch;
    const double count = static_cast<double>(order.size());
    m.train_loss = total_sum / count;
    m.event_loss = event_sum / count;
    m.scene_loss = scene_sum / count;
    m.val_acc_macro = val.macro;
    m.val_acc_overall = val.overall;
    result.metrics.push_back(m);

    if (!have_best || m.val_acc_macro >= best.best_val_acc) {
      have_best = true;
      best.best_val_acc = m.val_acc_macro;
      best.best_epoch = epoch;
      best.adam_step = optimizer.state().step;
      best.tensors = model_state(model);
      append_optimizer_state(best.tensors, model, optimizer.state());
    }
    if (on_epoch) on_epoch(m);
  }
  return result;
}

Evaluation evaluate(const Checkpoint& ckpt, const DatasetManifest& manifest) {
  ErglModel<float> model = restore_model(ckpt);
  const std::vector<Example> examples = load_examples(manifest, ckpt.scene_vocab);
  std::vector<const Example*> ptrs;
  std::vector<std::size_t> labels;
  for (const Example& e : examples) {
    ptrs.push_back(&e);
    labels.push_back(e.scene);
  }
  Evaluation ev = score_predictions(std::move(labels),
                                    predict_scenes(model, ptrs, ckpt.config.batch_size),
                                    ckpt.scene_vocab.size());
  ev.scene_vocab = ckpt.scene_vocab;
  for (const Example& e : examples) ev.clip_ids.push_back(e.clip_id);
  return ev;
}

Prediction predict(const Checkpoint& ckpt, const features::MelSpectrogram& mel) {
  ErglModel<float> model = restore_model(ckpt);
  Tensor<float> x = mel.values.reshaped(Shape{1, mel.frames(), mel.bins()});
  Tape<float> tape(false);
  Rng unused(0);
  auto out = model.forward(tape, tape.constant(std::move(x)), Mode::kEval, unused);

  Prediction p;
  const Tensor<float>& logits = out.logits.value();
  p.logits.assign(logits.storage().begin(), logits.storage().end());
  p.scene = argmax_row(logits, 0);
  p.scene_name = ckpt.scene_vocab.at(p.scene);
  const double mx = *std::max_element(p.logits.begin(), p.logits.end());
  double z = 0.0;
  for (float l : p.logits) z += std::exp(static_cast<double>(l) - mx);
  for (float l : p.logits) p.scene_probs.push_back(std::exp(static_cast<double>(l) - mx) / z);
  for (float v : out.nodes.probabilities.value().storage()) p.event_probs.push_back(v);
  return p;
}

Prediction predict(const Checkpoint& ckpt, const std::filesystem::path& input) {
  return predict(ckpt, features::load_features(input));
}

}  // namespace ergl::pipeline

#include <gtest/gtest.h>

#include <cmath>
#include <fstream>
#include <numeric>
#include <set>
#include <sstream>

#include "ergl/checkpoint.hpp"
#include "ergl/config.hpp"
#include "ergl/dataset.hpp"
#include "ergl/errors.hpp"
#include "ergl/optim.hpp"
#include "ergl/synth.hpp"
#include "ergl/train.hpp"
#include "test_util.hpp"

namespace ergl::pipeline {
namespace {

namespace fs = std::filesystem;

void write_text(const fs::path& p, const std::string& text) {
  std::ofstream out(p);
  out << text;
}

std::string read_bytes(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

template <typename Fn>
std::string error_message(Fn&& fn) {
  try {
    fn();
  } catch (const std::exception& e) {
    return e.what();
  }
  return "";
}

// Small synthetic corpus shared by the training tests.
const SynthData& tiny_corpus() {
  static const SynthData data = [] {
    SynthConfig cfg;
    cfg.clips_per_scene = 4;
    cfg.n_events = 3;
    cfg.clip_seconds = 0.5;
    cfg.seed = 5;
    return synth_data(cfg, test::scratch_dir("tiny_corpus"));
  }();
  return data;
}

TrainConfig tiny_config(std::size_t epochs) {
  TrainConfig cfg;
  cfg.profile = Profile::kTest;
  cfg.n_events = 3;
  cfg.batch_size = 4;
  cfg.val_fraction = 0.25;
  cfg.epochs = epochs;
  cfg.seed = 3;
  return cfg;
}

DatasetManifest manifest_with(const std::vector<std::pair<std::string, std::string>>& id_scene) {
  DatasetManifest m;
  std::set<std::string> vocab;
  for (const auto& [id, scene] : id_scene) {
    m.entries.push_back({id, "/dev/null", scene});
    vocab.insert(scene);
  }
  m.scene_vocab.assign(vocab.begin(), vocab.end());
  return m;
}

TEST(Manifest, EmptyDatasetIsNamed) {
  const auto dir = test::scratch_dir("manifest_empty");
  write_text(dir / "m.csv", "clip_id,path,scene\n");
  const std::string msg = error_message([&] { read_manifest(dir / "m.csv"); });
  EXPECT_NE(msg.find("empty dataset"), std::string::npos) << msg;
  EXPECT_THROW(read_manifest(dir / "m.csv"), InputError);
}

TEST(Manifest, MissingFileBadHeaderAndDuplicates) {
  const auto dir = test::scratch_dir("manifest_bad");
  EXPECT_THROW(read_manifest(dir / "absent.csv"), IoError);
  write_text(dir / "h.csv", "id,path,scene\na,x.mel,park\n");
  EXPECT_THROW(read_manifest(dir / "h.csv"), IoError);
  write_text(dir / "d.csv", "clip_id,path,scene\na,x.mel,park\na,y.mel,bus\n");
  EXPECT_THROW(read_manifest(dir / "d.csv"), InputError);
}

TEST(Manifest, RelativePathsAndVocabulary) {
  const auto dir = test::scratch_dir("manifest_ok");
  write_text(dir / "m.csv", "clip_id,path,scene\na,f/a.mel,park\nb,f/b.mel,bus\nc,/abs/c.mel,park\n");
  const DatasetManifest m = read_manifest(dir / "m.csv");
  ASSERT_EQ(m.entries.size(), 3u);
  EXPECT_EQ(m.entries[0].path, dir / "f/a.mel");
  EXPECT_EQ(m.entries[2].path, fs::path("/abs/c.mel"));
  EXPECT_EQ(m.scene_vocab, (std::vector<std::string>{"bus", "park"}));
  EXPECT_EQ(m.scene_index("park"), 1u);
  EXPECT_THROW(m.scene_index("metro"), InputError);

  write_manifest(dir / "copy.csv", m);
  const DatasetManifest back = read_manifest(dir / "copy.csv");
  for (std::size_t i = 0; i < 3; ++i) EXPECT_EQ(back.entries[i].path, m.entries[i].path);
}

TEST(LoadDataset, JoinsThreeClips) {
  const auto dir = test::scratch_dir("join");
  const features::MelSpectrogram mel{Tensor<float>(Shape{4, 64}, -3.0f)};
  std::string manifest = "clip_id,path,scene\n";
  encoder::PseudoLabelTable labels({"x", "y"});
  for (const char* id : {"c0", "c1", "c2"}) {
    features::write_mel_file(dir / (std::string(id) + ".mel"), mel);
    manifest += std::string(id) + "," + id + ".mel,park\n";
    labels.add_row(id, {0.1, 0.9});
  }
  write_text(dir / "m.csv", manifest);
  encoder::write_pseudo_labels(dir / "l.csv", labels);
  const Dataset d = load_dataset(dir / "m.csv", dir / "l.csv");
  ASSERT_EQ(d.examples.size(), 3u);
  EXPECT_EQ(d.examples[1].clip_id, "c1");
  EXPECT_EQ(d.examples[2].features, mel.values);
}

TEST(LoadDataset, MissingLabelRowListsClip) {
  const auto dir = test::scratch_dir("join_missing");
  write_text(dir / "m.csv", "clip_id,path,scene\nc0,a.mel,park\nlost_clip,b.mel,park\n");
  encoder::PseudoLabelTable labels({"x"});
  labels.add_row("c0", {0.5});
  encoder::write_pseudo_labels(dir / "l.csv", labels);
  const std::string msg = error_message([&] { load_dataset(dir / "m.csv", dir / "l.csv"); });
  EXPECT_NE(msg.find("lost_clip"), std::string::npos) << msg;
  EXPECT_THROW(load_dataset(dir / "m.csv", dir / "l.csv"), InputError);
  EXPECT_THROW(load_dataset(dir / "m.csv", dir / "nope.csv"), IoError);
}

TEST(Split, ThreeOfTenPerScene) {
  std::vector<std::pair<std::string, std::string>> rows;
  for (const char* scene : {"bus", "park"}) {
    for (int i = 0; i < 10; ++i) rows.emplace_back(std::string(scene) + std::to_string(i), scene);
  }
  const DatasetManifest m = manifest_with(rows);
  const Split s = split_train_val(m, 0.3, 7);
  EXPECT_EQ(s.val.size(), 6u);
  EXPECT_EQ(std::count_if(s.val.begin(), s.val.end(), [](const std::string& id) { return id.rfind("bus", 0) == 0; }), 3);
  const Split again = split_train_val(m, 0.3, 7);
  EXPECT_EQ(again.train, s.train);
  EXPECT_EQ(again.val, s.val);
}

TEST(Split, PartitionIsExactOnRandomManifests) {
  Rng rng(8);
  for (int trial = 0; trial < 50; ++trial) {
    std::vector<std::pair<std::string, std::string>> rows;
    const std::size_t scenes = 2 + rng.below(4);
    for (std::size_t s = 0; s < scenes; ++s) {
      const std::size_t count = 2 + rng.below(12);
      for (std::size_t i = 0; i < count; ++i) rows.emplace_back("s" + std::to_string(s) + "_" + std::to_string(i), "s" + std::to_string(s));
    }
    rng.shuffle(rows);
    const Split sp = split_train_val(manifest_with(rows), rng.uniform(0.05, 0.95), rng.next());
    std::set<std::string> all, train(sp.train.begin(), sp.train.end()), val(sp.val.begin(), sp.val.end());
    for (const auto& r : rows) all.insert(r.first);
    std::set<std::string> both;
    std::set_intersection(train.begin(), train.end(), val.begin(), val.end(), std::inserter(both, both.end()));
    EXPECT_TRUE(both.empty());
    std::set<std::string> uni(train);
    uni.insert(val.begin(), val.end());
    EXPECT_EQ(uni, all);
    EXPECT_EQ(sp.train.size() + sp.val.size(), rows.size());
  }
}

TEST(Split, SingletonSceneOrBadFractionIsConfigError) {
  const DatasetManifest m = manifest_with({{"a", "bus"}, {"b", "bus"}, {"c", "park"}});
  EXPECT_THROW(split_train_val(m, 0.3, 0), ConfigError);
  const DatasetManifest ok = manifest_with({{"a", "bus"}, {"b", "bus"}});
  EXPECT_THROW(split_train_val(ok, 0.0, 0), ConfigError);
  EXPECT_THROW(split_train_val(ok, 1.0, 0), ConfigError);
}

TEST(Config, ParsesKeyValuesWithComments) {
  const auto dir = test::scratch_dir("config");
  write_text(dir / "c.cfg", "# run\nn_events = 10\nu_layers=3  # deeper\nlr = 5e-4\nprofile = test\nmanifest = data/m.csv\n");
  std::vector<std::pair<std::string, std::string>> extras;
  const TrainConfig cfg = read_config_file(dir / "c.cfg", {"manifest"}, &extras);
  EXPECT_EQ(cfg.n_events, 10u);
  EXPECT_EQ(cfg.u_layers, 3u);
  EXPECT_EQ(cfg.lr, 5e-4);
  EXPECT_EQ(cfg.profile, Profile::kTest);
  ASSERT_EQ(extras.size(), 1u);
  EXPECT_EQ(extras[0].second, "data/m.csv");
  EXPECT_THROW(read_config_file(dir / "c.cfg"), ConfigError);
}

TEST(Config, RejectsBadValues) {
  TrainConfig cfg;
  EXPECT_THROW(apply_setting(cfg, "epochs", "ten"), ConfigError);
  EXPECT_THROW(apply_setting(cfg, "lr", "1e-3x"), ConfigError);
  EXPECT_FALSE(apply_setting(cfg, "colour", "blue"));
  for (auto [key, value] : std::vector<std::pair<std::string, std::string>>{
           {"n_events", "1"}, {"n_events", "528"}, {"u_layers", "0"}, {"val_fraction", "0"}, {"val_fraction", "1"}}) {
    TrainConfig c;
    apply_setting(c, key, value);
    EXPECT_THROW(c.validate(), ConfigError) << key << "=" << value;
  }
}

TEST(Config, TextRoundTrip) {
  TrainConfig cfg;
  cfg.n_events = 7;
  cfg.lr = 0.1 + 0.2;
  cfg.seed = 123456789012345ull;
  cfg.profile = Profile::kTest;
  TrainConfig back;
  for (const auto& [k, v] : parse_key_values(to_config_text(cfg), "text")) ASSERT_TRUE(apply_setting(back, k, v)) << k;
  EXPECT_EQ(back, cfg);
}

TEST(BatchRanges, KeepsPartialAndMergesSingleton) {
  using R = std::vector<std::pair<std::size_t, std::size_t>>;
  EXPECT_EQ(batch_ranges(10, 4), (R{{0, 4}, {4, 8}, {8, 10}}));
  EXPECT_EQ(batch_ranges(9, 4), (R{{0, 4}, {4, 9}}));
  EXPECT_EQ(batch_ranges(3, 64), (R{{0, 3}}));
  EXPECT_THROW(batch_ranges(10, 1), ConfigError);
  EXPECT_THROW(batch_ranges(1, 4), ConfigError);
}

TEST(Checkpoint, RoundTripReproducesForwardBitForBit) {
  const auto dir = test::scratch_dir("ckpt");
  const Dataset data = load_dataset(tiny_corpus().manifest, tiny_corpus().labels);
  const TrainResult run = train(tiny_config(1), data);
  save_checkpoint(dir / "m.ckpt", run.checkpoint);
  const Checkpoint back = load_checkpoint(dir / "m.ckpt");
  EXPECT_EQ(back, run.checkpoint);

  ErglModel<float> a = restore_model(run.checkpoint);
  ErglModel<float> b = restore_model(back);
  Rng r1(0), r2(0);
  Tape<float> tape(false);
  auto x = tape.constant(data.examples[0].features.reshaped({1, data.examples[0].features.extent(0), 64}));
  EXPECT_EQ(a.forward(tape, x, Mode::kEval, r1).logits.value(), b.forward(tape, x, Mode::kEval, r2).logits.value());

  const AdamWState<float> opt = restore_optimizer(back, b);
  EXPECT_EQ(opt.step, back.adam_step);
  EXPECT_EQ(opt.m.size(), b.registry().params().size());
}

TEST(Checkpoint, TruncatedCorruptAndOldVersion) {
  Checkpoint ckpt;
  ckpt.event_ids = {0, 2};
  ckpt.event_names = {"a", "c"};
  ckpt.scene_vocab = {"bus", "park"};
  ckpt.tensors.push_back({"w", Tensor<float>(Shape{2, 2}, std::vector<float>{1, 2, 3, 4})});
  const std::string bytes = encode_checkpoint(ckpt);
  EXPECT_EQ(bytes.substr(0, 8), "ERGLCKP1");
  EXPECT_EQ(decode_checkpoint(bytes), ckpt);
  EXPECT_THROW(decode_checkpoint(bytes.substr(0, bytes.size() - 9)), ChecksumError);
  EXPECT_THROW(decode_checkpoint(bytes.substr(0, 5)), ChecksumError);
  std::string flipped = bytes;
  flipped[bytes.size() / 2] ^= 0x10;
  EXPECT_THROW(decode_checkpoint(flipped), ChecksumError);
  EXPECT_THROW(decode_checkpoint(encode_checkpoint(ckpt, 0)), VersionError);

  const auto dir = test::scratch_dir("ckpt_trunc");
  save_checkpoint(dir / "c.ckpt", ckpt);
  fs::resize_file(dir / "c.ckpt", 20);
  EXPECT_THROW(load_checkpoint(dir / "c.ckpt"), ChecksumError);
  EXPECT_THROW(load_checkpoint(dir / "absent.ckpt"), IoError);
}

TEST(Train, OneEpochSmoke) {
  const Dataset data = load_dataset(tiny_corpus().manifest, tiny_corpus().labels);
  std::vector<EpochMetrics> seen;
  const TrainResult run = train(tiny_config(1), data, [&](const EpochMetrics& m) { seen.push_back(m); });
  ASSERT_EQ(run.metrics.size(), 1u);
  EXPECT_EQ(seen, run.metrics);
  EXPECT_EQ(run.metrics[0].epoch, 1u);
  EXPECT_TRUE(std::isfinite(run.metrics[0].train_loss));
  EXPECT_EQ(run.train_ids.size(), 6u);
  EXPECT_EQ(run.val_ids.size(), 2u);
  EXPECT_EQ(run.checkpoint.event_ids.size(), 3u);
  EXPECT_EQ(run.checkpoint.best_epoch, 1u);
}

TEST(Train, EventSelectionUsesTrainingSplitOnly) {
  const Dataset data = load_dataset(tiny_corpus().manifest, tiny_corpus().labels);
  const TrainResult run = train(tiny_config(1), data);
  EXPECT_EQ(run.checkpoint.event_ids, encoder::rank_top_n(data.labels, run.train_ids, 3));
}

TEST(Train, IdenticalRunsGiveIdenticalLogsAndCheckpoints) {
  const Dataset data = load_dataset(tiny_corpus().manifest, tiny_corpus().labels);
  const TrainResult a = train(tiny_config(3), data);
  const TrainResult b = train(tiny_config(3), data);
  EXPECT_EQ(a.metrics, b.metrics);
  EXPECT_EQ(encode_checkpoint(a.checkpoint), encode_checkpoint(b.checkpoint));
  TrainConfig other = tiny_config(3);
  other.seed = 4;
  EXPECT_NE(train(other, data).metrics, a.metrics);
}

TEST(Train, FixedBatchLossDecreasesOverFiftySteps) {
  ModelConfig mc;
  mc.backbone = {{4}, 32, 0.0};
  mc.num_events = 3;
  mc.num_scenes = 2;
  mc.embed_width = 16;
  mc.edge_tokens = 4;
  mc.hidden_width = 16;
  mc.head_dropout = 0.0;
  ErglModel<float> model(mc, 1);
  Rng data_rng(2), drop(3);
  const auto x = test::random_tensor<float>({4, 16, 16}, data_rng);
  const auto y = test::random_tensor<float>({4, 3}, data_rng, 0.0, 1.0);
  const std::vector<std::size_t> labels{0, 1, 1, 0};
  AdamW<float> opt(model.registry().param_ptrs(), AdamWOptions{});
  std::vector<float> losses;
  for (int step = 0; step <= 50; ++step) {
    Tape<float> tape;
    auto out = model.forward(tape, tape.constant(x), Mode::kTrain, drop);
    auto loss = graph::total_loss(out.logits, labels, out.nodes.probabilities, tape.constant(y));
    losses.push_back(loss.value().item());
    opt.zero_grad();
    tape.backward(loss);
    opt.step();
  }
  EXPECT_LT(losses.back(), 0.5f * losses.front()) << losses.front() << " -> " << losses.back();
}

TEST(Evaluate, MacroSemantics) {
  const Evaluation perfect = score_predictions({0, 1, 1, 2}, {0, 1, 1, 2}, 3);
  for (double a : perfect.per_class) EXPECT_EQ(a, 1.0);
  EXPECT_EQ(perfect.macro, 1.0);

  // Class 0 has 9 clips all right, class 1 has 1 clip wrong.
  std::vector<std::size_t> labels(9, 0), preds(9, 0);
  labels.push_back(1);
  preds.push_back(0);
  const Evaluation half = score_predictions(labels, preds, 2);
  EXPECT_EQ(half.macro, 0.5);
  EXPECT_EQ(half.overall, 0.9);

  const Evaluation absent = score_predictions({0, 0}, {0, 1}, 3);
  EXPECT_TRUE(std::isnan(absent.per_class[2]));
  EXPECT_EQ(absent.macro, 0.5);
}

TEST(Evaluate, MatchesBruteForceConfusion) {
  Rng rng(9);
  for (int trial = 0; trial < 20; ++trial) {
    const std::size_t k = 2 + rng.below(5), n = 1 + rng.below(60);
    std::vector<std::size_t> labels(n), preds(n);
    for (std::size_t i = 0; i < n; ++i) {
      labels[i] = rng.below(k);
      preds[i] = rng.below(k);
    }
    const Evaluation ev = score_predictions(labels, preds, k);
    double macro = 0.0;
    std::size_t present = 0, correct = 0;
    for (std::size_t c = 0; c < k; ++c) {
      std::size_t total = 0, hit = 0;
      for (std::size_t p = 0; p < k; ++p) {
        std::size_t cell = 0;
        for (std::size_t i = 0; i < n; ++i) cell += labels[i] == c && preds[i] == p;
        EXPECT_EQ(ev.confusion[c][p], cell);
        total += cell;
        if (p == c) hit = cell;
      }
      correct += hit;
      if (total) {
        macro += static_cast<double>(hit) / static_cast<double>(total);
        ++present;
      }
    }
    EXPECT_NEAR(ev.macro, macro / static_cast<double>(present), 1e-9);
    EXPECT_NEAR(ev.overall, static_cast<double>(correct) / static_cast<double>(n), 1e-12);
  }
}

TEST(Evaluate, UnseenSceneIsInputError) {
  const Dataset data = load_dataset(tiny_corpus().manifest, tiny_corpus().labels);
  const TrainResult run = train(tiny_config(1), data);
  DatasetManifest m = data.manifest;
  m.entries[0].scene = "volcano";
  EXPECT_THROW(evaluate(run.checkpoint, m), InputError);
}

TEST(Predict, ContractRepeatabilityAndAgreementWithEvaluate) {
  const Dataset data = load_dataset(tiny_corpus().manifest, tiny_corpus().labels);
  const TrainResult run = train(tiny_config(2), data);

  const features::MelSpectrogram silence{Tensor<float>(Shape{26, 64}, -100.0f)};
  const Prediction p = predict(run.checkpoint, silence);
  EXPECT_LT(p.scene, 2u);
  EXPECT_EQ(p.scene_name, run.checkpoint.scene_vocab[p.scene]);
  EXPECT_NEAR(std::accumulate(p.scene_probs.begin(), p.scene_probs.end(), 0.0), 1.0, 1e-9);
  EXPECT_EQ(p.event_probs.size(), 3u);
  const Prediction q = predict(run.checkpoint, silence);
  EXPECT_EQ(p.logits, q.logits);
  EXPECT_EQ(p.event_probs, q.event_probs);

  const Evaluation ev = evaluate(run.checkpoint, data.manifest);
  for (std::size_t i = 0; i < data.manifest.entries.size(); ++i) {
    EXPECT_EQ(predict(run.checkpoint, data.manifest.entries[i].path).scene, ev.predictions[i]) << ev.clip_ids[i];
  }
}

TEST(Synth, TemplatesLabelsAndDeterminism) {
  Rng rng(10);
  const auto templates = scene_templates(5, 4, rng);
  for (std::size_t a = 0; a < 5; ++a) {
    for (std::size_t b = a + 1; b < 5; ++b) {
      double gap = 0.0;
      for (std::size_t e = 0; e < 4; ++e) gap = std::max(gap, std::abs(templates[a][e] - templates[b][e]));
      EXPECT_GE(gap, kTemplateSeparation);
    }
  }
  const SynthData& d = tiny_corpus();
  const auto table = encoder::read_pseudo_labels(d.labels);
  EXPECT_EQ(table.num_events(), encoder::kEventVocabSize);
  EXPECT_EQ(table.num_clips(), 8u);
  for (const auto& id : table.clip_ids()) {
    for (double v : table.row(id)) {
      EXPECT_GE(v, 0.0);
      EXPECT_LE(v, 1.0);
    }
  }

  SynthConfig cfg;
  cfg.clips_per_scene = 2;
  cfg.clip_seconds = 0.25;
  const auto d1 = synth_data(cfg, test::scratch_dir("synth_a"));
  const auto d2 = synth_data(cfg, test::scratch_dir("synth_b"));
  EXPECT_EQ(read_bytes(d1.labels), read_bytes(d2.labels));
  const DatasetManifest m1 = read_manifest(d1.manifest), m2 = read_manifest(d2.manifest);
  for (std::size_t i = 0; i < m1.entries.size(); ++i) {
    EXPECT_EQ(read_bytes(m1.entries[i].path), read_bytes(m2.entries[i].path));
  }
}

}  // namespace
}  // namespace ergl::pipeline

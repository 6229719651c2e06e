#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <numeric>

#include "ergl/encoder.hpp"
#include "ergl/errors.hpp"
#include "ergl/gradcheck.hpp"
#include "ergl/pseudo_labels.hpp"
#include "test_util.hpp"

namespace ergl::encoder {
namespace {

using test::random_tensor;

PseudoLabelTable toy_table() {
  PseudoLabelTable t({"Speech", "Vehicle", "Inside, small room"});
  t.add_row("a", {0.4, 0.7, 0.1});
  t.add_row("b", {0.5, 0.8, 0.2});
  return t;
}

// Independent ranking: long double totals, full sort by (-total, index).
std::vector<std::size_t> sort_oracle(const PseudoLabelTable& t, const std::vector<std::string>& ids,
                                     std::size_t n) {
  std::vector<long double> totals(t.num_events(), 0.0L);
  for (const auto& id : ids) {
    const auto row = t.row(id);
    for (std::size_t e = 0; e < row.size(); ++e) totals[e] += row[e];
  }
  std::vector<std::size_t> order(t.num_events());
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return totals[a] != totals[b] ? totals[a] > totals[b] : a < b;
  });
  order.resize(n);
  std::sort(order.begin(), order.end());
  return order;
}

TEST(PseudoLabels, CsvRoundTripKeepsQuotedNames) {
  const auto dir = test::scratch_dir("labels");
  const PseudoLabelTable t = toy_table();
  write_pseudo_labels(dir / "l.csv", t);
  const PseudoLabelTable back = read_pseudo_labels(dir / "l.csv");
  EXPECT_EQ(back.event_names(), t.event_names());
  EXPECT_EQ(back.clip_ids(), t.clip_ids());
  for (const auto& id : t.clip_ids()) {
    const auto a = t.row(id), b = back.row(id);
    EXPECT_TRUE(std::equal(a.begin(), a.end(), b.begin()));
  }
}

TEST(PseudoLabels, RejectsBadRows) {
  PseudoLabelTable t({"x", "y"});
  EXPECT_THROW(t.add_row("a", {0.1}), InputError);
  EXPECT_THROW(t.add_row("a", {0.1, 1.5}), InputError);
  t.add_row("a", {0.1, 0.2});
  EXPECT_THROW(t.add_row("a", {0.1, 0.2}), InputError);
  EXPECT_THROW(t.row("zzz"), InputError);
}

TEST(RankTopN, ToyTableSelectsLargestSums) {
  // Sums are [0.9, 1.5, 0.3].
  const PseudoLabelTable t = toy_table();
  const std::vector<std::string> ids{"a", "b"};
  EXPECT_EQ(rank_top_n(t, ids, 2), (std::vector<std::size_t>{0, 1}));
  EXPECT_EQ(rank_top_n(t, ids, 2), sort_oracle(t, ids, 2));
  const auto ranked = rank_events(t, ids);
  EXPECT_EQ(ranked[0].index, 1u);
  EXPECT_NEAR(ranked[0].total, 1.5, 1e-12);
}

TEST(RankTopN, FullVocabularyReturnsEveryIndex) {
  std::vector<std::string> names(kEventVocabSize);
  for (std::size_t i = 0; i < names.size(); ++i) names[i] = "e" + std::to_string(i);
  PseudoLabelTable t(names);
  Rng rng(3);
  std::vector<double> row(kEventVocabSize);
  for (double& v : row) v = rng.uniform();
  t.add_row("c", row);
  const std::vector<std::string> ids{"c"};
  std::vector<std::size_t> all(kEventVocabSize);
  std::iota(all.begin(), all.end(), 0);
  EXPECT_EQ(rank_top_n(t, ids, kEventVocabSize), all);
}

TEST(RankTopN, TiesGoToSmallerIndex) {
  PseudoLabelTable t({"a", "b", "c", "d"});
  t.add_row("x", {0.5, 0.25, 0.5, 0.5});
  const std::vector<std::string> ids{"x"};
  EXPECT_EQ(rank_top_n(t, ids, 2), (std::vector<std::size_t>{0, 2}));
}

TEST(RankTopN, UnknownClipIsInputError) {
  const PseudoLabelTable t = toy_table();
  const std::vector<std::string> ids{"a", "missing"};
  EXPECT_THROW(rank_top_n(t, ids, 1), InputError);
}

TEST(RankTopN, MatchesSortOracleOnRandomTables) {
  Rng rng(11);
  for (int trial = 0; trial < 300; ++trial) {
    const std::size_t events = 1 + rng.below(10), clips = 1 + rng.below(10);
    std::vector<std::string> names(events);
    for (std::size_t e = 0; e < events; ++e) names[e] = "e" + std::to_string(e);
    PseudoLabelTable t(names);
    std::vector<std::string> ids;
    const bool coarse = trial % 2 == 0;  // coarse grids force ties
    for (std::size_t c = 0; c < clips; ++c) {
      std::vector<double> row(events);
      for (double& v : row) v = coarse ? 0.25 * static_cast<double>(rng.below(5)) : rng.uniform();
      ids.push_back("c" + std::to_string(c));
      t.add_row(ids.back(), row);
    }
    const std::size_t n = 1 + rng.below(events);
    ASSERT_EQ(rank_top_n(t, ids, n), sort_oracle(t, ids, n)) << "trial " << trial;
  }
}

TEST(Backbone, OutputShapeAndTooSmallInput) {
  Rng init(1), drop(2);
  Backbone<float> bb(test_backbone(), init);
  for (std::size_t frames : {2u, 9u, 51u}) {
    Tape<float> tape(false);
    Rng data(frames);
    auto x = tape.constant(random_tensor<float>({3, frames, 64}, data));
    EXPECT_EQ(bb.forward(tape, x, Mode::kEval, drop).shape(), (Shape{3, 2048}));
  }
  Tape<float> tape(false);
  auto tiny = tape.constant(Tensor<float>(Shape{1, 1, 64}));
  EXPECT_THROW(bb.forward(tape, tiny, Mode::kEval, drop), InputError);

  Rng init4(1);
  Backbone<float> deep(paper_backbone(), init4);
  auto short_clip = tape.constant(Tensor<float>(Shape{1, 15, 64}));
  EXPECT_THROW(deep.forward(tape, short_clip, Mode::kEval, drop), InputError);
}

TEST(Backbone, PoolingOnlyIgnoresFrameOrder) {
  BackboneConfig cfg{{}, 16, 0.0};
  Rng init(4), drop(0), data(5);
  Backbone<double> bb(cfg, init);
  Tensor<double> x = random_tensor<double>({1, 6, 4}, data);
  Tensor<double> y(x.shape());
  const std::size_t perm[] = {3, 0, 5, 1, 4, 2};
  for (std::size_t t = 0; t < 6; ++t) {
    for (std::size_t f = 0; f < 4; ++f) y.at({0, t, f}) = x.at({0, perm[t], f});
  }
  Tape<double> tape(false);
  auto a = bb.forward(tape, tape.constant(x), Mode::kEval, drop);
  auto b = bb.forward(tape, tape.constant(y), Mode::kEval, drop);
  EXPECT_LT(max_abs_diff(a.value(), b.value()), 1e-12);
}

TEST(Backbone, EvalModeIsDeterministic) {
  Rng init(6), data(7);
  Backbone<float> bb(test_backbone(), init);
  const auto x = random_tensor<float>({2, 16, 16}, data);
  Rng r1(0), r2(99);
  Tape<float> tape(false);
  auto a = bb.forward(tape, tape.constant(x), Mode::kEval, r1);
  auto b = bb.forward(tape, tape.constant(x), Mode::kEval, r2);
  EXPECT_EQ(a.value(), b.value());
}

TEST(Backbone, GradientThroughOneBlock) {
  Rng init(8), data(9);
  Backbone<double> bb({{2}, 6, 0.0}, init);
  const auto x = random_tensor<double>({2, 8, 8}, data);
  auto report = finite_diff_check(
      [&](ShadowTape& t, ShadowVar in) {
        Rng drop(0);
        return sum(bb.forward(t, in, Mode::kEval, drop));
      },
      x, 1e-6);
  EXPECT_LT(report.max_rel_error, 1e-4);
}

TEST(EventHeads, ZeroJointGivesBiasPath) {
  Rng init(10);
  EventHeads<double> heads(5, 3, 4, init);
  Tape<double> tape(false);
  auto nodes = heads.forward(tape, tape.constant(Tensor<double>(Shape{2, 5})));
  EXPECT_EQ(nodes.embeddings.shape(), (Shape{2, 3, 4}));
  EXPECT_EQ(nodes.probabilities.shape(), (Shape{2, 3}));
  for (std::size_t i = 0; i < 3; ++i) {
    const Linear<double>& e = heads.embed_layer(i);
    const Linear<double>& c = heads.classifier_layer(i);
    double logit = c.bias.value[0];
    for (std::size_t k = 0; k < 4; ++k) {
      const double emb = std::max(0.0, e.bias.value[k]);
      logit += emb * c.weight.value.at({k, 0});
      for (std::size_t b = 0; b < 2; ++b) EXPECT_EQ(nodes.embeddings.value().at({b, i, k}), emb);
    }
    for (std::size_t b = 0; b < 2; ++b) {
      EXPECT_NEAR(nodes.probabilities.value().at({b, i}), 1.0 / (1.0 + std::exp(-logit)), 1e-12);
    }
  }
}

TEST(EventHeads, HeadsAreIsolated) {
  Rng init(12), data(13);
  EventHeads<double> heads(6, 4, 5, init);
  const auto joint = random_tensor<double>({3, 6}, data);
  Tape<double> t0(false);
  const auto before = heads.forward(t0, t0.constant(joint));
  for (double& w : heads.embed_layer(2).weight.value.values()) w += 0.3;
  for (double& w : heads.classifier_layer(2).bias.value.values()) w -= 0.4;
  Tape<double> t1(false);
  const auto after = heads.forward(t1, t1.constant(joint));
  for (std::size_t b = 0; b < 3; ++b) {
    for (std::size_t i = 0; i < 4; ++i) {
      const bool same_p = before.probabilities.value().at({b, i}) == after.probabilities.value().at({b, i});
      EXPECT_EQ(same_p, i != 2) << "batch " << b << " head " << i;
      for (std::size_t k = 0; k < 5; ++k) {
        if (i != 2) {
          EXPECT_EQ(before.embeddings.value().at({b, i, k}), after.embeddings.value().at({b, i, k}));
        }
      }
    }
  }
}

TEST(EventHeads, GradientOfOneEmbeddingSkipsOtherHeads) {
  Rng init(14), data(15);
  EventHeads<double> heads(6, 3, 5, init);
  Tape<double> tape;
  auto nodes = heads.forward(tape, tape.constant(random_tensor<double>({2, 6}, data)));
  // Select embedding 1 with a mask and sum it.
  Tensor<double> mask(nodes.embeddings.shape());
  for (std::size_t b = 0; b < 2; ++b) {
    for (std::size_t k = 0; k < 5; ++k) mask.at({b, 1, k}) = 1.0;
  }
  tape.backward(sum(mul(nodes.embeddings, tape.constant(mask))));
  for (std::size_t j : {0u, 2u}) {
    const auto& g = heads.embed_layer(j).weight.grad;
    EXPECT_TRUE(g.empty() || std::all_of(g.values().begin(), g.values().end(), [](double v) { return v == 0.0; }))
        << "head " << j;
  }
  EXPECT_TRUE(heads.embed_layer(1).weight.has_grad());
}

TEST(EventHeads, ProbabilitiesStrictlyInsideUnitInterval) {
  Rng init(16), data(17);
  EventHeads<float> heads(32, 6, 8, init);
  Tape<float> tape(false);
  auto nodes = heads.forward(tape, tape.constant(random_tensor<float>({16, 32}, data, 0.0, 3.0)));
  for (float p : nodes.probabilities.value().values()) {
    EXPECT_GT(p, 0.0f);
    EXPECT_LT(p, 1.0f);
  }
}

TEST(EventHeads, NeedsTwoEvents) {
  Rng init(0);
  EXPECT_THROW(EventHeads<float>(4, 1, 4, init), ConfigError);
}

TEST(EventLoss, Examples) {
  Tape<double> tape(false);
  EventNodeSet<double> nodes;
  nodes.probabilities = tape.constant(Tensor<double>(Shape{2, 3}, 0.5));
  EXPECT_EQ(event_loss(nodes, tape.constant(Tensor<double>(Shape{2, 3}, 0.0))).value().item(), 0.25);
  EXPECT_EQ(event_loss(nodes, tape.constant(Tensor<double>(Shape{2, 3}, 0.5))).value().item(), 0.0);
  EXPECT_THROW(event_loss(nodes, tape.constant(Tensor<double>(Shape{3, 2}))), DimensionError);
}

TEST(EventLoss, MatchesDirectEvaluation) {
  Rng rng(18);
  const auto p = random_tensor<float>({5, 7}, rng, 0.0, 1.0);
  const auto y = random_tensor<float>({5, 7}, rng, 0.0, 1.0);
  Tape<float> tape(false);
  EventNodeSet<float> nodes;
  nodes.probabilities = tape.constant(p);
  long double acc = 0.0L;
  for (std::size_t i = 0; i < p.size(); ++i) {
    const long double d = static_cast<long double>(p[i]) - static_cast<long double>(y[i]);
    acc += d * d;
  }
  const double oracle = static_cast<double>(acc / p.size());
  const float got = event_loss(nodes, tape.constant(y)).value().item();
  EXPECT_NEAR(got, oracle, 1e-6);
  EXPECT_GE(got, 0.0f);
}

}  // namespace
}  // namespace ergl::encoder

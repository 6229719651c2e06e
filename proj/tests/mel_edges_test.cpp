#include <gtest/gtest.h>

#include <cmath>
#include <numeric>

#include "ergl/errors.hpp"
#include "ergl/gradcheck.hpp"
#include "ergl/mel_edges.hpp"
#include "test_util.hpp"

namespace ergl::mel {
namespace {

using test::random_tensor;
using Mat = std::vector<std::vector<long double>>;

// Row vector times weight matrix stored [in, out].
std::vector<long double> project(const std::vector<long double>& x, const Tensor<double>& w) {
  std::vector<long double> out(w.extent(1), 0.0L);
  for (std::size_t o = 0; o < w.extent(1); ++o) {
    for (std::size_t i = 0; i < x.size(); ++i) out[o] += x[i] * w.at({i, o});
  }
  return out;
}

// softmax(q K^T / sqrt(d)) V for one query row.
std::vector<long double> attend(const std::vector<long double>& q, const Mat& k, const Mat& v) {
  const long double scale = 1.0L / std::sqrt(static_cast<long double>(q.size()));
  std::vector<long double> w(k.size());
  long double top = -INFINITY;
  for (std::size_t j = 0; j < k.size(); ++j) {
    w[j] = std::inner_product(q.begin(), q.end(), k[j].begin(), 0.0L) * scale;
    top = std::max(top, w[j]);
  }
  long double z = 0.0L;
  for (long double& x : w) z += (x = std::exp(x - top));
  std::vector<long double> out(v[0].size(), 0.0L);
  for (std::size_t j = 0; j < v.size(); ++j) {
    for (std::size_t c = 0; c < out.size(); ++c) out[c] += w[j] / z * v[j][c];
  }
  return out;
}

std::vector<long double> row_of(const Tensor<double>& t, std::size_t b, std::size_t i) {
  const std::size_t w = t.extent(2);
  return {t.data() + (b * t.extent(1) + i) * w, t.data() + (b * t.extent(1) + i + 1) * w};
}

// e_ij from two flat S vectors: queries from s_j, keys and values from s_i.
std::vector<long double> edge_oracle(NodePairAttention<double>& nnm, const std::vector<long double>& s_i,
                                     const std::vector<long double>& s_j) {
  const std::size_t t = nnm.tokens(), c = nnm.channels();
  Mat k(t), v(t);
  std::vector<long double> e(c, 0.0L);
  for (std::size_t a = 0; a < t; ++a) {
    std::vector<long double> tok(s_i.begin() + a * c, s_i.begin() + (a + 1) * c);
    k[a] = project(tok, nnm.key.weight.value);
    v[a] = project(tok, nnm.value.weight.value);
  }
  for (std::size_t a = 0; a < t; ++a) {
    std::vector<long double> tok(s_j.begin() + a * c, s_j.begin() + (a + 1) * c);
    const auto r = attend(project(tok, nnm.query.weight.value), k, v);
    for (std::size_t ch = 0; ch < c; ++ch) e[ch] += r[ch] / t;
  }
  return e;
}

template <typename T>
void set_identity(Linear<T>& l) {
  l.weight.value.fill(T{0});
  for (std::size_t i = 0; i < l.in_features(); ++i) l.weight.value.at({i, i}) = T{1};
}

// out[b, i] = x[b, perm[i]] along axis 1.
Tensor<double> permute_nodes(const Tensor<double>& x, const std::vector<std::size_t>& perm) {
  Tensor<double> out(x.shape());
  const std::size_t b = x.extent(0), n = x.extent(1), w = x.size() / (b * n);
  for (std::size_t bi = 0; bi < b; ++bi) {
    for (std::size_t i = 0; i < n; ++i) {
      std::copy_n(x.data() + (bi * n + perm[i]) * w, w, out.data() + (bi * n + i) * w);
    }
  }
  return out;
}

TEST(Ncm, IdenticalNodesGiveUniformAttention) {
  Rng init(1), data(2);
  NodeContextAttention<double> ncm(16, init);
  const auto one = random_tensor<double>({1, 1, 16}, data);
  Tensor<double> x(Shape{2, 5, 16});
  for (std::size_t i = 0; i < x.size(); ++i) x[i] = one[i % 16];
  Tape<double> tape(false);
  const auto out = ncm.forward(tape, tape.constant(x));
  for (double a : out.attention.value().values()) EXPECT_NEAR(a, 0.2, 1e-15);
  for (std::size_t b = 0; b < 2; ++b) {
    for (std::size_t i = 1; i < 5; ++i) {
      for (std::size_t k = 0; k < 16; ++k) EXPECT_EQ(out.values.value().at({b, i, k}), out.values.value().at({b, 0, k}));
    }
  }
}

TEST(Ncm, ZeroQueryKeyGivesNodeMean) {
  Rng init(3), data(4);
  NodeContextAttention<double> ncm(8, init);
  ncm.query.weight.value.fill(0.0);
  ncm.key.weight.value.fill(0.0);
  set_identity(ncm.value);
  const auto x = random_tensor<double>({2, 4, 8}, data);
  Tape<double> tape(false);
  const auto out = ncm.forward(tape, tape.constant(x));
  for (std::size_t b = 0; b < 2; ++b) {
    for (std::size_t k = 0; k < 8; ++k) {
      double mean = 0.0;
      for (std::size_t j = 0; j < 4; ++j) mean += x.at({b, j, k}) / 4.0;
      for (std::size_t i = 0; i < 4; ++i) EXPECT_NEAR(out.values.value().at({b, i, k}), mean, 1e-14);
    }
  }
}

TEST(Ncm, MatchesDirectEvaluation) {
  Rng init(5), data(6);
  NodeContextAttention<double> ncm(64, init);
  const auto x = random_tensor<double>({2, 3, 64}, data);
  Tape<double> tape(false);
  const auto out = ncm.forward(tape, tape.constant(x));
  for (std::size_t b = 0; b < 2; ++b) {
    Mat k(3), v(3);
    for (std::size_t j = 0; j < 3; ++j) {
      k[j] = project(row_of(x, b, j), ncm.key.weight.value);
      v[j] = project(row_of(x, b, j), ncm.value.weight.value);
    }
    for (std::size_t i = 0; i < 3; ++i) {
      const auto s = attend(project(row_of(x, b, i), ncm.query.weight.value), k, v);
      for (std::size_t c = 0; c < 64; ++c) {
        EXPECT_NEAR(out.values.value().at({b, i, c}), static_cast<double>(s[c]), 1e-12);
      }
    }
  }
}

TEST(Ncm, AttentionRowsSumToOne) {
  Rng init(7), data(8);
  NodeContextAttention<float> ncm(64, init);
  Tape<float> tape(false);
  const auto out = ncm.forward(tape, tape.constant(random_tensor<float>({4, 9, 64}, data, -3.0, 3.0)));
  const auto& a = out.attention.value();
  for (std::size_t r = 0; r < 4 * 9; ++r) {
    double s = 0.0;
    for (std::size_t j = 0; j < 9; ++j) s += a[r * 9 + j];
    EXPECT_NEAR(s, 1.0, 1e-6);
  }
}

TEST(Ncm, SingleNodeIsConfigError) {
  Rng init(0);
  NodeContextAttention<float> ncm(8, init);
  Tape<float> tape(false);
  EXPECT_THROW(ncm.forward(tape, tape.constant(Tensor<float>(Shape{1, 1, 8}))), ConfigError);
}

TEST(Nnm, EqualInputsGiveEqualDirections) {
  Rng init(9), data(10);
  NodePairAttention<double> nnm(8, 8, init);
  Tape<double> tape(false);
  auto s = tape.constant(random_tensor<double>({64}, data));
  const auto [ij, ji] = nnm.edge_pair(tape, s, s);
  EXPECT_EQ(ij.value(), ji.value());
  EXPECT_EQ(ij.shape(), (Shape{8}));
}

TEST(Nnm, ZeroQueryKeyGivesTokenMeanOfSource) {
  Rng init(11), data(12);
  NodePairAttention<double> nnm(8, 8, init);
  nnm.query.weight.value.fill(0.0);
  nnm.key.weight.value.fill(0.0);
  set_identity(nnm.value);
  const auto si = random_tensor<double>({64}, data);
  Tape<double> tape(false);
  const auto e1 = nnm.directed_edge(tape, tape.constant(si), tape.constant(random_tensor<double>({64}, data)));
  const auto e2 = nnm.directed_edge(tape, tape.constant(si), tape.constant(random_tensor<double>({64}, data)));
  for (std::size_t c = 0; c < 8; ++c) {
    double mean = 0.0;
    for (std::size_t t = 0; t < 8; ++t) mean += si[t * 8 + c] / 8.0;
    EXPECT_NEAR(e1.value()[c], mean, 1e-14);
    EXPECT_NEAR(e2.value()[c], mean, 1e-14);
  }
}

TEST(Nnm, PairMatchesDirectEvaluation) {
  Rng init(13), data(14);
  NodePairAttention<double> nnm(8, 8, init);
  const auto si = random_tensor<double>({64}, data, -2.0, 2.0);
  const auto sj = random_tensor<double>({64}, data, -2.0, 2.0);
  Tape<double> tape(false);
  const auto [ij, ji] = nnm.edge_pair(tape, tape.constant(si), tape.constant(sj));
  const std::vector<long double> li(si.values().begin(), si.values().end());
  const std::vector<long double> lj(sj.values().begin(), sj.values().end());
  const auto oij = edge_oracle(nnm, li, lj), oji = edge_oracle(nnm, lj, li);
  for (std::size_t c = 0; c < 8; ++c) {
    EXPECT_NEAR(ij.value()[c], static_cast<double>(oij[c]), 1e-12);
    EXPECT_NEAR(ji.value()[c], static_cast<double>(oji[c]), 1e-12);
  }
}

TEST(Nnm, SwapExchangesDirections) {
  Rng init(15), data(16);
  NodePairAttention<float> nnm(8, 8, init);
  Tape<float> tape(false);
  auto a = tape.constant(random_tensor<float>({64}, data));
  auto b = tape.constant(random_tensor<float>({64}, data));
  const auto [ab, ba] = nnm.edge_pair(tape, a, b);
  const auto [ba2, ab2] = nnm.edge_pair(tape, b, a);
  EXPECT_EQ(ab.value(), ab2.value());
  EXPECT_EQ(ba.value(), ba2.value());
  EXPECT_NE(ab.value(), ba.value());
}

TEST(BuildEdges, BatchedEqualsPairwiseLoopBitForBit) {
  Rng init(17), data(18);
  NodePairAttention<float> nnm(8, 8, init);
  const auto s = random_tensor<float>({2, 4, 64}, data, -2.0, 2.0);
  Tape<float> tape(false);
  const auto edges = nnm.build_edges(tape, tape.constant(s));
  ASSERT_EQ(edges.shape(), (Shape{2, 4, 4, 8}));
  for (std::size_t b = 0; b < 2; ++b) {
    for (std::size_t i = 0; i < 4; ++i) {
      for (std::size_t j = 0; j < 4; ++j) {
        Tensor<float> si(Shape{64}), sj(Shape{64});
        std::copy_n(s.data() + (b * 4 + i) * 64, 64, si.data());
        std::copy_n(s.data() + (b * 4 + j) * 64, 64, sj.data());
        const auto e = nnm.directed_edge(tape, tape.constant(si), tape.constant(sj));
        for (std::size_t c = 0; c < 8; ++c) {
          ASSERT_EQ(edges.value().at({b, i, j, c}), e.value()[c]) << b << "," << i << "," << j;
        }
      }
    }
  }
}

TEST(BuildEdges, TwoNodesAreDirected) {
  Rng init(19), data(20);
  NodePairAttention<float> nnm(8, 8, init);
  Tape<float> tape(false);
  const auto e = nnm.build_edges(tape, tape.constant(random_tensor<float>({1, 2, 64}, data)));
  EXPECT_EQ(e.shape(), (Shape{1, 2, 2, 8}));
  EXPECT_TRUE(e.value().all_finite());
  bool differ = false;
  for (std::size_t c = 0; c < 8; ++c) differ |= e.value().at({0, 0, 1, c}) != e.value().at({0, 1, 0, c});
  EXPECT_TRUE(differ);
}

TEST(Mel, PermutationEquivariance) {
  Rng init(21), data(22);
  NodeContextAttention<double> ncm(64, init);
  NodePairAttention<double> nnm(8, 8, init);
  for (std::size_t n : {3u, 5u, 8u}) {
    std::vector<std::size_t> perm(n);
    std::iota(perm.begin(), perm.end(), 0);
    data.shuffle(perm);
    const auto v = random_tensor<double>({2, n, 64}, data);
    Tape<double> tape(false);
    const auto s = ncm.forward(tape, tape.constant(v)).values;
    const auto s_perm = ncm.forward(tape, tape.constant(permute_nodes(v, perm))).values;
    EXPECT_LT(max_abs_diff(s_perm.value(), permute_nodes(s.value(), perm)), 1e-12);
    const auto e = nnm.build_edges(tape, s);
    const auto e_perm = nnm.build_edges(tape, tape.constant(permute_nodes(s.value(), perm)));
    for (std::size_t b = 0; b < 2; ++b) {
      for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = 0; j < n; ++j) {
          for (std::size_t c = 0; c < 8; ++c) {
            EXPECT_NEAR(e_perm.value().at({b, i, j, c}), e.value().at({b, perm[i], perm[j], c}), 1e-12);
          }
        }
      }
    }
  }
}

TEST(Mel, GradientThroughNcmAndEdges) {
  Rng init(23), data(24);
  NodeContextAttention<double> ncm(16, init);
  NodePairAttention<double> nnm(4, 4, init);
  const auto v = random_tensor<double>({2, 3, 16}, data);
  const auto w = random_tensor<double>({2, 3, 3, 4}, data);
  auto f = [&](ShadowTape& t, ShadowVar x) {
    return sum(mul(nnm.build_edges(t, ncm.forward(t, x).values), t.constant(w)));
  };
  EXPECT_LT(finite_diff_check(f, v, 1e-6).max_rel_error, 1e-4);

  std::vector<NamedParam> params;
  for (auto* l : {&ncm.query, &ncm.key, &ncm.value}) params.push_back({"ncm", &l->weight});
  for (auto* l : {&nnm.query, &nnm.key, &nnm.value}) params.push_back({"nnm", &l->weight});
  Rng pick(0);
  const auto report = finite_diff_check_params(
      [&](ShadowTape& t) { return f(t, t.constant(v)); }, params, 1e-6, 0, pick);
  EXPECT_LT(report.max_rel_error, 1e-4) << report.worst_name;
}

}  // namespace
}  // namespace ergl::mel

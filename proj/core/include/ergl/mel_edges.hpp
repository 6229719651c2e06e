#pragma once

#include <cstddef>
#include <string>
#include <utility>

#include "ergl/layers.hpp"

namespace ergl::mel {

// Scene-aware event features S_i and the NCM attention that produced them.
template <typename T>
struct SceneAwareFeature {
  Var<T> values;     // [b, n, width]
  Var<T> attention;  // [b, n, n]; row i holds node i's weights over all nodes
};

// Node-context relationship modelling: each node v_i queries the set of all
// node embeddings with single-head scaled dot-product attention,
// S_i = softmax(v_i Wq (V Wk)^T / sqrt(d_k)) V Wv with d_k = width.
template <typename T>
class NodeContextAttention {
 public:
  NodeContextAttention() = default;
  NodeContextAttention(std::size_t width, Rng& init_rng);

  // nodes: [b, n, width]
  SceneAwareFeature<T> forward(Tape<T>& tape, Var<T> nodes);
  void collect(const std::string& prefix, ParamRegistry<T>& reg);

  Linear<T> query;
  Linear<T> key;
  Linear<T> value;
};

// Node-node relationship modelling. Each S vector is split into `tokens`
// tokens of `channels` channels. The directed edge e_ij attends from the
// tokens of S_j (queries) to the tokens of S_i (keys and values) and averages
// the attended tokens, giving a `channels`-wide edge feature.
template <typename T>
class NodePairAttention {
 public:
  NodePairAttention() = default;
  NodePairAttention(std::size_t tokens, std::size_t channels, Rng& init_rng);

  // One directed edge from two [tokens * channels] vectors. Returns [channels].
  Var<T> directed_edge(Tape<T>& tape, Var<T> s_i, Var<T> s_j);

  // (e_ij, e_ji) for a single pair.
  std::pair<Var<T>, Var<T>> edge_pair(Tape<T>& tape, Var<T> s_i, Var<T> s_j);

  // Every ordered pair including i == j, evaluated in one batch:
  // S [b, n, tokens * channels] -> E [b, n, n, channels] with E[b, i, j] = e_ij.
  Var<T> build_edges(Tape<T>& tape, Var<T> scene_aware);

  void collect(const std::string& prefix, ParamRegistry<T>& reg);

  std::size_t tokens() const { return tokens_; }
  std::size_t channels() const { return channels_; }

  Linear<T> query;
  Linear<T> key;
  Linear<T> value;

 private:
  T inv_sqrt_channels() const;

  std::size_t tokens_ = 0;
  std::size_t channels_ = 0;
};

extern template class NodeContextAttention<float>;
extern template class NodeContextAttention<double>;
extern template class NodePairAttention<float>;
extern template class NodePairAttention<double>;

}  // namespace ergl::mel

#include "ergl/mel_edges.hpp"

#include <cmath>

#include "ergl/errors.hpp"

namespace ergl::mel {

template <typename T>
NodeContextAttention<T>::NodeContextAttention(std::size_t width, Rng& init_rng)
    : query(width, width, false, init_rng),
      key(width, width, false, init_rng),
      value(width, width, false, init_rng) {}

template <typename T>
SceneAwareFeature<T> NodeContextAttention<T>::forward(Tape<T>& tape, Var<T> nodes) {
  const Shape& s = nodes.shape();
  if (s.size() != 3) throw DimensionError("NCM expects [b, n, width], got " + shape_str(s));
  if (s[1] < 2) {
    throw ConfigError("NCM needs at least 2 nodes; attention over one key is degenerate");
  }
  const std::size_t d_k = key.out_features();
  Var<T> q = query.forward(tape, nodes);
  Var<T> k = key.forward(tape, nodes);
  Var<T> v = value.forward(tape, nodes);
  const T inv = static_cast<T>(1.0 / std::sqrt(static_cast<double>(d_k)));
  Var<T> scores = scale(batched_matmul(q, k, true), inv);  // [b, n, n]
  SceneAwareFeature<T> out;
  out.attention = softmax(scores, 2);
  out.values = batched_matmul(out.attention, v);
  return out;
}

template <typename T>
void NodeContextAttention<T>::collect(const std::string& prefix, ParamRegistry<T>& reg) {
  query.collect(prefix + ".query", reg);
  key.collect(prefix + ".key", reg);
  value.collect(prefix + ".value", reg);
}

template <typename T>
NodePairAttention<T>::NodePairAttention(std::size_t tokens, std::size_t channels, Rng& init_rng)
    : query(channels, channels, false, init_rng),
      key(channels, channels, false, init_rng),
      value(channels, channels, false, init_rng),
      tokens_(tokens),
      channels_(channels) {
  if (tokens == 0 || channels == 0) throw ConfigError("NNM token layout must be positive");
}

template <typename T>
T NodePairAttention<T>::inv_sqrt_channels() const {
  return static_cast<T>(1.0 / std::sqrt(static_cast<double>(channels_)));
}

template <typename T>
Var<T> NodePairAttention<T>::directed_edge(Tape<T>& tape, Var<T> s_i, Var<T> s_j) {
  const Shape tok{tokens_, channels_};
  if (s_i.value().size() != tokens_ * channels_ || s_j.value().size() != tokens_ * channels_) {
    throw DimensionError("NNM expects vectors of " + std::to_string(tokens_ * channels_) +
                         " values, got " + shape_str(s_i.shape()) + " and " +
                         shape_str(s_j.shape()));
  }
  Var<T> q = query.forward(tape, reshape(s_j, tok));
  Var<T> kv = reshape(s_i, tok);
  Var<T> k = key.forward(tape, kv);
  Var<T> v = value.forward(tape, kv);
  Var<T> attn = softmax(scale(batched_matmul(q, k, true), inv_sqrt_channels()), 1);
  return global_avg_pool(batched_matmul(attn, v), 0);
}

template <typename T>
std::pair<Var<T>, Var<T>> NodePairAttention<T>::edge_pair(Tape<T>& tape, Var<T> s_i, Var<T> s_j) {
  return {directed_edge(tape, s_i, s_j), directed_edge(tape, s_j, s_i)};
}

template <typename T>
Var<T> NodePairAttention<T>::build_edges(Tape<T>& tape, Var<T> scene_aware) {
  const Shape& s = scene_aware.shape();
  if (s.size() != 3 || s[2] != tokens_ * channels_) {
    throw DimensionError("build_edges expects [b, n, " + std::to_string(tokens_ * channels_) +
                         "], got " + shape_str(s));
  }
  const std::size_t b = s[0], n = s[1];
  Var<T> toks = reshape(scene_aware, Shape{b, n, tokens_, channels_});
  Var<T> q = query.forward(tape, toks);
  Var<T> k = key.forward(tape, toks);
  Var<T> v = value.forward(tape, toks);
  // Pair (i, j): queries from node j, keys/values from node i.
  Var<T> q_pairs = broadcast_pairs(q, PairIndex::kCol);  // [b, n, n, t, c]
  Var<T> k_pairs = broadcast_pairs(k, PairIndex::kRow);
  Var<T> v_pairs = broadcast_pairs(v, PairIndex::kRow);
  Var<T> attn = softmax(scale(batched_matmul(q_pairs, k_pairs, true), inv_sqrt_channels()), 4);
  return global_avg_pool(batched_matmul(attn, v_pairs), 3);  // [b, n, n, c]
}

template <typename T>
void NodePairAttention<T>::collect(const std::string& prefix, ParamRegistry<T>& reg) {
  query.collect(prefix + ".query", reg);
  key.collect(prefix + ".key", reg);
  value.collect(prefix + ".value", reg);
}

template class NodeContextAttention<float>;
template class NodeContextAttention<double>;
template class NodePairAttention<float>;
template class NodePairAttention<double>;

}  // namespace ergl::mel

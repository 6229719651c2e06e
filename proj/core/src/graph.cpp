#include "ergl/graph.hpp"

#include "ergl/errors.hpp"

namespace ergl::graph {

template <typename T>
GraphEmbed<T>::GraphEmbed(std::size_t node_width, std::size_t edge_width, std::size_t hidden,
                          Rng& init_rng)
    : node_proj(node_width, hidden, true, init_rng), edge_proj(edge_width, hidden, true, init_rng) {}

template <typename T>
EventRelationalGraph<T> GraphEmbed<T>::forward(Tape<T>& tape, Var<T> nodes, Var<T> edges) {
  const Shape& ns = nodes.shape();
  const Shape& es = edges.shape();
  if (ns.size() != 3 || es.size() != 4 || es[0] != ns[0] || es[1] != ns[1] || es[2] != ns[1]) {
    throw DimensionError("graph_embed: nodes " + shape_str(ns) + " inconsistent with edges " +
                         shape_str(es));
  }
  return {node_proj.forward(tape, nodes), edge_proj.forward(tape, edges)};
}

template <typename T>
void GraphEmbed<T>::collect(const std::string& prefix, ParamRegistry<T>& reg) {
  node_proj.collect(prefix + ".node", reg);
  edge_proj.collect(prefix + ".edge", reg);
}

template <typename T>
GatedGcnLayer<T>::GatedGcnLayer(std::size_t hidden, Rng& init_rng)
    : a(hidden, hidden, false, init_rng),
      b(hidden, hidden, false, init_rng),
      c(hidden, hidden, false, init_rng),
      u(hidden, hidden, false, init_rng),
      v(hidden, hidden, false, init_rng),
      edge_norm(hidden, 3),
      node_norm(hidden, 2) {}

template <typename T>
EventRelationalGraph<T> GatedGcnLayer<T>::forward(Tape<T>& tape, const EventRelationalGraph<T>& g,
                                                  Mode mode, Var<T>* gates) {
  Var<T> h = g.nodes;
  Var<T> e = g.edges;
  Var<T> pre_edge = add(add(a.forward(tape, e), broadcast_pairs(b.forward(tape, h), PairIndex::kRow)),
                        broadcast_pairs(c.forward(tape, h), PairIndex::kCol));
  Var<T> e_new = add(e, relu(edge_norm.forward(tape, pre_edge, mode)));

  Var<T> sig = sigmoid(e_new);                                                  // [b, n, n, d]
  Var<T> denom = add_scalar(sum_axis(sig, 2), static_cast<T>(kGateEps));        // [b, n, d]
  Var<T> eta = div(sig, broadcast_pairs(denom, PairIndex::kRow));
  if (gates) *gates = eta;
  Var<T> messages = mul(eta, broadcast_pairs(v.forward(tape, h), PairIndex::kCol));
  Var<T> pre_node = add(u.forward(tape, h), sum_axis(messages, 2));
  Var<T> h_new = add(h, relu(node_norm.forward(tape, pre_node, mode)));
  return {h_new, e_new};
}

template <typename T>
void GatedGcnLayer<T>::collect(const std::string& prefix, ParamRegistry<T>& reg) {
  a.collect(prefix + ".A", reg);
  b.collect(prefix + ".B", reg);
  c.collect(prefix + ".C", reg);
  u.collect(prefix + ".U", reg);
  v.collect(prefix + ".V", reg);
  edge_norm.collect(prefix + ".edge_bn", reg);
  node_norm.collect(prefix + ".node_bn", reg);
}

template <typename T>
GatedGcn<T>::GatedGcn(std::size_t hidden, std::size_t num_layers, Rng& init_rng) {
  if (num_layers < 1) throw ConfigError("gated GCN needs at least one layer");
  for (std::size_t i = 0; i < num_layers; ++i) layers_.emplace_back(hidden, init_rng);
}

template <typename T>
EventRelationalGraph<T> GatedGcn<T>::forward(Tape<T>& tape, EventRelationalGraph<T> g, Mode mode) {
  for (GatedGcnLayer<T>& layer : layers_) g = layer.forward(tape, g, mode);
  return g;
}

template <typename T>
void GatedGcn<T>::collect(const std::string& prefix, ParamRegistry<T>& reg) {
  for (std::size_t i = 0; i < layers_.size(); ++i) {
    layers_[i].collect(prefix + ".layer" + std::to_string(i), reg);
  }
}

template <typename T>
SceneHead<T>::SceneHead(std::size_t num_nodes, std::size_t hidden, std::size_t num_scenes,
                        double dropout, Rng& init_rng)
    : fc(num_nodes * hidden, num_scenes, true, init_rng), num_nodes_(num_nodes), dropout_(dropout) {
  if (num_scenes < 2) throw ConfigError("scene head needs at least 2 scenes");
}

template <typename T>
Var<T> SceneHead<T>::forward(Tape<T>& tape, const EventRelationalGraph<T>& g, Mode mode, Rng& rng) {
  const Shape& s = g.nodes.shape();
  if (s.size() != 3 || s[1] != num_nodes_) {
    throw UsageError("scene head built for " + std::to_string(num_nodes_) +
                     " nodes received " + shape_str(s));
  }
  Var<T> flat = reshape(g.nodes, Shape{s[0], s[1] * s[2]});
  return fc.forward(tape, dropout(flat, dropout_, mode, rng));
}

template <typename T>
void SceneHead<T>::collect(const std::string& prefix, ParamRegistry<T>& reg) {
  fc.collect(prefix + ".fc", reg);
}

template <typename T>
Var<T> total_loss(Var<T> scene_logits, std::span<const std::size_t> scene_labels,
                  Var<T> event_pred, Var<T> event_labels) {
  return add(loss_ce(scene_logits, scene_labels), loss_mse(event_pred, event_labels));
}

template class GraphEmbed<float>;
template class GraphEmbed<double>;
template class GatedGcnLayer<float>;
template class GatedGcnLayer<double>;
template class GatedGcn<float>;
template class GatedGcn<double>;
template class SceneHead<float>;
template class SceneHead<double>;
template Var<float> total_loss(Var<float>, std::span<const std::size_t>, Var<float>, Var<float>);
template Var<double> total_loss(Var<double>, std::span<const std::size_t>, Var<double>, Var<double>);

}  // namespace ergl::graph

#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "ergl/layers.hpp"

namespace ergl::graph {

// Complete directed graph with self-loops. Topology never changes, so only
// features are carried.
template <typename T>
struct EventRelationalGraph {
  Var<T> nodes;  // [b, n, d]
  Var<T> edges;  // [b, n, n, d]
};

// Projects node embeddings and edge features to the hidden width (G^0).
template <typename T>
class GraphEmbed {
 public:
  GraphEmbed() = default;
  GraphEmbed(std::size_t node_width, std::size_t edge_width, std::size_t hidden, Rng& init_rng);

  EventRelationalGraph<T> forward(Tape<T>& tape, Var<T> nodes, Var<T> edges);
  void collect(const std::string& prefix, ParamRegistry<T>& reg);

  Linear<T> node_proj;
  Linear<T> edge_proj;
};

// Residual gated graph convolution:
//   e'_ij = e_ij + ReLU(BN(A e_ij + B h_i + C h_j))
//   eta_ij = sigmoid(e'_ij) / (sum_k sigmoid(e'_ik) + 1e-6)
//   h'_i  = h_i + ReLU(BN(U h_i + sum_j eta_ij * V h_j))
template <typename T>
class GatedGcnLayer {
 public:
  static constexpr double kGateEps = 1e-6;

  GatedGcnLayer() = default;
  GatedGcnLayer(std::size_t hidden, Rng& init_rng);

  EventRelationalGraph<T> forward(Tape<T>& tape, const EventRelationalGraph<T>& g, Mode mode,
                                  Var<T>* gates = nullptr);
  void collect(const std::string& prefix, ParamRegistry<T>& reg);

  Linear<T> a, b, c, u, v;
  BatchNorm<T> edge_norm;
  BatchNorm<T> node_norm;
};

template <typename T>
class GatedGcn {
 public:
  GatedGcn() = default;
  GatedGcn(std::size_t hidden, std::size_t num_layers, Rng& init_rng);

  EventRelationalGraph<T> forward(Tape<T>& tape, EventRelationalGraph<T> g, Mode mode);
  void collect(const std::string& prefix, ParamRegistry<T>& reg);

  std::vector<GatedGcnLayer<T>>& layers() { return layers_; }

 private:
  std::vector<GatedGcnLayer<T>> layers_;
};

// Concatenates the n node vectors (canonical event order) and maps them to
// scene logits with one affine layer.
template <typename T>
class SceneHead {
 public:
  SceneHead() = default;
  SceneHead(std::size_t num_nodes, std::size_t hidden, std::size_t num_scenes, double dropout,
            Rng& init_rng);

  Var<T> forward(Tape<T>& tape, const EventRelationalGraph<T>& g, Mode mode, Rng& rng);
  void collect(const std::string& prefix, ParamRegistry<T>& reg);

  std::size_t num_nodes() const { return num_nodes_; }

  Linear<T> fc;

 private:
  std::size_t num_nodes_ = 0;
  double dropout_ = 0.0;
};

// Unweighted sum L_scene (cross-entropy) + L_event (MSE).
template <typename T>
Var<T> total_loss(Var<T> scene_logits, std::span<const std::size_t> scene_labels,
                  Var<T> event_pred, Var<T> event_labels);

extern template class GraphEmbed<float>;
extern template class GraphEmbed<double>;
extern template class GatedGcnLayer<float>;
extern template class GatedGcnLayer<double>;
extern template class GatedGcn<float>;
extern template class GatedGcn<double>;
extern template class SceneHead<float>;
extern template class SceneHead<double>;

}  // namespace ergl::graph

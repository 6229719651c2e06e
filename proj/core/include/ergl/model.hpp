#pragma once

#include <cstddef>
#include <cstdint>

#include "ergl/encoder.hpp"
#include "ergl/graph.hpp"
#include "ergl/mel_edges.hpp"

namespace ergl {

struct ModelConfig {
  encoder::BackboneConfig backbone = encoder::paper_backbone();
  std::size_t num_events = 25;
  std::size_t num_scenes = 10;
  std::size_t embed_width = 64;
  std::size_t edge_tokens = 8;  // embeddings are split into tokens x (embed_width / tokens)
  std::size_t hidden_width = 64;
  std::size_t gcn_layers = 2;
  double head_dropout = 0.5;

  std::size_t edge_width() const { return embed_width / edge_tokens; }
  void validate() const;
};

// Spectrogram -> event nodes -> MEL edges -> gated GCN -> scene logits.
template <typename T>
class ErglModel {
 public:
  struct Output {
    encoder::EventNodeSet<T> nodes;
    mel::SceneAwareFeature<T> scene_aware;
    Var<T> edges;  // [b, n, n, edge_width]
    graph::EventRelationalGraph<T> graph;
    Var<T> logits;  // [b, num_scenes]
  };

  ErglModel(const ModelConfig& config, std::uint64_t init_seed);

  // spectrograms: [b, frames, bins]; `rng` drives dropout in train mode.
  Output forward(Tape<T>& tape, Var<T> spectrograms, Mode mode, Rng& rng);

  ParamRegistry<T> registry();
  const ModelConfig& config() const { return config_; }

  encoder::Backbone<T> backbone;
  encoder::EventHeads<T> heads;
  mel::NodeContextAttention<T> ncm;
  mel::NodePairAttention<T> nnm;
  graph::GraphEmbed<T> embed;
  graph::GatedGcn<T> gcn;
  graph::SceneHead<T> scene_head;

 private:
  ModelConfig config_;
};

// Same architecture and state in another precision.
template <typename To, typename From>
ErglModel<To> cast_model(ErglModel<From>& model) {
  ErglModel<To> out(model.config(), 0);
  copy_state(model.registry(), out.registry());
  return out;
}

extern template class ErglModel<float>;
extern template class ErglModel<double>;

}  // namespace ergl

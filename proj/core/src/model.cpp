#include "ergl/model.hpp"

#include "ergl/errors.hpp"

namespace ergl {

void ModelConfig::validate() const {
  if (num_events < 2) throw ConfigError("num_events must be >= 2");
  if (num_scenes < 2) throw ConfigError("num_scenes must be >= 2");
  if (edge_tokens == 0 || embed_width % edge_tokens != 0) {
    throw ConfigError("embed_width must split evenly into edge tokens");
  }
  if (gcn_layers < 1) throw ConfigError("gcn_layers must be >= 1");
  if (!(head_dropout >= 0.0 && head_dropout < 1.0) ||
      !(backbone.block_dropout >= 0.0 && backbone.block_dropout < 1.0)) {
    throw ConfigError("dropout rates must be in [0, 1)");
  }
}

namespace {

ModelConfig checked(const ModelConfig& c) {
  c.validate();
  return c;
}

}  // namespace

template <typename T>
ErglModel<T>::ErglModel(const ModelConfig& config, std::uint64_t init_seed)
    : config_(checked(config)) {
  // Fixed construction order keeps initial weights a pure function of the seed.
  Rng rng(init_seed);
  backbone = encoder::Backbone<T>(config_.backbone, rng);
  heads = encoder::EventHeads<T>(config_.backbone.joint_width, config_.num_events,
                                 config_.embed_width, rng);
  ncm = mel::NodeContextAttention<T>(config_.embed_width, rng);
  nnm = mel::NodePairAttention<T>(config_.edge_tokens, config_.edge_width(), rng);
  embed = graph::GraphEmbed<T>(config_.embed_width, config_.edge_width(), config_.hidden_width, rng);
  gcn = graph::GatedGcn<T>(config_.hidden_width, config_.gcn_layers, rng);
  scene_head = graph::SceneHead<T>(config_.num_events, config_.hidden_width, config_.num_scenes,
                                   config_.head_dropout, rng);
}

template <typename T>
typename ErglModel<T>::Output ErglModel<T>::forward(Tape<T>& tape, Var<T> spectrograms, Mode mode,
                                                    Rng& rng) {
  Output out;
  Var<T> joint = backbone.forward(tape, spectrograms, mode, rng);
  out.nodes = heads.forward(tape, joint);
  out.scene_aware = ncm.forward(tape, out.nodes.embeddings);
  out.edges = nnm.build_edges(tape, out.scene_aware.values);
  out.graph = gcn.forward(tape, embed.forward(tape, out.nodes.embeddings, out.edges), mode);
  out.logits = scene_head.forward(tape, out.graph, mode, rng);
  return out;
}

template <typename T>
ParamRegistry<T> ErglModel<T>::registry() {
  ParamRegistry<T> reg;
  backbone.collect("encoder.backbone", reg);
  heads.collect("encoder.heads", reg);
  ncm.collect("mel.ncm", reg);
  nnm.collect("mel.nnm", reg);
  embed.collect("graph.embed", reg);
  gcn.collect("graph.gcn", reg);
  scene_head.collect("graph.scene_head", reg);
  return reg;
}

template class ErglModel<float>;
template class ErglModel<double>;

}  // namespace ergl

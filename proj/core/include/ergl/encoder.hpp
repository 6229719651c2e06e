#pragma once

#include <cstddef>
#include <string>
#include <vector>

#include "ergl/layers.hpp"

namespace ergl::encoder {

struct BackboneConfig {
  std::vector<std::size_t> block_widths;  // one conv block per entry
  std::size_t joint_width = 2048;
  double block_dropout = 0.2;
};

// Four blocks of 64/128/256/512 channels.
BackboneConfig paper_backbone();
// One block of 8 channels; trains in seconds on a laptop.
BackboneConfig test_backbone();

// Event embeddings v_i and occurrence probabilities p_vi for a batch.
template <typename T>
struct EventNodeSet {
  Var<T> embeddings;     // [b, n, width]
  Var<T> probabilities;  // [b, n], each in [0, 1]
};

// Conv blocks (conv-BN-ReLU twice, 2x2 average pool, dropout), mean pooling
// over time and frequency, then a ReLU FC layer to the joint representation.
template <typename T>
class Backbone {
 public:
  Backbone() = default;
  Backbone(const BackboneConfig& config, Rng& init_rng);

  // spectrograms: [b, frames, bins] -> [b, joint_width]
  Var<T> forward(Tape<T>& tape, Var<T> spectrograms, Mode mode, Rng& rng);
  void collect(const std::string& prefix, ParamRegistry<T>& reg);

  std::size_t num_blocks() const { return blocks_.size(); }
  std::size_t joint_width() const { return fc_.out_features(); }

 private:
  struct Block {
    Conv3x3<T> conv1;
    BatchNorm<T> bn1;
    Conv3x3<T> conv2;
    BatchNorm<T> bn2;
  };

  std::vector<Block> blocks_;
  Linear<T> fc_;
  double block_dropout_ = 0.0;
};

// n independent heads: joint -> ReLU(affine) embedding -> sigmoid(affine)
// probability. Heads share no parameters.
template <typename T>
class EventHeads {
 public:
  EventHeads() = default;
  EventHeads(std::size_t joint_width, std::size_t num_events, std::size_t embed_width,
             Rng& init_rng);

  EventNodeSet<T> forward(Tape<T>& tape, Var<T> joint);
  void collect(const std::string& prefix, ParamRegistry<T>& reg);

  std::size_t num_events() const { return embed_.size(); }

  // Exposed for isolation tests.
  Linear<T>& embed_layer(std::size_t i) { return embed_.at(i); }
  Linear<T>& classifier_layer(std::size_t i) { return classify_.at(i); }

 private:
  std::vector<Linear<T>> embed_;
  std::vector<Linear<T>> classify_;
};

// MSE between predicted probabilities and pseudo-labels, both [b, n].
template <typename T>
Var<T> event_loss(const EventNodeSet<T>& nodes, Var<T> labels);

extern template class Backbone<float>;
extern template class Backbone<double>;
extern template class EventHeads<float>;
extern template class EventHeads<double>;

}  // namespace ergl::encoder

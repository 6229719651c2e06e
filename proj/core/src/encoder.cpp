#include "ergl/encoder.hpp"

#include "ergl/errors.hpp"

namespace ergl::encoder {

BackboneConfig paper_backbone() { return {{64, 128, 256, 512}, 2048, 0.2}; }

BackboneConfig test_backbone() { return {{8}, 2048, 0.2}; }

template <typename T>
Backbone<T>::Backbone(const BackboneConfig& config, Rng& init_rng)
    : block_dropout_(config.block_dropout) {
  std::size_t in = 1;
  for (std::size_t width : config.block_widths) {
    if (width == 0) throw ConfigError("backbone block width must be positive");
    Block b;
    b.conv1 = Conv3x3<T>(in, width, init_rng);
    b.bn1 = BatchNorm<T>(width, 1);
    b.conv2 = Conv3x3<T>(width, width, init_rng);
    b.bn2 = BatchNorm<T>(width, 1);
    blocks_.push_back(std::move(b));
    in = width;
  }
  fc_ = Linear<T>(in, config.joint_width, true, init_rng);
}

template <typename T>
Var<T> Backbone<T>::forward(Tape<T>& tape, Var<T> spectrograms, Mode mode, Rng& rng) {
  const Shape& s = spectrograms.shape();
  if (s.size() != 3) {
    throw DimensionError("backbone expects [batch, frames, bins], got " + shape_str(s));
  }
  const std::size_t min_extent = std::size_t{1} << blocks_.size();
  if (s[1] < min_extent || s[2] < min_extent) {
    throw InputError("spectrogram " + shape_str(s) + " too small for " +
                     std::to_string(blocks_.size()) + " pooling block(s); need >= " +
                     std::to_string(min_extent) + " frames and bins");
  }
  Var<T> x = reshape(spectrograms, Shape{s[0], 1, s[1], s[2]});
  for (Block& b : blocks_) {
    x = relu(b.bn1.forward(tape, b.conv1.forward(tape, x), mode));
    x = relu(b.bn2.forward(tape, b.conv2.forward(tape, x), mode));
    x = avg_pool2d(x);
    x = dropout(x, block_dropout_, mode, rng);
  }
  x = mean_axis(mean_axis(x, 3), 2);  // [b, channels]
  return relu(fc_.forward(tape, x));
}

template <typename T>
void Backbone<T>::collect(const std::string& prefix, ParamRegistry<T>& reg) {
  for (std::size_t i = 0; i < blocks_.size(); ++i) {
    const std::string p = prefix + ".block" + std::to_string(i);
    blocks_[i].conv1.collect(p + ".conv1", reg);
    blocks_[i].bn1.collect(p + ".bn1", reg);
    blocks_[i].conv2.collect(p + ".conv2", reg);
    blocks_[i].bn2.collect(p + ".bn2", reg);
  }
  fc_.collect(prefix + ".fc", reg);
}

template <typename T>
EventHeads<T>::EventHeads(std::size_t joint_width, std::size_t num_events,
                          std::size_t embed_width, Rng& init_rng) {
  if (num_events < 2) {
    throw ConfigError("event heads need n >= 2, got " + std::to_string(num_events));
  }
  for (std::size_t i = 0; i < num_events; ++i) {
    embed_.emplace_back(joint_width, embed_width, true, init_rng);
    classify_.emplace_back(embed_width, 1, true, init_rng);
  }
}

template <typename T>
EventNodeSet<T> EventHeads<T>::forward(Tape<T>& tape, Var<T> joint) {
  const std::size_t batch = joint.shape().at(0);
  std::vector<Var<T>> embeddings;
  std::vector<Var<T>> logits;
  embeddings.reserve(embed_.size());
  logits.reserve(embed_.size());
  for (std::size_t i = 0; i < embed_.size(); ++i) {
    Var<T> v = relu(embed_[i].forward(tape, joint));  // [b, width]
    embeddings.push_back(v);
    logits.push_back(classify_[i].forward(tape, v));  // [b, 1]
  }
  EventNodeSet<T> out;
  out.embeddings = stack(embeddings, 1);
  out.probabilities = sigmoid(reshape(stack(logits, 1), Shape{batch, embed_.size()}));
  return out;
}

template <typename T>
void EventHeads<T>::collect(const std::string& prefix, ParamRegistry<T>& reg) {
  for (std::size_t i = 0; i < embed_.size(); ++i) {
    embed_[i].collect(prefix + ".embed" + std::to_string(i), reg);
    classify_[i].collect(prefix + ".classify" + std::to_string(i), reg);
  }
}

template <typename T>
Var<T> event_loss(const EventNodeSet<T>& nodes, Var<T> labels) {
  if (labels.shape() != nodes.probabilities.shape()) {
    throw DimensionError("event_loss: labels " + shape_str(labels.shape()) +
                         " vs probabilities " + shape_str(nodes.probabilities.shape()));
  }
  return loss_mse(nodes.probabilities, labels);
}

template class Backbone<float>;
template class Backbone<double>;
template class EventHeads<float>;
template class EventHeads<double>;
template Var<float> event_loss(const EventNodeSet<float>&, Var<float>);
template Var<double> event_loss(const EventNodeSet<double>&, Var<double>);

}  // namespace ergl::encoder

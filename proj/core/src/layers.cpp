#include "ergl/layers.hpp"

#include <cmath>
#include <unordered_map>

#include "ergl/errors.hpp"

namespace ergl {

namespace {

template <typename T>
Tensor<T> uniform_tensor(Shape shape, double limit, Rng& rng) {
  Tensor<T> t(std::move(shape));
  for (std::size_t i = 0; i < t.size(); ++i) t[i] = static_cast<T>(rng.uniform(-limit, limit));
  return t;
}

}  // namespace

template <typename From, typename To>
void copy_state(const ParamRegistry<From>& src, const ParamRegistry<To>& dst) {
  std::unordered_map<std::string, const Tensor<From>*> by_name;
  for (const auto& e : src.params()) by_name.emplace(e.name, &e.param->value);
  for (const auto& e : src.buffers()) by_name.emplace(e.name, e.tensor);

  const auto assign = [&](const std::string& name, Tensor<To>& target) {
    auto it = by_name.find(name);
    if (it == by_name.end()) throw UsageError("copy_state: no source entry named " + name);
    if (it->second->shape() != target.shape()) {
      throw DimensionError("copy_state: " + name + " has shape " + shape_str(it->second->shape()) +
                           ", expected " + shape_str(target.shape()));
    }
    target = it->second->template cast<To>();
  };
  for (const auto& e : dst.params()) assign(e.name, e.param->value);
  for (const auto& e : dst.buffers()) assign(e.name, *e.tensor);
}

template <typename T>
Linear<T>::Linear(std::size_t in, std::size_t out, bool with_bias, Rng& rng)
    : weight(uniform_tensor<T>({in, out}, std::sqrt(6.0 / static_cast<double>(in + out)), rng)) {
  if (with_bias) bias = Parameter<T>(Tensor<T>(Shape{out}));
}

template <typename T>
Var<T> Linear<T>::forward(Tape<T>& tape, Var<T> x) {
  Var<T> b = bias.value.empty() ? Var<T>() : tape.param(bias);
  return linear(x, tape.param(weight), b);
}

template <typename T>
void Linear<T>::collect(const std::string& prefix, ParamRegistry<T>& reg) {
  reg.add(prefix + ".weight", weight);
  if (!bias.value.empty()) reg.add(prefix + ".bias", bias);
}

template <typename T>
Conv3x3<T>::Conv3x3(std::size_t in_channels, std::size_t out_channels, Rng& rng)
    : kernel(uniform_tensor<T>({out_channels, in_channels, 3, 3},
                               std::sqrt(6.0 / static_cast<double>(in_channels * 9)), rng)) {}

template <typename T>
Var<T> Conv3x3<T>::forward(Tape<T>& tape, Var<T> x) {
  return conv2d(x, tape.param(kernel));
}

template <typename T>
void Conv3x3<T>::collect(const std::string& prefix, ParamRegistry<T>& reg) {
  reg.add(prefix + ".kernel", kernel);
}

template <typename T>
BatchNorm<T>::BatchNorm(std::size_t channels, std::size_t axis)
    : gamma(Tensor<T>(Shape{channels}, T{1})),
      beta(Tensor<T>(Shape{channels}, T{0})),
      stats(channels),
      channel_axis(axis) {}

template <typename T>
Var<T> BatchNorm<T>::forward(Tape<T>& tape, Var<T> x, Mode mode) {
  return batch_norm(x, tape.param(gamma), tape.param(beta), stats, mode, channel_axis);
}

template <typename T>
void BatchNorm<T>::collect(const std::string& prefix, ParamRegistry<T>& reg) {
  reg.add(prefix + ".gamma", gamma);
  reg.add(prefix + ".beta", beta);
  reg.add_buffer(prefix + ".running_mean", stats.running_mean);
  reg.add_buffer(prefix + ".running_var", stats.running_var);
}

template class Linear<float>;
template class Linear<double>;
template class Conv3x3<float>;
template class Conv3x3<double>;
template class BatchNorm<float>;
template class BatchNorm<double>;

template void copy_state(const ParamRegistry<float>&, const ParamRegistry<float>&);
template void copy_state(const ParamRegistry<float>&, const ParamRegistry<double>&);
template void copy_state(const ParamRegistry<double>&, const ParamRegistry<float>&);
template void copy_state(const ParamRegistry<double>&, const ParamRegistry<double>&);

}  // namespace ergl

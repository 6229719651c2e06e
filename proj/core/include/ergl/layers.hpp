#pragma once

#include <cstddef>
#include <string>
#include <vector>

#include "ergl/autograd.hpp"
#include "ergl/ops.hpp"
#include "ergl/random.hpp"

namespace ergl {

// Flat, named view of a model's state used by the optimizer, checkpoints and
// precision casts. Pointers refer into the owning layers.
template <typename T>
class ParamRegistry {
 public:
  struct ParamEntry {
    std::string name;
    Parameter<T>* param;
  };
  struct BufferEntry {
    std::string name;
    Tensor<T>* tensor;
  };

  void add(std::string name, Parameter<T>& p) { params_.push_back({std::move(name), &p}); }
  void add_buffer(std::string name, Tensor<T>& t) { buffers_.push_back({std::move(name), &t}); }

  const std::vector<ParamEntry>& params() const { return params_; }
  const std::vector<BufferEntry>& buffers() const { return buffers_; }

  std::vector<Parameter<T>*> param_ptrs() const {
    std::vector<Parameter<T>*> out;
    for (const auto& e : params_) out.push_back(e.param);
    return out;
  }
  std::size_t num_scalars() const {
    std::size_t n = 0;
    for (const auto& e : params_) n += e.param->value.size();
    return n;
  }

 private:
  std::vector<ParamEntry> params_;
  std::vector<BufferEntry> buffers_;
};

// Copies every parameter and buffer from `src` into the entry of `dst` with the
// same name, converting precision. Both registries must list the same names.
template <typename From, typename To>
void copy_state(const ParamRegistry<From>& src, const ParamRegistry<To>& dst);

// Glorot-uniform initialised affine map x[..., in] -> [..., out].
template <typename T>
class Linear {
 public:
  Linear() = default;
  Linear(std::size_t in, std::size_t out, bool bias, Rng& rng);

  Var<T> forward(Tape<T>& tape, Var<T> x);
  void collect(const std::string& prefix, ParamRegistry<T>& reg);

  std::size_t in_features() const { return weight.value.extent(0); }
  std::size_t out_features() const { return weight.value.extent(1); }

  Parameter<T> weight;  // [in, out]
  Parameter<T> bias;    // [out]; empty when constructed without bias
};

// 3x3 "same" convolution without bias (a batch norm always follows).
template <typename T>
class Conv3x3 {
 public:
  Conv3x3() = default;
  Conv3x3(std::size_t in_channels, std::size_t out_channels, Rng& rng);

  Var<T> forward(Tape<T>& tape, Var<T> x);
  void collect(const std::string& prefix, ParamRegistry<T>& reg);

  Parameter<T> kernel;  // [out, in, 3, 3]
};

template <typename T>
class BatchNorm {
 public:
  BatchNorm() = default;
  BatchNorm(std::size_t channels, std::size_t channel_axis);

  Var<T> forward(Tape<T>& tape, Var<T> x, Mode mode);
  void collect(const std::string& prefix, ParamRegistry<T>& reg);

  Parameter<T> gamma;
  Parameter<T> beta;
  BatchNormStats<T> stats;
  std::size_t channel_axis = 1;
};

extern template class Linear<float>;
extern template class Linear<double>;
extern template class Conv3x3<float>;
extern template class Conv3x3<double>;
extern template class BatchNorm<float>;
extern template class BatchNorm<double>;

}  // namespace ergl

#pragma once

#include <cstdint>
#include <vector>

#include "ergl/autograd.hpp"

namespace ergl {

struct AdamWOptions {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.01;
};

template <typename T>
struct AdamWState {
  AdamWOptions options;
  std::uint64_t step = 0;
  std::vector<Tensor<T>> m;  // first moments, one per parameter
  std::vector<Tensor<T>> v;  // second moments
};

// Adam with decoupled weight decay: p <- p - lr*wd*p, then the bias-corrected
// Adam update.
template <typename T>
class AdamW {
 public:
  AdamW(std::vector<Parameter<T>*> params, AdamWOptions options = {});

  // Every parameter must hold a gradient.
  void step();
  void zero_grad();

  const AdamWState<T>& state() const { return state_; }
  void load_state(AdamWState<T> state);

 private:
  std::vector<Parameter<T>*> params_;
  AdamWState<T> state_;
};

extern template class AdamW<float>;
extern template class AdamW<double>;

}  // namespace ergl

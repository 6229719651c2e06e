#include "ergl/optim.hpp"

#include <cmath>
#include <string>

#include "ergl/errors.hpp"

namespace ergl {

template <typename T>
AdamW<T>::AdamW(std::vector<Parameter<T>*> params, AdamWOptions options)
    : params_(std::move(params)) {
  state_.options = options;
  for (const Parameter<T>* p : params_) {
    state_.m.emplace_back(p->value.shape());
    state_.v.emplace_back(p->value.shape());
  }
}

template <typename T>
void AdamW<T>::step() {
  for (std::size_t k = 0; k < params_.size(); ++k) {
    if (!params_[k]->has_grad()) {
      throw UsageError("adamw: parameter " + std::to_string(k) + " has no gradient");
    }
  }
  const AdamWOptions& o = state_.options;
  ++state_.step;
  const double t = static_cast<double>(state_.step);
  const double c1 = 1.0 - std::pow(o.beta1, t);
  const double c2 = 1.0 - std::pow(o.beta2, t);
  for (std::size_t k = 0; k < params_.size(); ++k) {
    Tensor<T>& p = params_[k]->value;
    const Tensor<T>& g = params_[k]->grad;
    Tensor<T>& m = state_.m[k];
    Tensor<T>& v = state_.v[k];
    for (std::size_t i = 0; i < p.size(); ++i) {
      double pi = static_cast<double>(p[i]);
      const double gi = static_cast<double>(g[i]);
      pi = pi - o.lr * o.weight_decay * pi;
      const double mi = o.beta1 * static_cast<double>(m[i]) + (1.0 - o.beta1) * gi;
      const double vi = o.beta2 * static_cast<double>(v[i]) + (1.0 - o.beta2) * gi * gi;
      m[i] = static_cast<T>(mi);
      v[i] = static_cast<T>(vi);
      pi -= o.lr * (mi / c1) / (std::sqrt(vi / c2) + o.eps);
      p[i] = static_cast<T>(pi);
    }
  }
}

template <typename T>
void AdamW<T>::zero_grad() {
  for (Parameter<T>* p : params_) p->zero_grad();
}

template <typename T>
void AdamW<T>::load_state(AdamWState<T> state) {
  if (state.m.size() != params_.size() || state.v.size() != params_.size()) {
    throw DimensionError("adamw: state holds " + std::to_string(state.m.size()) +
                         " moments for " + std::to_string(params_.size()) + " parameters");
  }
  for (std::size_t k = 0; k < params_.size(); ++k) {
    if (state.m[k].shape() != params_[k]->value.shape() ||
        state.v[k].shape() != params_[k]->value.shape()) {
      throw DimensionError("adamw: moment shape mismatch for parameter " + std::to_string(k));
    }
  }
  state_ = std::move(state);
}

template class AdamW<float>;
template class AdamW<double>;

}  // namespace ergl

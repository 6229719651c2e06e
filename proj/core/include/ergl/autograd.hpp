#pragma once

#include <cstddef>
#include <deque>
#include <functional>
#include <string>
#include <unordered_map>
#include <vector>

#include "ergl/tensor.hpp"

namespace ergl {

enum class Mode { kTrain, kEval };

// A trainable tensor owned by a layer. `grad` stays empty until a backward
// pass reaches the parameter; gradients accumulate until zero_grad().
template <typename T>
struct Parameter {
  Tensor<T> value;
  Tensor<T> grad;

  Parameter() = default;
  explicit Parameter(Tensor<T> v) : value(std::move(v)) {}

  bool has_grad() const { return !grad.empty(); }
  void zero_grad() { grad = Tensor<T>(); }
};

template <typename T>
class Tape;

// Handle to a value recorded on a tape. Cheap to copy; only valid while the
// owning tape is alive.
template <typename T>
class Var {
 public:
  Var() = default;
  Var(Tape<T>* tape, std::size_t id) : tape_(tape), id_(id) {}

  Tape<T>& tape() const { return *tape_; }
  std::size_t id() const { return id_; }
  bool valid() const { return tape_ != nullptr; }

  const Tensor<T>& value() const;
  const Shape& shape() const { return value().shape(); }
  bool requires_grad() const;

 private:
  Tape<T>* tape_ = nullptr;
  std::size_t id_ = 0;
};

// Records operations in execution order and replays their backward closures
// in exact reverse order. Confined to a single thread.
template <typename T>
class Tape {
 public:
  // Receives the gradient of the op output; accumulates into its inputs.
  using BackwardFn = std::function<void(Tape&, const Tensor<T>& grad_out)>;

  // A tape constructed with record=false never stores backward closures;
  // use it for inference.
  explicit Tape(bool record = true) : record_(record) {}
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  bool recording() const { return record_; }

  Var<T> constant(Tensor<T> value);
  // A free input whose gradient is readable through grad() after backward.
  Var<T> leaf(Tensor<T> value);
  // Enters a parameter once per tape; later calls return the same handle.
  Var<T> param(Parameter<T>& p);

  // Used by op implementations. The closure is kept only when recording and
  // at least one input requires a gradient.
  Var<T> record(Tensor<T> value, std::initializer_list<Var<T>> inputs, BackwardFn backward);
  Var<T> record(Tensor<T> value, const std::vector<Var<T>>& inputs, BackwardFn backward);

  const Tensor<T>& value(const Var<T>& v) const { return nodes_[v.id()].value; }
  bool requires_grad(const Var<T>& v) const { return nodes_[v.id()].requires_grad; }

  // Gradient accumulated for v; empty when backward never reached it.
  const Tensor<T>& grad(const Var<T>& v) const { return nodes_[v.id()].grad; }
  // Zero-initialised accumulation buffer for op backward closures.
  Tensor<T>& grad_buffer(const Var<T>& v);

  // Seeds d(loss)/d(loss) = 1 and runs every recorded closure in reverse.
  // Parameter gradients are then added into Parameter::grad.
  void backward(const Var<T>& loss);

  std::size_t num_nodes() const { return nodes_.size(); }
  std::size_t num_ops() const { return ops_.size(); }

 private:
  struct Node {
    Tensor<T> value;
    Tensor<T> grad;
    bool requires_grad = false;
    Parameter<T>* param = nullptr;
  };
  struct Op {
    std::size_t output;
    BackwardFn backward;
  };

  template <typename Range>
  Var<T> record_impl(Tensor<T> value, const Range& inputs, BackwardFn backward);

  bool record_;
  bool backward_done_ = false;
  std::deque<Node> nodes_;  // deque keeps references stable as nodes are added
  std::vector<Op> ops_;
  std::unordered_map<const Parameter<T>*, std::size_t> param_ids_;
};

template <typename T>
const Tensor<T>& Var<T>::value() const {
  return tape_->value(*this);
}

template <typename T>
bool Var<T>::requires_grad() const {
  return tape_->requires_grad(*this);
}

extern template class Tape<float>;
extern template class Tape<double>;

}  // namespace ergl

#include "ergl/autograd.hpp"

#include "ergl/errors.hpp"

namespace ergl {

template <typename T>
Var<T> Tape<T>::constant(Tensor<T> value) {
  nodes_.push_back(Node{std::move(value), {}, false, nullptr});
  return Var<T>(this, nodes_.size() - 1);
}

template <typename T>
Var<T> Tape<T>::leaf(Tensor<T> value) {
  nodes_.push_back(Node{std::move(value), {}, record_, nullptr});
  return Var<T>(this, nodes_.size() - 1);
}

template <typename T>
Var<T> Tape<T>::param(Parameter<T>& p) {
  if (auto it = param_ids_.find(&p); it != param_ids_.end()) return Var<T>(this, it->second);
  nodes_.push_back(Node{p.value, {}, record_, &p});
  const std::size_t id = nodes_.size() - 1;
  param_ids_.emplace(&p, id);
  return Var<T>(this, id);
}

template <typename T>
template <typename Range>
Var<T> Tape<T>::record_impl(Tensor<T> value, const Range& inputs, BackwardFn backward) {
  bool needs = false;
  if (record_) {
    for (const Var<T>& in : inputs) {
      if (&in.tape() != this) throw UsageError("op mixes values from different tapes");
      needs = needs || nodes_[in.id()].requires_grad;
    }
  }
  nodes_.push_back(Node{std::move(value), {}, needs, nullptr});
  const std::size_t id = nodes_.size() - 1;
  if (needs) ops_.push_back(Op{id, std::move(backward)});
  return Var<T>(this, id);
}

template <typename T>
Var<T> Tape<T>::record(Tensor<T> value, std::initializer_list<Var<T>> inputs, BackwardFn backward) {
  return record_impl(std::move(value), inputs, std::move(backward));
}

template <typename T>
Var<T> Tape<T>::record(Tensor<T> value, const std::vector<Var<T>>& inputs, BackwardFn backward) {
  return record_impl(std::move(value), inputs, std::move(backward));
}

template <typename T>
Tensor<T>& Tape<T>::grad_buffer(const Var<T>& v) {
  Node& n = nodes_[v.id()];
  if (n.grad.empty()) n.grad = Tensor<T>(n.value.shape());
  return n.grad;
}

template <typename T>
void Tape<T>::backward(const Var<T>& loss) {
  if (!record_) throw UsageError("backward on a non-recording tape");
  if (backward_done_) throw UsageError("backward called twice on one tape");
  if (loss.value().size() != 1) {
    throw DimensionError("backward needs a scalar loss, got " + shape_str(loss.shape()));
  }
  backward_done_ = true;
  if (!nodes_[loss.id()].requires_grad) return;
  grad_buffer(loss).fill(T{1});
  for (auto it = ops_.rbegin(); it != ops_.rend(); ++it) {
    const Node& out = nodes_[it->output];
    if (out.grad.empty()) continue;
    it->backward(*this, out.grad);
  }
  for (Node& n : nodes_) {
    if (!n.param || n.grad.empty()) continue;
    Parameter<T>& p = *n.param;
    if (p.grad.empty()) {
      p.grad = n.grad;
    } else {
      for (std::size_t i = 0; i < p.grad.size(); ++i) p.grad[i] += n.grad[i];
    }
  }
}

template class Tape<float>;
template class Tape<double>;

}  // namespace ergl

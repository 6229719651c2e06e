#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "ergl/autograd.hpp"
#include "ergl/random.hpp"
#include "ergl/tensor.hpp"

namespace ergl {

// Differentiable primitives. Every op reads its inputs' tape and records its
// output (plus a backward closure when a gradient is needed) on the same tape.
// Binary elementwise ops require identical shapes; broadcasting is explicit
// through broadcast_pairs() and linear().

template <typename T> Var<T> add(Var<T> a, Var<T> b);
template <typename T> Var<T> sub(Var<T> a, Var<T> b);
template <typename T> Var<T> mul(Var<T> a, Var<T> b);
template <typename T> Var<T> div(Var<T> a, Var<T> b);
template <typename T> Var<T> add_scalar(Var<T> a, T s);
template <typename T> Var<T> scale(Var<T> a, T s);

// Reductions. sum/mean return a rank-0 tensor; *_axis drop the reduced axis.
template <typename T> Var<T> sum(Var<T> a);
template <typename T> Var<T> mean(Var<T> a);
template <typename T> Var<T> sum_axis(Var<T> a, std::size_t axis);
template <typename T> Var<T> mean_axis(Var<T> a, std::size_t axis);

// GAP: arithmetic mean along the token axis.
template <typename T>
Var<T> global_avg_pool(Var<T> x, std::size_t axis) {
  return mean_axis(x, axis);
}

template <typename T> Var<T> reshape(Var<T> a, Shape shape);

// [m x k] . [k x p]
template <typename T> Var<T> matmul(Var<T> a, Var<T> b);

// Matrix products over matching leading batch axes:
// [..., m, k] . [..., k, p], or [..., m, k] . [..., p, k]^T when transpose_b.
template <typename T> Var<T> batched_matmul(Var<T> a, Var<T> b, bool transpose_b = false);

// x[..., d_in] . W[d_in, d_out] + b[d_out]. Pass a default Var for no bias.
template <typename T> Var<T> linear(Var<T> x, Var<T> weight, Var<T> bias = {});

enum class Activation { kRelu, kSigmoid };

template <typename T> Var<T> relu(Var<T> x);
template <typename T> Var<T> sigmoid(Var<T> x);
template <typename T> Var<T> activation(Var<T> x, Activation kind);

// exp(x - max) / sum, slice-wise along `axis`.
template <typename T> Var<T> softmax(Var<T> x, std::size_t axis);

// x[b, c_in, h, w] with kernel[c_out, c_in, 3, 3]; stride 1, zero padding 1,
// cross-correlation.
template <typename T> Var<T> conv2d(Var<T> x, Var<T> kernel);

// 2x2 average pooling with stride 2 over the last two axes; odd remainders
// are dropped.
template <typename T> Var<T> avg_pool2d(Var<T> x);

template <typename T>
struct BatchNormStats {
  Tensor<T> running_mean;
  Tensor<T> running_var;

  explicit BatchNormStats(std::size_t channels = 1)
      : running_mean(Shape{channels}, T{0}), running_var(Shape{channels}, T{1}) {}
};

inline constexpr double kBatchNormEps = 1e-5;
inline constexpr double kBatchNormMomentum = 0.1;

// Per-channel normalisation over every axis but `channel_axis`. Train mode
// uses batch statistics and updates `stats`; eval mode uses `stats`.
template <typename T>
Var<T> batch_norm(Var<T> x, Var<T> gamma, Var<T> beta, BatchNormStats<T>& stats, Mode mode,
                  std::size_t channel_axis = 1);

// Inverted dropout. Identity in eval mode or for p == 0.
template <typename T> Var<T> dropout(Var<T> x, double p, Mode mode, Rng& rng);

// Stacks equally shaped values along a new axis.
template <typename T> Var<T> stack(const std::vector<Var<T>>& xs, std::size_t axis);

enum class PairIndex {
  kRow,  // out[b, i, j] = x[b, i]
  kCol,  // out[b, i, j] = x[b, j]
};

// x[b, n, ...] -> [b, n, n, ...], copying node values onto every ordered pair.
template <typename T> Var<T> broadcast_pairs(Var<T> x, PairIndex which);

// Mean squared error over all elements.
template <typename T> Var<T> loss_mse(Var<T> pred, Var<T> target);

// Mean over the batch of -log softmax(logits)[label].
template <typename T> Var<T> loss_ce(Var<T> logits, std::span<const std::size_t> labels);

}  // namespace ergl

#include "ergl/ops.hpp"

#include <algorithm>
#include <cmath>
#include <memory>
#include <string>

#include "ergl/errors.hpp"

namespace ergl {

namespace {

template <typename T>
void require_same_shape(const char* op, const Var<T>& a, const Var<T>& b) {
  if (a.shape() != b.shape()) {
    throw DimensionError(std::string(op) + ": shape mismatch " + shape_str(a.shape()) + " vs " +
                         shape_str(b.shape()));
  }
}

// View of a shape as [outer, extent(axis), inner].
struct AxisSplit {
  std::size_t outer = 1;
  std::size_t extent = 1;
  std::size_t inner = 1;
};

AxisSplit split_at(const Shape& shape, std::size_t axis, const char* op) {
  if (axis >= shape.size()) {
    throw DimensionError(std::string(op) + ": axis " + std::to_string(axis) +
                         " out of range for " + shape_str(shape));
  }
  AxisSplit s;
  for (std::size_t i = 0; i < axis; ++i) s.outer *= shape[i];
  s.extent = shape[axis];
  for (std::size_t i = axis + 1; i < shape.size(); ++i) s.inner *= shape[i];
  return s;
}

Shape drop_axis(const Shape& shape, std::size_t axis) {
  Shape out;
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i != axis) out.push_back(shape[i]);
  }
  return out;
}

template <typename T>
bool wants(Tape<T>& t, const Var<T>& v) {
  return v.valid() && t.requires_grad(v);
}

// C[m, p] (+)= A[m, k] . B[k, p]; each entry is accumulated over k in order.
template <typename T>
void gemm_nn(const T* a, const T* b, T* c, std::size_t m, std::size_t k, std::size_t p) {
  for (std::size_t i = 0; i < m; ++i) {
    T* crow = c + i * p;
    for (std::size_t kk = 0; kk < k; ++kk) {
      const T av = a[i * k + kk];
      const T* brow = b + kk * p;
      for (std::size_t j = 0; j < p; ++j) crow[j] += av * brow[j];
    }
  }
}

// C[m, p] (+)= A[m, k] . B[p, k]^T
template <typename T>
void gemm_nt(const T* a, const T* b, T* c, std::size_t m, std::size_t k, std::size_t p) {
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t j = 0; j < p; ++j) {
      T acc = T{0};
      for (std::size_t kk = 0; kk < k; ++kk) acc += a[i * k + kk] * b[j * k + kk];
      c[i * p + j] += acc;
    }
  }
}

// C[k, p] (+)= A[m, k]^T . B[m, p]
template <typename T>
void gemm_tn(const T* a, const T* b, T* c, std::size_t m, std::size_t k, std::size_t p) {
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t kk = 0; kk < k; ++kk) {
      const T av = a[i * k + kk];
      T* crow = c + kk * p;
      const T* brow = b + i * p;
      for (std::size_t j = 0; j < p; ++j) crow[j] += av * brow[j];
    }
  }
}

}  // namespace

// ---------------------------------------------------------------------------
// Elementwise
// ---------------------------------------------------------------------------

template <typename T>
Var<T> add(Var<T> a, Var<T> b) {
  require_same_shape("add", a, b);
  Tensor<T> out = a.value();
  const Tensor<T>& bv = b.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] += bv[i];
  return a.tape().record(std::move(out), {a, b}, [a, b](Tape<T>& t, const Tensor<T>& g) {
    for (const Var<T>& v : {a, b}) {
      if (!t.requires_grad(v)) continue;
      Tensor<T>& gv = t.grad_buffer(v);
      for (std::size_t i = 0; i < g.size(); ++i) gv[i] += g[i];
    }
  });
}

template <typename T>
Var<T> sub(Var<T> a, Var<T> b) {
  require_same_shape("sub", a, b);
  Tensor<T> out = a.value();
  const Tensor<T>& bv = b.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] -= bv[i];
  return a.tape().record(std::move(out), {a, b}, [a, b](Tape<T>& t, const Tensor<T>& g) {
    if (t.requires_grad(a)) {
      Tensor<T>& ga = t.grad_buffer(a);
      for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
    }
    if (t.requires_grad(b)) {
      Tensor<T>& gb = t.grad_buffer(b);
      for (std::size_t i = 0; i < g.size(); ++i) gb[i] -= g[i];
    }
  });
}

template <typename T>
Var<T> mul(Var<T> a, Var<T> b) {
  require_same_shape("mul", a, b);
  Tensor<T> out = a.value();
  const Tensor<T>& bv = b.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] *= bv[i];
  return a.tape().record(std::move(out), {a, b}, [a, b](Tape<T>& t, const Tensor<T>& g) {
    const Tensor<T>& av = t.value(a);
    const Tensor<T>& bv = t.value(b);
    if (t.requires_grad(a)) {
      Tensor<T>& ga = t.grad_buffer(a);
      for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * bv[i];
    }
    if (t.requires_grad(b)) {
      Tensor<T>& gb = t.grad_buffer(b);
      for (std::size_t i = 0; i < g.size(); ++i) gb[i] += g[i] * av[i];
    }
  });
}

template <typename T>
Var<T> div(Var<T> a, Var<T> b) {
  require_same_shape("div", a, b);
  Tensor<T> out = a.value();
  const Tensor<T>& bv = b.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] /= bv[i];
  return a.tape().record(std::move(out), {a, b}, [a, b](Tape<T>& t, const Tensor<T>& g) {
    const Tensor<T>& av = t.value(a);
    const Tensor<T>& bv = t.value(b);
    if (t.requires_grad(a)) {
      Tensor<T>& ga = t.grad_buffer(a);
      for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] / bv[i];
    }
    if (t.requires_grad(b)) {
      Tensor<T>& gb = t.grad_buffer(b);
      for (std::size_t i = 0; i < g.size(); ++i) gb[i] -= g[i] * av[i] / (bv[i] * bv[i]);
    }
  });
}

template <typename T>
Var<T> add_scalar(Var<T> a, T s) {
  Tensor<T> out = a.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] += s;
  return a.tape().record(std::move(out), {a}, [a](Tape<T>& t, const Tensor<T>& g) {
    Tensor<T>& ga = t.grad_buffer(a);
    for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
  });
}

template <typename T>
Var<T> scale(Var<T> a, T s) {
  Tensor<T> out = a.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] *= s;
  return a.tape().record(std::move(out), {a}, [a, s](Tape<T>& t, const Tensor<T>& g) {
    Tensor<T>& ga = t.grad_buffer(a);
    for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * s;
  });
}

// ---------------------------------------------------------------------------
// Reductions and shape
// ---------------------------------------------------------------------------

template <typename T>
Var<T> sum(Var<T> a) {
  T acc = T{0};
  for (T v : a.value().values()) acc += v;
  return a.tape().record(Tensor<T>::scalar(acc), {a}, [a](Tape<T>& t, const Tensor<T>& g) {
    Tensor<T>& ga = t.grad_buffer(a);
    const T gv = g[0];
    for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += gv;
  });
}

template <typename T>
Var<T> mean(Var<T> a) {
  const T n = static_cast<T>(a.value().size());
  T acc = T{0};
  for (T v : a.value().values()) acc += v;
  return a.tape().record(Tensor<T>::scalar(acc / n), {a}, [a, n](Tape<T>& t, const Tensor<T>& g) {
    Tensor<T>& ga = t.grad_buffer(a);
    const T gv = g[0] / n;
    for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += gv;
  });
}

template <typename T>
Var<T> sum_axis(Var<T> a, std::size_t axis) {
  const AxisSplit s = split_at(a.shape(), axis, "sum_axis");
  const Tensor<T>& av = a.value();
  Tensor<T> out(drop_axis(a.shape(), axis));
  for (std::size_t o = 0; o < s.outer; ++o) {
    T* dst = out.data() + o * s.inner;
    for (std::size_t e = 0; e < s.extent; ++e) {
      const T* src = av.data() + (o * s.extent + e) * s.inner;
      for (std::size_t in = 0; in < s.inner; ++in) dst[in] += src[in];
    }
  }
  return a.tape().record(std::move(out), {a}, [a, s](Tape<T>& t, const Tensor<T>& g) {
    Tensor<T>& ga = t.grad_buffer(a);
    for (std::size_t o = 0; o < s.outer; ++o) {
      const T* src = g.data() + o * s.inner;
      for (std::size_t e = 0; e < s.extent; ++e) {
        T* dst = ga.data() + (o * s.extent + e) * s.inner;
        for (std::size_t in = 0; in < s.inner; ++in) dst[in] += src[in];
      }
    }
  });
}

template <typename T>
Var<T> mean_axis(Var<T> a, std::size_t axis) {
  const AxisSplit s = split_at(a.shape(), axis, "mean_axis");
  const T inv = T{1} / static_cast<T>(s.extent);
  const Tensor<T>& av = a.value();
  Tensor<T> out(drop_axis(a.shape(), axis));
  for (std::size_t o = 0; o < s.outer; ++o) {
    T* dst = out.data() + o * s.inner;
    for (std::size_t e = 0; e < s.extent; ++e) {
      const T* src = av.data() + (o * s.extent + e) * s.inner;
      for (std::size_t in = 0; in < s.inner; ++in) dst[in] += src[in];
    }
    for (std::size_t in = 0; in < s.inner; ++in) dst[in] *= inv;
  }
  return a.tape().record(std::move(out), {a}, [a, s, inv](Tape<T>& t, const Tensor<T>& g) {
    Tensor<T>& ga = t.grad_buffer(a);
    for (std::size_t o = 0; o < s.outer; ++o) {
      const T* src = g.data() + o * s.inner;
      for (std::size_t e = 0; e < s.extent; ++e) {
        T* dst = ga.data() + (o * s.extent + e) * s.inner;
        for (std::size_t in = 0; in < s.inner; ++in) dst[in] += src[in] * inv;
      }
    }
  });
}

template <typename T>
Var<T> reshape(Var<T> a, Shape shape) {
  Tensor<T> out = a.value().reshaped(std::move(shape));
  return a.tape().record(std::move(out), {a}, [a](Tape<T>& t, const Tensor<T>& g) {
    Tensor<T>& ga = t.grad_buffer(a);
    for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
  });
}

// ---------------------------------------------------------------------------
// Products
// ---------------------------------------------------------------------------

template <typename T>
Var<T> matmul(Var<T> a, Var<T> b) {
  if (a.shape().size() != 2 || b.shape().size() != 2 || a.shape()[1] != b.shape()[0]) {
    throw DimensionError("matmul: incompatible shapes " + shape_str(a.shape()) + " and " +
                         shape_str(b.shape()));
  }
  return batched_matmul(a, b, false);
}

template <typename T>
Var<T> batched_matmul(Var<T> a, Var<T> b, bool transpose_b) {
  const Shape& as = a.shape();
  const Shape& bs = b.shape();
  const auto fail = [&] {
    throw DimensionError("batched_matmul: incompatible shapes " + shape_str(as) + " and " +
                         shape_str(bs) + (transpose_b ? " (b transposed)" : ""));
  };
  if (as.size() < 2 || bs.size() != as.size()) fail();
  const std::size_t r = as.size();
  if (!std::equal(as.begin(), as.end() - 2, bs.begin())) fail();
  const std::size_t m = as[r - 2];
  const std::size_t k = as[r - 1];
  const std::size_t bk = transpose_b ? bs[r - 1] : bs[r - 2];
  const std::size_t p = transpose_b ? bs[r - 2] : bs[r - 1];
  if (bk != k) fail();
  std::size_t batch = 1;
  for (std::size_t i = 0; i + 2 < r; ++i) batch *= as[i];

  Shape out_shape(as.begin(), as.end() - 2);
  out_shape.push_back(m);
  out_shape.push_back(p);
  Tensor<T> out(out_shape);
  const T* ad = a.value().data();
  const T* bd = b.value().data();
  for (std::size_t n = 0; n < batch; ++n) {
    if (transpose_b) {
      gemm_nt(ad + n * m * k, bd + n * p * k, out.data() + n * m * p, m, k, p);
    } else {
      gemm_nn(ad + n * m * k, bd + n * k * p, out.data() + n * m * p, m, k, p);
    }
  }
  return a.tape().record(std::move(out), {a, b},
                         [a, b, transpose_b, batch, m, k, p](Tape<T>& t, const Tensor<T>& g) {
    const T* ad = t.value(a).data();
    const T* bd = t.value(b).data();
    if (t.requires_grad(a)) {
      T* ga = t.grad_buffer(a).data();
      for (std::size_t n = 0; n < batch; ++n) {
        const T* gn = g.data() + n * m * p;
        if (transpose_b) {
          // dA = dC . B   with B stored [p, k]
          gemm_nn(gn, bd + n * p * k, ga + n * m * k, m, p, k);
        } else {
          // dA = dC . B^T with B stored [k, p]
          gemm_nt(gn, bd + n * k * p, ga + n * m * k, m, p, k);
        }
      }
    }
    if (t.requires_grad(b)) {
      T* gb = t.grad_buffer(b).data();
      for (std::size_t n = 0; n < batch; ++n) {
        const T* gn = g.data() + n * m * p;
        if (transpose_b) {
          // dB[p, k] = dC^T . A
          gemm_tn(gn, ad + n * m * k, gb + n * p * k, m, p, k);
        } else {
          // dB[k, p] = A^T . dC
          gemm_tn(ad + n * m * k, gn, gb + n * k * p, m, k, p);
        }
      }
    }
  });
}

template <typename T>
Var<T> linear(Var<T> x, Var<T> weight, Var<T> bias) {
  const Shape& xs = x.shape();
  const Shape& ws = weight.shape();
  if (xs.empty() || ws.size() != 2 || xs.back() != ws[0]) {
    throw DimensionError("linear: input " + shape_str(xs) + " does not match weight " +
                         shape_str(ws));
  }
  const std::size_t d_in = ws[0];
  const std::size_t d_out = ws[1];
  if (bias.valid() && bias.shape() != Shape{d_out}) {
    throw DimensionError("linear: bias " + shape_str(bias.shape()) + " does not match weight " +
                         shape_str(ws));
  }
  const std::size_t rows = x.value().size() / d_in;
  Shape out_shape = xs;
  out_shape.back() = d_out;
  Tensor<T> out(out_shape);
  gemm_nn(x.value().data(), weight.value().data(), out.data(), rows, d_in, d_out);
  if (bias.valid()) {
    const T* bd = bias.value().data();
    for (std::size_t r = 0; r < rows; ++r) {
      T* row = out.data() + r * d_out;
      for (std::size_t j = 0; j < d_out; ++j) row[j] += bd[j];
    }
  }
  std::vector<Var<T>> inputs{x, weight};
  if (bias.valid()) inputs.push_back(bias);
  return x.tape().record(std::move(out), inputs,
                         [x, weight, bias, rows, d_in, d_out](Tape<T>& t, const Tensor<T>& g) {
    if (t.requires_grad(x)) {
      gemm_nt(g.data(), t.value(weight).data(), t.grad_buffer(x).data(), rows, d_out, d_in);
    }
    if (t.requires_grad(weight)) {
      gemm_tn(t.value(x).data(), g.data(), t.grad_buffer(weight).data(), rows, d_in, d_out);
    }
    if (wants(t, bias)) {
      T* gb = t.grad_buffer(bias).data();
      for (std::size_t r = 0; r < rows; ++r) {
        for (std::size_t j = 0; j < d_out; ++j) gb[j] += g[r * d_out + j];
      }
    }
  });
}

// ---------------------------------------------------------------------------
// Activations
// ---------------------------------------------------------------------------

template <typename T>
Var<T> relu(Var<T> x) {
  Tensor<T> out = x.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = out[i] > T{0} ? out[i] : T{0};
  return x.tape().record(std::move(out), {x}, [x](Tape<T>& t, const Tensor<T>& g) {
    const Tensor<T>& xv = t.value(x);
    Tensor<T>& gx = t.grad_buffer(x);
    for (std::size_t i = 0; i < g.size(); ++i) {
      if (xv[i] > T{0}) gx[i] += g[i];
    }
  });
}

template <typename T>
Var<T> sigmoid(Var<T> x) {
  Tensor<T> out = x.value();
  for (std::size_t i = 0; i < out.size(); ++i) {
    const T v = out[i];
    if (v >= T{0}) {
      out[i] = T{1} / (T{1} + std::exp(-v));
    } else {
      const T e = std::exp(v);
      out[i] = e / (T{1} + e);
    }
  }
  return x.tape().record(std::move(out), {x}, [x](Tape<T>& t, const Tensor<T>& g) {
    const Tensor<T>& xv = t.value(x);
    Tensor<T>& gx = t.grad_buffer(x);
    for (std::size_t i = 0; i < g.size(); ++i) {
      const T v = xv[i];
      T y;
      if (v >= T{0}) {
        y = T{1} / (T{1} + std::exp(-v));
      } else {
        const T e = std::exp(v);
        y = e / (T{1} + e);
      }
      gx[i] += g[i] * y * (T{1} - y);
    }
  });
}

template <typename T>
Var<T> activation(Var<T> x, Activation kind) {
  return kind == Activation::kRelu ? relu(x) : sigmoid(x);
}

template <typename T>
Var<T> softmax(Var<T> x, std::size_t axis) {
  const AxisSplit s = split_at(x.shape(), axis, "softmax");
  const Tensor<T>& xv = x.value();
  auto out = std::make_shared<Tensor<T>>(x.shape());
  for (std::size_t o = 0; o < s.outer; ++o) {
    for (std::size_t in = 0; in < s.inner; ++in) {
      const std::size_t base = o * s.extent * s.inner + in;
      T mx = xv[base];
      for (std::size_t e = 1; e < s.extent; ++e) mx = std::max(mx, xv[base + e * s.inner]);
      T total = T{0};
      for (std::size_t e = 0; e < s.extent; ++e) {
        const T v = std::exp(xv[base + e * s.inner] - mx);
        (*out)[base + e * s.inner] = v;
        total += v;
      }
      for (std::size_t e = 0; e < s.extent; ++e) (*out)[base + e * s.inner] /= total;
    }
  }
  Tensor<T> value = *out;
  return x.tape().record(std::move(value), {x}, [x, s, out](Tape<T>& t, const Tensor<T>& g) {
    const Tensor<T>& y = *out;
    Tensor<T>& gx = t.grad_buffer(x);
    for (std::size_t o = 0; o < s.outer; ++o) {
      for (std::size_t in = 0; in < s.inner; ++in) {
        const std::size_t base = o * s.extent * s.inner + in;
        T dot = T{0};
        for (std::size_t e = 0; e < s.extent; ++e) {
          dot += g[base + e * s.inner] * y[base + e * s.inner];
        }
        for (std::size_t e = 0; e < s.extent; ++e) {
          const std::size_t i = base + e * s.inner;
          gx[i] += y[i] * (g[i] - dot);
        }
      }
    }
  });
}

// ---------------------------------------------------------------------------
// Convolution and pooling
// ---------------------------------------------------------------------------

template <typename T>
Var<T> conv2d(Var<T> x, Var<T> kernel) {
  const Shape& xs = x.shape();
  const Shape& ks = kernel.shape();
  if (xs.size() != 4 || ks.size() != 4 || ks[2] != 3 || ks[3] != 3 || ks[1] != xs[1]) {
    throw DimensionError("conv2d: input " + shape_str(xs) + " incompatible with kernel " +
                         shape_str(ks));
  }
  const std::size_t nb = xs[0], cin = xs[1], h = xs[2], w = xs[3], cout = ks[0];
  Tensor<T> out(Shape{nb, cout, h, w});
  const T* xd = x.value().data();
  const T* kd = kernel.value().data();

  // Visits every (output pixel, input pixel) pair one kernel tap at a time;
  // `fn(out_index, in_index)` performs the accumulation.
  const auto for_each_tap = [h, w](auto&& fn) {
    for (std::size_t ky = 0; ky < 3; ++ky) {
      for (std::size_t kx = 0; kx < 3; ++kx) {
        const std::size_t y0 = ky == 0 ? 1 : 0;
        const std::size_t y1 = ky == 2 ? h - 1 : h;
        const std::size_t x0 = kx == 0 ? 1 : 0;
        const std::size_t x1 = kx == 2 ? w - 1 : w;
        for (std::size_t yy = y0; yy < y1; ++yy) {
          const std::size_t iy = yy + ky - 1;
          for (std::size_t xx = x0; xx < x1; ++xx) {
            fn(ky * 3 + kx, yy * w + xx, iy * w + (xx + kx - 1));
          }
        }
      }
    }
  };

  for (std::size_t b = 0; b < nb; ++b) {
    for (std::size_t co = 0; co < cout; ++co) {
      T* od = out.data() + (b * cout + co) * h * w;
      for (std::size_t ci = 0; ci < cin; ++ci) {
        const T* id = xd + (b * cin + ci) * h * w;
        const T* kk = kd + (co * cin + ci) * 9;
        for_each_tap([&](std::size_t tap, std::size_t o, std::size_t i) { od[o] += kk[tap] * id[i]; });
      }
    }
  }
  return x.tape().record(std::move(out), {x, kernel},
                         [x, kernel, nb, cin, cout, h, w, for_each_tap](Tape<T>& t,
                                                                         const Tensor<T>& g) {
    const T* xd = t.value(x).data();
    const T* kd = t.value(kernel).data();
    T* gx = t.requires_grad(x) ? t.grad_buffer(x).data() : nullptr;
    T* gk = t.requires_grad(kernel) ? t.grad_buffer(kernel).data() : nullptr;
    for (std::size_t b = 0; b < nb; ++b) {
      for (std::size_t co = 0; co < cout; ++co) {
        const T* gd = g.data() + (b * cout + co) * h * w;
        for (std::size_t ci = 0; ci < cin; ++ci) {
          const std::size_t in_off = (b * cin + ci) * h * w;
          const std::size_t k_off = (co * cin + ci) * 9;
          if (gx) {
            for_each_tap([&](std::size_t tap, std::size_t o, std::size_t i) {
              gx[in_off + i] += kd[k_off + tap] * gd[o];
            });
          }
          if (gk) {
            for_each_tap([&](std::size_t tap, std::size_t o, std::size_t i) {
              gk[k_off + tap] += xd[in_off + i] * gd[o];
            });
          }
        }
      }
    }
  });
}

template <typename T>
Var<T> avg_pool2d(Var<T> x) {
  const Shape& xs = x.shape();
  if (xs.size() < 2 || xs[xs.size() - 2] < 2 || xs.back() < 2) {
    throw DimensionError("avg_pool2d: spatial extents must be >= 2, got " + shape_str(xs));
  }
  const std::size_t h = xs[xs.size() - 2], w = xs.back();
  const std::size_t oh = h / 2, ow = w / 2;
  const std::size_t planes = x.value().size() / (h * w);
  Shape os = xs;
  os[os.size() - 2] = oh;
  os.back() = ow;
  Tensor<T> out(os);
  const T* xd = x.value().data();
  for (std::size_t p = 0; p < planes; ++p) {
    const T* src = xd + p * h * w;
    T* dst = out.data() + p * oh * ow;
    for (std::size_t y = 0; y < oh; ++y) {
      for (std::size_t c = 0; c < ow; ++c) {
        const T s = src[2 * y * w + 2 * c] + src[2 * y * w + 2 * c + 1] +
                    src[(2 * y + 1) * w + 2 * c] + src[(2 * y + 1) * w + 2 * c + 1];
        dst[y * ow + c] = s * T{0.25};
      }
    }
  }
  return x.tape().record(std::move(out), {x}, [x, planes, h, w, oh, ow](Tape<T>& t,
                                                                        const Tensor<T>& g) {
    T* gx = t.grad_buffer(x).data();
    for (std::size_t p = 0; p < planes; ++p) {
      const T* src = g.data() + p * oh * ow;
      T* dst = gx + p * h * w;
      for (std::size_t y = 0; y < oh; ++y) {
        for (std::size_t c = 0; c < ow; ++c) {
          const T v = src[y * ow + c] * T{0.25};
          dst[2 * y * w + 2 * c] += v;
          dst[2 * y * w + 2 * c + 1] += v;
          dst[(2 * y + 1) * w + 2 * c] += v;
          dst[(2 * y + 1) * w + 2 * c + 1] += v;
        }
      }
    }
  });
}

// ---------------------------------------------------------------------------
// Normalisation and regularisation
// ---------------------------------------------------------------------------

template <typename T>
Var<T> batch_norm(Var<T> x, Var<T> gamma, Var<T> beta, BatchNormStats<T>& stats, Mode mode,
                  std::size_t channel_axis) {
  const AxisSplit s = split_at(x.shape(), channel_axis, "batch_norm");
  const std::size_t c = s.extent;
  if (gamma.shape() != Shape{c} || beta.shape() != Shape{c} ||
      stats.running_mean.shape() != Shape{c} || stats.running_var.shape() != Shape{c}) {
    throw DimensionError("batch_norm: parameters do not match " + std::to_string(c) +
                         " channels of " + shape_str(x.shape()));
  }
  if (mode == Mode::kTrain && x.shape()[0] < 2) {
    throw ConfigError("batch_norm: train mode needs a batch of at least 2, got " +
                      shape_str(x.shape()));
  }
  const std::size_t count = s.outer * s.inner;
  const Tensor<T>& xv = x.value();
  const auto index = [s](std::size_t o, std::size_t ch, std::size_t in) {
    return (o * s.extent + ch) * s.inner + in;
  };

  std::vector<T> inv_std(c);
  auto xhat = std::make_shared<Tensor<T>>(x.shape());
  for (std::size_t ch = 0; ch < c; ++ch) {
    double mu;
    double var;
    if (mode == Mode::kTrain) {
      double acc = 0.0;
      for (std::size_t o = 0; o < s.outer; ++o) {
        for (std::size_t in = 0; in < s.inner; ++in) acc += xv[index(o, ch, in)];
      }
      mu = acc / static_cast<double>(count);
      double sq = 0.0;
      for (std::size_t o = 0; o < s.outer; ++o) {
        for (std::size_t in = 0; in < s.inner; ++in) {
          const double d = xv[index(o, ch, in)] - mu;
          sq += d * d;
        }
      }
      var = sq / static_cast<double>(count);
      const double unbiased = count > 1 ? sq / static_cast<double>(count - 1) : var;
      stats.running_mean[ch] = static_cast<T>((1.0 - kBatchNormMomentum) * stats.running_mean[ch] +
                                              kBatchNormMomentum * mu);
      stats.running_var[ch] = static_cast<T>((1.0 - kBatchNormMomentum) * stats.running_var[ch] +
                                             kBatchNormMomentum * unbiased);
    } else {
      mu = stats.running_mean[ch];
      var = stats.running_var[ch];
    }
    const T istd = static_cast<T>(1.0 / std::sqrt(var + kBatchNormEps));
    const T mu_t = static_cast<T>(mu);
    inv_std[ch] = istd;
    for (std::size_t o = 0; o < s.outer; ++o) {
      for (std::size_t in = 0; in < s.inner; ++in) {
        const std::size_t i = index(o, ch, in);
        (*xhat)[i] = (xv[i] - mu_t) * istd;
      }
    }
  }

  Tensor<T> out(x.shape());
  const Tensor<T>& gv = gamma.value();
  const Tensor<T>& bv = beta.value();
  for (std::size_t o = 0; o < s.outer; ++o) {
    for (std::size_t ch = 0; ch < c; ++ch) {
      for (std::size_t in = 0; in < s.inner; ++in) {
        const std::size_t i = index(o, ch, in);
        out[i] = gv[ch] * (*xhat)[i] + bv[ch];
      }
    }
  }

  return x.tape().record(std::move(out), {x, gamma, beta},
                         [x, gamma, beta, s, count, mode, xhat, inv_std,
                          index](Tape<T>& t, const Tensor<T>& g) {
    const Tensor<T>& xh = *xhat;
    const std::size_t c = s.extent;
    std::vector<T> sum_g(c, T{0});
    std::vector<T> sum_gx(c, T{0});
    for (std::size_t o = 0; o < s.outer; ++o) {
      for (std::size_t ch = 0; ch < c; ++ch) {
        for (std::size_t in = 0; in < s.inner; ++in) {
          const std::size_t i = index(o, ch, in);
          sum_g[ch] += g[i];
          sum_gx[ch] += g[i] * xh[i];
        }
      }
    }
    if (t.requires_grad(gamma)) {
      Tensor<T>& gg = t.grad_buffer(gamma);
      for (std::size_t ch = 0; ch < c; ++ch) gg[ch] += sum_gx[ch];
    }
    if (t.requires_grad(beta)) {
      Tensor<T>& gb = t.grad_buffer(beta);
      for (std::size_t ch = 0; ch < c; ++ch) gb[ch] += sum_g[ch];
    }
    if (!t.requires_grad(x)) return;
    const Tensor<T>& gamma_v = t.value(gamma);
    Tensor<T>& gx = t.grad_buffer(x);
    const T n = static_cast<T>(count);
    for (std::size_t o = 0; o < s.outer; ++o) {
      for (std::size_t ch = 0; ch < c; ++ch) {
        const T k = gamma_v[ch] * inv_std[ch];
        for (std::size_t in = 0; in < s.inner; ++in) {
          const std::size_t i = index(o, ch, in);
          if (mode == Mode::kTrain) {
            gx[i] += k / n * (n * g[i] - sum_g[ch] - xh[i] * sum_gx[ch]);
          } else {
            gx[i] += k * g[i];
          }
        }
      }
    }
  });
}

template <typename T>
Var<T> dropout(Var<T> x, double p, Mode mode, Rng& rng) {
  if (!(p >= 0.0 && p < 1.0)) {
    throw ConfigError("dropout: rate must be in [0, 1), got " + std::to_string(p));
  }
  if (mode == Mode::kEval || p == 0.0) return x;
  const T keep_scale = static_cast<T>(1.0 / (1.0 - p));
  auto mask = std::make_shared<std::vector<T>>(x.value().size());
  Tensor<T> out = x.value();
  for (std::size_t i = 0; i < out.size(); ++i) {
    (*mask)[i] = rng.uniform() < p ? T{0} : keep_scale;
    out[i] *= (*mask)[i];
  }
  return x.tape().record(std::move(out), {x}, [x, mask](Tape<T>& t, const Tensor<T>& g) {
    Tensor<T>& gx = t.grad_buffer(x);
    for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i] * (*mask)[i];
  });
}

// ---------------------------------------------------------------------------
// Structural
// ---------------------------------------------------------------------------

template <typename T>
Var<T> stack(const std::vector<Var<T>>& xs, std::size_t axis) {
  if (xs.empty()) throw DimensionError("stack: no inputs");
  const Shape& base = xs.front().shape();
  if (axis > base.size()) throw DimensionError("stack: axis out of range for " + shape_str(base));
  for (const Var<T>& v : xs) {
    if (v.shape() != base) {
      throw DimensionError("stack: shape mismatch " + shape_str(base) + " vs " +
                           shape_str(v.shape()));
    }
  }
  std::size_t outer = 1;
  for (std::size_t i = 0; i < axis; ++i) outer *= base[i];
  const std::size_t inner = shape_numel(base) / outer;
  const std::size_t k = xs.size();
  Shape os = base;
  os.insert(os.begin() + static_cast<std::ptrdiff_t>(axis), k);
  Tensor<T> out(os);
  for (std::size_t o = 0; o < outer; ++o) {
    for (std::size_t j = 0; j < k; ++j) {
      const T* src = xs[j].value().data() + o * inner;
      std::copy(src, src + inner, out.data() + (o * k + j) * inner);
    }
  }
  return xs.front().tape().record(std::move(out), xs, [xs, outer, inner](Tape<T>& t,
                                                                          const Tensor<T>& g) {
    const std::size_t k = xs.size();
    for (std::size_t j = 0; j < k; ++j) {
      if (!t.requires_grad(xs[j])) continue;
      Tensor<T>& gj = t.grad_buffer(xs[j]);
      for (std::size_t o = 0; o < outer; ++o) {
        const T* src = g.data() + (o * k + j) * inner;
        for (std::size_t i = 0; i < inner; ++i) gj[o * inner + i] += src[i];
      }
    }
  });
}

template <typename T>
Var<T> broadcast_pairs(Var<T> x, PairIndex which) {
  const Shape& xs = x.shape();
  if (xs.size() < 2) throw DimensionError("broadcast_pairs: need [b, n, ...], got " + shape_str(xs));
  const std::size_t nb = xs[0], n = xs[1];
  const std::size_t inner = x.value().size() / (nb * n);
  Shape os = xs;
  os.insert(os.begin() + 2, n);
  Tensor<T> out(os);
  const T* xd = x.value().data();
  for (std::size_t b = 0; b < nb; ++b) {
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t j = 0; j < n; ++j) {
        const std::size_t src = b * n + (which == PairIndex::kRow ? i : j);
        std::copy(xd + src * inner, xd + (src + 1) * inner,
                  out.data() + ((b * n + i) * n + j) * inner);
      }
    }
  }
  return x.tape().record(std::move(out), {x}, [x, which, nb, n, inner](Tape<T>& t,
                                                                       const Tensor<T>& g) {
    Tensor<T>& gx = t.grad_buffer(x);
    for (std::size_t b = 0; b < nb; ++b) {
      for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = 0; j < n; ++j) {
          const std::size_t dst = b * n + (which == PairIndex::kRow ? i : j);
          const T* src = g.data() + ((b * n + i) * n + j) * inner;
          for (std::size_t e = 0; e < inner; ++e) gx[dst * inner + e] += src[e];
        }
      }
    }
  });
}

// ---------------------------------------------------------------------------
// Losses
// ---------------------------------------------------------------------------

template <typename T>
Var<T> loss_mse(Var<T> pred, Var<T> target) {
  require_same_shape("loss_mse", pred, target);
  const Tensor<T>& pv = pred.value();
  const Tensor<T>& tv = target.value();
  double acc = 0.0;
  for (std::size_t i = 0; i < pv.size(); ++i) {
    const double d = static_cast<double>(pv[i]) - static_cast<double>(tv[i]);
    acc += d * d;
  }
  const double n = static_cast<double>(pv.size());
  const double value = acc / n;
  if (!std::isfinite(value)) throw NumericError("loss_mse: non-finite loss");
  return pred.tape().record(Tensor<T>::scalar(static_cast<T>(value)), {pred, target},
                            [pred, target, n](Tape<T>& t, const Tensor<T>& g) {
    const Tensor<T>& pv = t.value(pred);
    const Tensor<T>& tv = t.value(target);
    const T k = static_cast<T>(2.0 / n) * g[0];
    if (t.requires_grad(pred)) {
      Tensor<T>& gp = t.grad_buffer(pred);
      for (std::size_t i = 0; i < pv.size(); ++i) gp[i] += k * (pv[i] - tv[i]);
    }
    if (t.requires_grad(target)) {
      Tensor<T>& gt = t.grad_buffer(target);
      for (std::size_t i = 0; i < pv.size(); ++i) gt[i] -= k * (pv[i] - tv[i]);
    }
  });
}

template <typename T>
Var<T> loss_ce(Var<T> logits, std::span<const std::size_t> labels) {
  const Shape& ls = logits.shape();
  if (ls.size() != 2 || ls[0] != labels.size()) {
    throw DimensionError("loss_ce: logits " + shape_str(ls) + " vs " +
                         std::to_string(labels.size()) + " labels");
  }
  const std::size_t nb = ls[0], nc = ls[1];
  for (std::size_t lbl : labels) {
    if (lbl >= nc) {
      throw InputError("loss_ce: label " + std::to_string(lbl) + " outside [0, " +
                       std::to_string(nc) + ")");
    }
  }
  const Tensor<T>& lv = logits.value();
  auto probs = std::make_shared<std::vector<double>>(nb * nc);
  double total = 0.0;
  for (std::size_t b = 0; b < nb; ++b) {
    const T* row = lv.data() + b * nc;
    double mx = row[0];
    for (std::size_t c = 1; c < nc; ++c) mx = std::max(mx, static_cast<double>(row[c]));
    double se = 0.0;
    for (std::size_t c = 0; c < nc; ++c) se += std::exp(static_cast<double>(row[c]) - mx);
    const double lse = mx + std::log(se);
    total += lse - static_cast<double>(row[labels[b]]);
    for (std::size_t c = 0; c < nc; ++c) {
      (*probs)[b * nc + c] = std::exp(static_cast<double>(row[c]) - lse);
    }
  }
  const double value = total / static_cast<double>(nb);
  if (!std::isfinite(value)) throw NumericError("loss_ce: non-finite loss");
  std::vector<std::size_t> lbls(labels.begin(), labels.end());
  return logits.tape().record(Tensor<T>::scalar(static_cast<T>(value)), {logits},
                              [logits, probs, lbls, nb, nc](Tape<T>& t, const Tensor<T>& g) {
    Tensor<T>& gl = t.grad_buffer(logits);
    const double k = static_cast<double>(g[0]) / static_cast<double>(nb);
    for (std::size_t b = 0; b < nb; ++b) {
      for (std::size_t c = 0; c < nc; ++c) {
        const double onehot = c == lbls[b] ? 1.0 : 0.0;
        gl[b * nc + c] += static_cast<T>(k * ((*probs)[b * nc + c] - onehot));
      }
    }
  });
}

// ---------------------------------------------------------------------------

#define ERGL_INSTANTIATE_OPS(T)                                                              \
  template Var<T> add(Var<T>, Var<T>);                                                       \
  template Var<T> sub(Var<T>, Var<T>);                                                       \
  template Var<T> mul(Var<T>, Var<T>);                                                       \
  template Var<T> div(Var<T>, Var<T>);                                                       \
  template Var<T> add_scalar(Var<T>, T);                                                     \
  template Var<T> scale(Var<T>, T);                                                          \
  template Var<T> sum(Var<T>);                                                               \
  template Var<T> mean(Var<T>);                                                              \
  template Var<T> sum_axis(Var<T>, std::size_t);                                             \
  template Var<T> mean_axis(Var<T>, std::size_t);                                            \
  template Var<T> reshape(Var<T>, Shape);                                                    \
  template Var<T> matmul(Var<T>, Var<T>);                                                    \
  template Var<T> batched_matmul(Var<T>, Var<T>, bool);                                      \
  template Var<T> linear(Var<T>, Var<T>, Var<T>);                                            \
  template Var<T> relu(Var<T>);                                                              \
  template Var<T> sigmoid(Var<T>);                                                           \
  template Var<T> activation(Var<T>, Activation);                                            \
  template Var<T> softmax(Var<T>, std::size_t);                                              \
  template Var<T> conv2d(Var<T>, Var<T>);                                                    \
  template Var<T> avg_pool2d(Var<T>);                                                        \
  template Var<T> batch_norm(Var<T>, Var<T>, Var<T>, BatchNormStats<T>&, Mode, std::size_t); \
  template Var<T> dropout(Var<T>, double, Mode, Rng&);                                       \
  template Var<T> stack(const std::vector<Var<T>>&, std::size_t);                            \
  template Var<T> broadcast_pairs(Var<T>, PairIndex);                                        \
  template Var<T> loss_mse(Var<T>, Var<T>);                                                  \
  template Var<T> loss_ce(Var<T>, std::span<const std::size_t>);

ERGL_INSTANTIATE_OPS(float)
ERGL_INSTANTIATE_OPS(double)

#undef ERGL_INSTANTIATE_OPS

}  // namespace ergl

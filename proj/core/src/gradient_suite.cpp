#include "ergl/gradient_suite.hpp"

#include <functional>

#include "ergl/model.hpp"
#include "ergl/ops.hpp"

namespace ergl {

namespace {


Tensor<double> random_tensor(Shape shape, Rng& rng, double lo = -1.0, double hi = 1.0) {
  Tensor<double> t(std::move(shape));
  for (double& v : t.values()) v = rng.uniform(lo, hi);
  return t;
}

// Reduces an op's output to a scalar with fixed random weights so every output
// element contributes a distinct gradient.
ShadowVar weighted_sum(ShadowTape& tape, ShadowVar y, std::uint64_t seed) {
  Rng rng(seed);
  return sum(mul(y, tape.constant(random_tensor(y.shape(), rng))));
}

class Suite {
 public:
  Suite(std::uint64_t seed, double step) : rng_(seed), step_(step) {}

  // Unary check: f(x) on a random input of `shape`.
  void unary(const std::string& name, Shape shape,
             std::function<ShadowVar(ShadowTape&, ShadowVar)> op, double lo = -1.0,
             double hi = 1.0) {
    const Tensor<double> x = random_tensor(std::move(shape), rng_, lo, hi);
    const std::uint64_t w = rng_.next();
    entries_.push_back({name, finite_diff_check(
                                  [&](ShadowTape& t, ShadowVar v) {
                                    return weighted_sum(t, op(t, v), w);
                                  },
                                  x, step_)});
  }

  // Checks both operands of a binary op, holding the other fixed.
  void binary(const std::string& name, Shape sa, Shape sb,
              std::function<ShadowVar(ShadowVar, ShadowVar)> op, double b_lo = -1.0,
              double b_hi = 1.0) {
    const Tensor<double> a = random_tensor(std::move(sa), rng_);
    const Tensor<double> b = random_tensor(std::move(sb), rng_, b_lo, b_hi);
    const std::uint64_t w = rng_.next();
    GradCheckReport ra = finite_diff_check(
        [&](ShadowTape& t, ShadowVar v) { return weighted_sum(t, op(v, t.constant(b)), w); }, a,
        step_);
    GradCheckReport rb = finite_diff_check(
        [&](ShadowTape& t, ShadowVar v) { return weighted_sum(t, op(t.constant(a), v), w); }, b,
        step_);
    entries_.push_back({name + " (lhs)", ra});
    entries_.push_back({name + " (rhs)", rb});
  }

  void params(const std::string& name, const LossFn& f, std::vector<NamedParam> ps,
              std::size_t per_param) {
    entries_.push_back({name, finite_diff_check_params(f, ps, step_, per_param, rng_)});
  }

  Rng& rng() { return rng_; }
  std::vector<GradSuiteEntry> take() { return std::move(entries_); }

 private:
  Rng rng_;
  double step_;
  std::vector<GradSuiteEntry> entries_;
};

std::vector<NamedParam> named(const ParamRegistry<double>& reg) {
  std::vector<NamedParam> out;
  for (const auto& e : reg.params()) out.push_back({e.name, e.param});
  return out;
}

}  // namespace

std::vector<GradSuiteEntry> run_gradient_suite(std::uint64_t seed, double step) {
  Suite s(seed, step);

  s.binary("add", {2, 3}, {2, 3}, [](ShadowVar a, ShadowVar b) { return add(a, b); });
  s.binary("sub", {2, 3}, {2, 3}, [](ShadowVar a, ShadowVar b) { return sub(a, b); });
  s.binary("mul", {2, 3}, {2, 3}, [](ShadowVar a, ShadowVar b) { return mul(a, b); });
  s.binary("div", {2, 3}, {2, 3}, [](ShadowVar a, ShadowVar b) { return div(a, b); }, 0.5, 1.5);
  s.unary("add_scalar", {5}, [](ShadowTape&, ShadowVar x) { return add_scalar(x, 0.7); });
  s.unary("scale", {5}, [](ShadowTape&, ShadowVar x) { return scale(x, -1.3); });
  s.unary("sum", {2, 3}, [](ShadowTape&, ShadowVar x) { return sum(x); });
  s.unary("mean", {2, 3}, [](ShadowTape&, ShadowVar x) { return mean(x); });
  s.unary("sum_axis", {2, 3, 4}, [](ShadowTape&, ShadowVar x) { return sum_axis(x, 1); });
  s.unary("mean_axis", {2, 3, 4}, [](ShadowTape&, ShadowVar x) { return mean_axis(x, 2); });
  s.unary("reshape", {2, 6}, [](ShadowTape&, ShadowVar x) { return reshape(x, Shape{3, 4}); });
  s.binary("matmul", {3, 4}, {4, 2}, [](ShadowVar a, ShadowVar b) { return matmul(a, b); });
  s.binary("batched_matmul", {2, 3, 4}, {2, 4, 5},
           [](ShadowVar a, ShadowVar b) { return batched_matmul(a, b); });
  s.binary("batched_matmul^T", {2, 3, 4}, {2, 5, 4},
           [](ShadowVar a, ShadowVar b) { return batched_matmul(a, b, true); });
  s.binary("linear", {2, 3, 4}, {4, 5}, [](ShadowVar a, ShadowVar b) { return linear(a, b); });
  {
    Rng& r = s.rng();
    const Tensor<double> w = random_tensor({4, 3}, r);
    s.unary("linear bias", {3}, [w](ShadowTape& t, ShadowVar bias) {
      Rng local(7);
      return linear(t.constant(random_tensor({2, 4}, local)), t.constant(w), bias);
    });
  }
  // Inputs kept away from the kink at zero.
  s.unary("relu", {12}, [](ShadowTape&, ShadowVar x) { return relu(x); }, 0.05, 1.0);
  s.unary("relu (negative side)", {12}, [](ShadowTape&, ShadowVar x) { return relu(x); }, -1.0, -0.05);
  s.unary("sigmoid", {12}, [](ShadowTape&, ShadowVar x) { return sigmoid(x); }, -4.0, 4.0);
  s.unary("softmax", {2, 3, 5}, [](ShadowTape&, ShadowVar x) { return softmax(x, 2); }, -3.0, 3.0);
  s.unary("softmax axis 1", {2, 4, 3}, [](ShadowTape&, ShadowVar x) { return softmax(x, 1); });
  s.binary("conv2d", {2, 2, 5, 4}, {3, 2, 3, 3},
           [](ShadowVar a, ShadowVar b) { return conv2d(a, b); });
  s.unary("avg_pool2d", {2, 2, 5, 6}, [](ShadowTape&, ShadowVar x) { return avg_pool2d(x); });
  s.unary("dropout", {4, 6}, [](ShadowTape&, ShadowVar x) {
    Rng mask(11);
    return dropout(x, 0.3, Mode::kTrain, mask);
  });
  s.unary("stack", {2, 3}, [](ShadowTape& t, ShadowVar x) {
    Rng local(5);
    return stack<double>({x, t.constant(random_tensor({2, 3}, local)), x}, 1);
  });
  s.unary("broadcast_pairs row", {2, 3, 2},
          [](ShadowTape&, ShadowVar x) { return broadcast_pairs(x, PairIndex::kRow); });
  s.unary("broadcast_pairs col", {2, 3, 2},
          [](ShadowTape&, ShadowVar x) { return broadcast_pairs(x, PairIndex::kCol); });
  s.unary("loss_mse", {3, 4}, [](ShadowTape& t, ShadowVar x) {
    Rng local(3);
    return loss_mse(x, t.constant(random_tensor({3, 4}, local, 0.0, 1.0)));
  });
  s.unary("loss_ce", {3, 4}, [](ShadowTape&, ShadowVar x) {
    const std::vector<std::size_t> labels{2, 0, 3};
    return loss_ce(x, std::span<const std::size_t>(labels));
  });

  // Batch norm: input, gamma and beta, train and eval, channel axis 1 and last.
  for (Mode mode : {Mode::kTrain, Mode::kEval}) {
    for (std::size_t axis : {std::size_t{1}, std::size_t{2}}) {
      const std::string tag = std::string("batch_norm ") + (mode == Mode::kTrain ? "train" : "eval") +
                              " axis " + std::to_string(axis);
      Rng& r = s.rng();
      const Tensor<double> gamma = random_tensor({3}, r, 0.5, 1.5);
      const Tensor<double> beta = random_tensor({3}, r);
      BatchNormStats<double> stats(3);
      stats.running_mean = random_tensor({3}, r);
      stats.running_var = random_tensor({3}, r, 0.5, 2.0);
      const Shape shape = axis == 1 ? Shape{4, 3, 2} : Shape{2, 2, 3};
      s.unary(tag + " (input)", shape, [=](ShadowTape& t, ShadowVar x) mutable {
        BatchNormStats<double> st = stats;
        return batch_norm(x, t.constant(gamma), t.constant(beta), st, mode, axis);
      });
      Tensor<double> x = random_tensor(shape, r);
      s.unary(tag + " (gamma)", {3}, [=](ShadowTape& t, ShadowVar g) mutable {
        BatchNormStats<double> st = stats;
        return batch_norm(t.constant(x), g, t.constant(beta), st, mode, axis);
      }, 0.5, 1.5);
      s.unary(tag + " (beta)", {3}, [=](ShadowTape& t, ShadowVar b) mutable {
        BatchNormStats<double> st = stats;
        return batch_norm(t.constant(x), t.constant(gamma), b, st, mode, axis);
      });
    }
  }

  // Components, checked with respect to all of their parameters.
  {
    Rng init(s.rng().next());
    mel::NodeContextAttention<double> ncm(8, init);
    const Tensor<double> nodes = random_tensor({2, 3, 8}, init);
    const std::uint64_t w = init.next();
    ParamRegistry<double> reg;
    ncm.collect("ncm", reg);
    s.params("NCM parameters", [&](ShadowTape& t) {
      return weighted_sum(t, ncm.forward(t, t.constant(nodes)).values, w);
    }, named(reg), 0);
    s.unary("NCM input", {2, 3, 8}, [&](ShadowTape& t, ShadowVar x) {
      return ncm.forward(t, x).values;
    });
  }
  {
    Rng init(s.rng().next());
    mel::NodePairAttention<double> nnm(4, 2, init);
    const Tensor<double> scene = random_tensor({2, 3, 8}, init);
    const std::uint64_t w = init.next();
    ParamRegistry<double> reg;
    nnm.collect("nnm", reg);
    s.params("NNM parameters", [&](ShadowTape& t) {
      return weighted_sum(t, nnm.build_edges(t, t.constant(scene)), w);
    }, named(reg), 0);
    s.unary("NNM input", {2, 3, 8}, [&](ShadowTape& t, ShadowVar x) {
      return nnm.build_edges(t, x);
    });
  }
  {
    Rng init(s.rng().next());
    graph::GatedGcnLayer<double> layer(4, init);
    const Tensor<double> h = random_tensor({2, 3, 4}, init);
    const Tensor<double> e = random_tensor({2, 3, 3, 4}, init);
    const std::uint64_t wh = init.next();
    const std::uint64_t we = init.next();
    ParamRegistry<double> reg;
    layer.collect("gcn", reg);
    s.params("GatedGCN layer parameters", [&](ShadowTape& t) {
      auto g = layer.forward(t, {t.constant(h), t.constant(e)}, Mode::kTrain);
      return add(weighted_sum(t, g.nodes, wh), weighted_sum(t, g.edges, we));
    }, named(reg), 0);
  }

  // The full training loss.
  {
    ModelConfig cfg;
    cfg.backbone = encoder::test_backbone();
    cfg.num_events = 3;
    cfg.num_scenes = 3;
    cfg.gcn_layers = 2;
    ErglModel<float> base(cfg, s.rng().next());
    ErglModel<double> model = cast_model<double>(base);
    Rng data(s.rng().next());
    const Tensor<double> spec = random_tensor({2, 8, 8}, data, -3.0, 3.0);
    const Tensor<double> events = random_tensor({2, 3}, data, 0.0, 1.0);
    const std::vector<std::size_t> scenes{1, 2};
    const std::uint64_t dropout_seed = data.next();
    auto loss = [&](ShadowTape& t, ShadowVar x) {
      Rng drop(dropout_seed);
      auto out = model.forward(t, x, Mode::kTrain, drop);
      return graph::total_loss(out.logits, std::span<const std::size_t>(scenes),
                               out.nodes.probabilities, t.constant(events));
    };
    s.params("full loss (parameters)",
             [&](ShadowTape& t) { return loss(t, t.constant(spec)); }, named(model.registry()), 6);
    s.unary("full loss (spectrogram)", {2, 8, 8}, loss, -3.0, 3.0);
  }
  return s.take();
}

}  // namespace ergl

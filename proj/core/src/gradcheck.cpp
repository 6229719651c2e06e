#include "ergl/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "ergl/errors.hpp"

namespace ergl {

double relative_error(double analytic, double numeric, double floor) {
  const double denom = std::max({std::abs(analytic), std::abs(numeric), floor});
  return std::abs(analytic - numeric) / denom;
}

namespace {

void note(GradCheckReport& r, double err, std::size_t index, const std::string& name) {
  ++r.checked;
  if (err > r.max_rel_error || std::isnan(err)) {
    r.max_rel_error = std::isnan(err) ? INFINITY : err;
    r.worst_index = index;
    r.worst_name = name;
  }
}

}  // namespace

GradCheckReport finite_diff_check(const InputFn& f, const Tensor<double>& x, double step) {
  Tensor<double> analytic;
  {
    ShadowTape tape;
    ShadowVar in = tape.leaf(x);
    ShadowVar loss = f(tape, in);
    tape.backward(loss);
    analytic = tape.grad(in).empty() ? Tensor<double>(x.shape()) : tape.grad(in);
  }
  const auto eval = [&f](const Tensor<double>& at) {
    ShadowTape tape(false);
    return f(tape, tape.constant(at)).value().item();
  };
  GradCheckReport report;
  Tensor<double> probe = x;
  for (std::size_t i = 0; i < x.size(); ++i) {
    probe[i] = x[i] + step;
    const double up = eval(probe);
    probe[i] = x[i] - step;
    const double down = eval(probe);
    probe[i] = x[i];
    note(report, relative_error(analytic[i], (up - down) / (2.0 * step)), i, "input");
  }
  return report;
}

GradCheckReport finite_diff_check_params(const LossFn& f, const std::vector<NamedParam>& params,
                                         double step, std::size_t per_param, Rng& rng) {
  for (const NamedParam& p : params) p.param->zero_grad();
  {
    ShadowTape tape;
    ShadowVar loss = f(tape);
    tape.backward(loss);
  }
  const auto eval = [&f] {
    ShadowTape tape(false);
    return f(tape).value().item();
  };
  GradCheckReport report;
  for (const NamedParam& p : params) {
    Tensor<double>& value = p.param->value;
    const Tensor<double> analytic = p.param->has_grad() ? p.param->grad : Tensor<double>(value.shape());
    std::vector<std::size_t> indices(value.size());
    std::iota(indices.begin(), indices.end(), std::size_t{0});
    if (per_param != 0 && per_param < indices.size()) {
      rng.shuffle(indices);
      indices.resize(per_param);
      std::sort(indices.begin(), indices.end());
    }
    for (std::size_t i : indices) {
      const double orig = value[i];
      value[i] = orig + step;
      const double up = eval();
      value[i] = orig - step;
      const double down = eval();
      value[i] = orig;
      note(report, relative_error(analytic[i], (up - down) / (2.0 * step)), i, p.name);
    }
  }
  for (const NamedParam& p : params) p.param->zero_grad();
  return report;
}

}  // namespace ergl

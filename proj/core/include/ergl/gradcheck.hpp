#pragma once

#include <cstddef>
#include <functional>
#include <string>
#include <vector>

#include "ergl/autograd.hpp"
#include "ergl/random.hpp"

namespace ergl {

// Gradient checks always run in double precision ("shadow" copies of float
// models are built with copy_state).
using ShadowTape = Tape<double>;
using ShadowVar = Var<double>;

struct GradCheckReport {
  double max_rel_error = 0.0;
  std::size_t worst_index = 0;
  std::string worst_name;  // parameter name for parameter checks
  std::size_t checked = 0;
};

// Entries with |grad| below this are compared in absolute terms.
inline constexpr double kGradCheckFloor = 1e-3;

// |a - n| / max(|a|, |n|, floor)
double relative_error(double analytic, double numeric, double floor = kGradCheckFloor);

// Maps an input on a fresh tape to a scalar. Must be deterministic.
using InputFn = std::function<ShadowVar(ShadowTape&, ShadowVar)>;
// Builds a scalar from parameters entered on a fresh tape. Must be deterministic.
using LossFn = std::function<ShadowVar(ShadowTape&)>;

// Compares the tape gradient of f at x with central differences, elementwise.
GradCheckReport finite_diff_check(const InputFn& f, const Tensor<double>& x, double step = 1e-3);

struct NamedParam {
  std::string name;
  Parameter<double>* param;
};

// Same comparison against parameters; at most `per_param` randomly chosen
// entries of each parameter are perturbed (0 = all entries).
GradCheckReport finite_diff_check_params(const LossFn& f, const std::vector<NamedParam>& params,
                                         double step, std::size_t per_param, Rng& rng);

}  // namespace ergl

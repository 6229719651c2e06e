#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "ergl/gradcheck.hpp"

namespace ergl {

inline constexpr double kGradSuiteTolerance = 1e-4;
// Central-difference step. At 1e-3 perturbations of shared biases and kernels
// cross ReLU kinks in the composed model, and batch norm over tiny batches
// leaves O(h^2) error above the tolerance; at 1e-6 rounding stays near 1e-10.
inline constexpr double kGradSuiteStep = 1e-6;

struct GradSuiteEntry {
  std::string name;
  GradCheckReport report;

  bool passed() const { return report.max_rel_error < kGradSuiteTolerance; }
};

// Finite-difference checks of every differentiable primitive, each model
// component, and the full training loss of a small model (1-block backbone,
// 3 events, 2 GCN layers, 8x8 spectrograms), all in double precision.
std::vector<GradSuiteEntry> run_gradient_suite(std::uint64_t seed,
                                               double step = kGradSuiteStep);

}  // namespace ergl

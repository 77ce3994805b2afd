#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "rtknet/losses.hpp"
#include "rtknet/tensor.hpp"

namespace rtknet {

struct GradCheckResult {
  double max_rel_error = 0.0;  // max |analytic - numeric| / max(|analytic|_inf, |numeric|_inf)
  double max_abs_error = 0.0;
  std::size_t worst_index = 0;
};

using LossFn = std::function<LossGrad(const TensorD&)>;

// Central differences (f(x + h e_i) - f(x - h e_i)) / 2h on every coordinate
// against the analytic gradient returned by fn at x.
GradCheckResult finite_diff_check(const LossFn& fn, const TensorD& input, double h = 1e-3);

struct GradSuiteResult {
  std::string loss;
  std::size_t instances = 0;
  double worst_rel_error = 0.0;
  double tolerance = 0.0;
  bool passed() const { return worst_rel_error <= tolerance; }
};

inline constexpr double kGradTolerance = 1e-4;
inline constexpr double kInstanceGradTolerance = 1e-3;

// Random instances of the dice, bce, focal, rank and instance losses, each
// checked against central differences.
std::vector<GradSuiteResult> run_gradient_suites(std::size_t instances, std::uint64_t seed);

}  // namespace rtknet

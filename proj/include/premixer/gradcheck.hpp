#pragma once

#include <functional>
#include <span>
#include <string>
#include <vector>

#include "premixer/tensor.hpp"

namespace premixer {

struct GradCheckResult {
  double max_rel_error = 0.0;
  std::size_t worst_input = 0;
  std::size_t worst_index = 0;
  double worst_analytic = 0.0;
  double worst_numeric = 0.0;
  std::size_t checked = 0;
};

/// |a - n| / max(|a|, |n|, floor). The floor keeps entries whose true
/// gradient is ~0 from dominating with pure finite-difference noise.
double relative_error(double analytic, double numeric, double floor);

/// Compares `analytic[k]` against central differences (f(x+ε) - f(x-ε)) / 2ε
/// of `loss` taken elementwise over `inputs[k]`. Inputs are perturbed in
/// place and restored bit-exactly. `loss` must be deterministic. With
/// `max_per_input` > 0, larger inputs are probed on an evenly spaced subset
/// of that many entries.
GradCheckResult grad_check(const std::function<double()>& loss, std::span<Tensor* const> inputs,
                           std::span<const Tensor> analytic, double eps = 1e-4, double floor = 1e-6,
                           std::size_t max_per_input = 0);

}  // namespace premixer

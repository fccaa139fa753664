#include "premixer/gradcheck.hpp"

#include <algorithm>
#include <cmath>

#include "premixer/error.hpp"

namespace premixer {

double relative_error(double analytic, double numeric, double floor) {
  const double denom = std::max({std::abs(analytic), std::abs(numeric), floor});
  return std::abs(analytic - numeric) / denom;
}

GradCheckResult grad_check(const std::function<double()>& loss, std::span<Tensor* const> inputs,
                           std::span<const Tensor> analytic, double eps, double floor, std::size_t max_per_input) {
  if (inputs.size() != analytic.size()) throw ShapeError("grad_check: one analytic gradient per input required");
  GradCheckResult result;
  for (std::size_t k = 0; k < inputs.size(); ++k) {
    Tensor& x = *inputs[k];
    require_same_shape(x, analytic[k], "grad_check");
    const std::size_t probes = (max_per_input > 0 && x.size() > max_per_input) ? max_per_input : x.size();
    for (std::size_t j = 0; j < probes; ++j) {
      const std::size_t i = probes == x.size() ? j : j * x.size() / probes;
      const double saved = x[i];
      x[i] = saved + eps;
      const double fp = loss();
      x[i] = saved - eps;
      const double fm = loss();
      x[i] = saved;
      const double numeric = (fp - fm) / (2.0 * eps);
      const double err = relative_error(analytic[k][i], numeric, floor);
      ++result.checked;
      if (err > result.max_rel_error || std::isnan(err)) {
        result.max_rel_error = std::isnan(err) ? INFINITY : err;
        result.worst_input = k;
        result.worst_index = i;
        result.worst_analytic = analytic[k][i];
        result.worst_numeric = numeric;
      }
    }
  }
  return result;
}

}  // namespace premixer

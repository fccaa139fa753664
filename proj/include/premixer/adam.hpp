#pragma once

#include <vector>

#include "premixer/ops.hpp"

namespace premixer {

struct AdamConfig {
  double lr = 0.005;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

struct AdamState {
  Tensor m;
  Tensor v;
  long step = 0;
  AdamConfig config;

  AdamState() = default;
  AdamState(const Shape& shape, AdamConfig cfg) : m(shape), v(shape), config(cfg) {}
};

/// One bias-corrected Adam update of `param` from its accumulated gradient.
/// Throws NumericError naming the parameter if the gradient is not finite.
void adam_step(Parameter& param, AdamState& state);

/// Adam over a fixed parameter list; the list order fixes the update order.
class Adam {
 public:
  Adam() = default;
  Adam(std::vector<Parameter*> params, AdamConfig config);

  void zero_grad();
  void step();

  long step_count() const { return step_; }
  const std::vector<Parameter*>& parameters() const { return params_; }
  std::vector<AdamState>& states() { return states_; }
  const std::vector<AdamState>& states() const { return states_; }

  /// Restores moments and the step counter (e.g. when resuming a run).
  void restore(std::vector<AdamState> states, long step);

 private:
  std::vector<Parameter*> params_;
  std::vector<AdamState> states_;
  AdamConfig config_;
  long step_ = 0;
};

}  // namespace premixer

#include "premixer/adam.hpp"

#include <cmath>

#include "premixer/error.hpp"

namespace premixer {

void adam_step(Parameter& param, AdamState& state) {
  if (state.m.shape() != param.value.shape() || state.v.shape() != param.value.shape())
    throw ShapeError("adam: moment shape does not match parameter " + param.name);
  if (!param.grad.all_finite()) throw NumericError("adam: non-finite gradient in parameter " + param.name);
  const AdamConfig& c = state.config;
  state.step += 1;
  const double t = static_cast<double>(state.step);
  const double bc1 = 1.0 - std::pow(c.beta1, t);
  const double bc2 = 1.0 - std::pow(c.beta2, t);
  double* w = param.value.ptr();
  const double* g = param.grad.ptr();
  double* m = state.m.ptr();
  double* v = state.v.ptr();
  for (std::size_t i = 0; i < param.value.size(); ++i) {
    m[i] = c.beta1 * m[i] + (1.0 - c.beta1) * g[i];
    v[i] = c.beta2 * v[i] + (1.0 - c.beta2) * g[i] * g[i];
    const double mhat = m[i] / bc1;
    const double vhat = v[i] / bc2;
    w[i] -= c.lr * mhat / (std::sqrt(vhat) + c.eps);
  }
}

Adam::Adam(std::vector<Parameter*> params, AdamConfig config) : params_(std::move(params)), config_(config) {
  states_.reserve(params_.size());
  for (Parameter* p : params_) states_.emplace_back(p->value.shape(), config_);
}

void Adam::zero_grad() {
  for (Parameter* p : params_) p->zero_grad();
}

void Adam::step() {
  for (std::size_t i = 0; i < params_.size(); ++i) adam_step(*params_[i], states_[i]);
  ++step_;
}

void Adam::restore(std::vector<AdamState> states, long step) {
  if (states.size() != params_.size()) throw CheckpointError("adam: optimizer state count mismatch");
  for (std::size_t i = 0; i < states.size(); ++i) {
    if (states[i].m.shape() != params_[i]->value.shape())
      throw CheckpointError("adam: moment shape mismatch for " + params_[i]->name);
    states[i].config = config_;
  }
  states_ = std::move(states);
  step_ = step;
}

}  // namespace premixer

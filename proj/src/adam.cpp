#include "man/adam.hpp"

#include <cmath>
#include <string>

#include "man/errors.hpp"

namespace man {

AdamState AdamState::for_size(std::size_t n, const AdamConfig& cfg) {
  AdamState s;
  s.m.assign(n, 0.0);
  s.v.assign(n, 0.0);
  s.beta1 = cfg.beta1;
  s.beta2 = cfg.beta2;
  s.epsilon = cfg.epsilon;
  s.learning_rate = cfg.learning_rate;
  return s;
}

void adam_step(std::span<double> param, std::span<const double> grad, AdamState& state) {
  if (param.size() != state.m.size() || param.size() != state.v.size() ||
      (!grad.empty() && grad.size() != param.size())) {
    throw DimensionError("adam_step: parameter of " + std::to_string(param.size()) +
                         " values, gradient of " + std::to_string(grad.size()) +
                         ", moments of " + std::to_string(state.m.size()));
  }
  state.step_count += 1;
  const double t = static_cast<double>(state.step_count);
  const double c1 = 1.0 - std::pow(state.beta1, t);
  const double c2 = 1.0 - std::pow(state.beta2, t);
  for (std::size_t i = 0; i < param.size(); ++i) {
    const double g = grad.empty() ? 0.0 : grad[i];
    state.m[i] = state.beta1 * state.m[i] + (1.0 - state.beta1) * g;
    state.v[i] = state.beta2 * state.v[i] + (1.0 - state.beta2) * g * g;
    const double m_hat = state.m[i] / c1;
    const double v_hat = state.v[i] / c2;
    param[i] -= state.learning_rate * m_hat / (std::sqrt(v_hat) + state.epsilon);
  }
}

Adam::Adam(std::vector<Tensor> params, AdamConfig cfg) : params_(std::move(params)) {
  states_.reserve(params_.size());
  for (const auto& p : params_) states_.push_back(AdamState::for_size(p.numel(), cfg));
}

void Adam::step() {
  for (std::size_t i = 0; i < params_.size(); ++i) {
    adam_step(params_[i].mutable_data(), params_[i].grad(), states_[i]);
  }
}

void Adam::zero_grad() {
  for (auto& p : params_) p.zero_grad();
}

}  // namespace man

#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "man/tensor.hpp"

namespace man {

struct AdamConfig {
  double learning_rate = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

// Moment estimates for one parameter tensor.
struct AdamState {
  std::uint64_t step_count = 0;
  std::vector<double> m;
  std::vector<double> v;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  double learning_rate = 1e-4;

  static AdamState for_size(std::size_t n, const AdamConfig& cfg);
};

// One bias-corrected Adam update of `param` in place.
void adam_step(std::span<double> param, std::span<const double> grad, AdamState& state);

// Adam over a fixed group of parameters. Parameters without a gradient slot
// are updated as if their gradient were zero.
class Adam {
 public:
  Adam(std::vector<Tensor> params, AdamConfig cfg);

  void step();
  void zero_grad();

  const std::vector<Tensor>& params() const { return params_; }
  const std::vector<AdamState>& states() const { return states_; }

 private:
  std::vector<Tensor> params_;
  std::vector<AdamState> states_;
};

}  // namespace man

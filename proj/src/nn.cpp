#include "man/nn.hpp"

#include <cmath>

namespace man {

Tensor glorot_uniform(Shape shape, std::size_t fan_in, std::size_t fan_out, Rng& rng) {
  const double limit = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
  std::vector<double> values(shape_numel(shape));
  for (double& v : values) v = rng.uniform(-limit, limit);
  return Tensor(std::move(shape), std::move(values), true);
}

Linear::Linear(std::size_t in, std::size_t out, Rng& rng)
    : weight(glorot_uniform({in, out}, in, out, rng)), bias(Tensor::zeros({out}, true)) {}

Tensor Linear::forward(Tape& tape, const Tensor& x) const {
  return ops::add_bias(tape, ops::matmul(tape, x, weight), bias);
}

void Linear::collect(const std::string& prefix, std::vector<NamedTensor>& out) const {
  out.push_back({prefix + ".weight", weight});
  out.push_back({prefix + ".bias", bias});
}

BatchNorm1d::BatchNorm1d(std::size_t width)
    : gamma(Tensor::full({width}, 1.0, true)),
      beta(Tensor::zeros({width}, true)),
      stats(BatchNormStats::fresh(width)) {}

Tensor BatchNorm1d::forward(const Pass& pass, const Tensor& x, bool update_running) {
  return ops::batch_norm(pass.tape, x, gamma, beta, stats, pass.mode, update_running);
}

void BatchNorm1d::collect(const std::string& prefix, std::vector<NamedTensor>& out) const {
  out.push_back({prefix + ".gamma", gamma});
  out.push_back({prefix + ".beta", beta});
}

void BatchNorm1d::collect_buffers(const std::string& prefix,
                                  std::vector<NamedTensor>& out) const {
  out.push_back({prefix + ".running_mean", stats.running_mean});
  out.push_back({prefix + ".running_var", stats.running_var});
}

RequiresGradGuard::RequiresGradGuard(std::vector<Tensor> params, bool requires_grad)
    : params_(std::move(params)) {
  previous_.reserve(params_.size());
  for (auto& p : params_) {
    previous_.push_back(p.requires_grad());
    p.set_requires_grad(requires_grad);
  }
}

RequiresGradGuard::~RequiresGradGuard() {
  for (std::size_t i = 0; i < params_.size(); ++i) params_[i].set_requires_grad(previous_[i]);
}

}  // namespace man

#pragma once

#include <cstddef>
#include <string>
#include <vector>

#include "man/ops.hpp"
#include "man/rng.hpp"
#include "man/tensor.hpp"

namespace man {

// A tensor with its checkpoint key.
struct NamedTensor {
  std::string name;
  Tensor tensor;
};

// Uniform in +-sqrt(6 / (fan_in + fan_out)); deterministic given the stream.
Tensor glorot_uniform(Shape shape, std::size_t fan_in, std::size_t fan_out, Rng& rng);

// Everything a layer's forward pass needs besides its input.
struct Pass {
  Tape& tape;
  Mode mode = Mode::kTrain;
  Rng* rng = nullptr;  // dropout stream; unused in eval mode
};

// Affine map x . W + b with W stored as [in x out].
struct Linear {
  Tensor weight;
  Tensor bias;

  Linear() = default;
  Linear(std::size_t in, std::size_t out, Rng& rng);

  std::size_t in_features() const { return weight.dim(0); }
  std::size_t out_features() const { return weight.dim(1); }
  Tensor forward(Tape& tape, const Tensor& x) const;
  void collect(const std::string& prefix, std::vector<NamedTensor>& out) const;
};

struct BatchNorm1d {
  Tensor gamma;
  Tensor beta;
  BatchNormStats stats;

  BatchNorm1d() = default;
  explicit BatchNorm1d(std::size_t width);

  Tensor forward(const Pass& pass, const Tensor& x, bool update_running = true);
  // Learnable parameters only.
  void collect(const std::string& prefix, std::vector<NamedTensor>& out) const;
  // Running statistics, which are state but not parameters.
  void collect_buffers(const std::string& prefix, std::vector<NamedTensor>& out) const;
};

// Sets requires_grad on a group of parameters for the lifetime of the guard,
// then restores the previous flags.
class RequiresGradGuard {
 public:
  RequiresGradGuard(std::vector<Tensor> params, bool requires_grad);
  ~RequiresGradGuard();
  RequiresGradGuard(const RequiresGradGuard&) = delete;
  RequiresGradGuard& operator=(const RequiresGradGuard&) = delete;

 private:
  std::vector<Tensor> params_;
  std::vector<bool> previous_;
};

}  // namespace man

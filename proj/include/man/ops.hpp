#pragma once

#include <cstddef>
#include <cstdint>
#include <span>

#include "man/rng.hpp"
#include "man/tape.hpp"
#include "man/tensor.hpp"

namespace man {

enum class Mode { kTrain, kEval };

// Running statistics of one batch-norm layer. Not trained by any optimizer.
struct BatchNormStats {
  Tensor running_mean;
  Tensor running_var;
  double momentum = 0.1;
  double epsilon = 1e-8;

  static BatchNormStats fresh(std::size_t width);
};

}  // namespace man

// Differentiable tensor primitives. Every op takes the tape to record on;
// inputs that are neither tape nodes nor requires_grad leaves are constants.
namespace man::ops {

// [m x k] . [k x n] -> [m x n]
Tensor matmul(Tape& tape, const Tensor& a, const Tensor& b);
// Adds a [n] bias to every row of an [m x n] matrix.
Tensor add_bias(Tape& tape, const Tensor& x, const Tensor& bias);

Tensor add(Tape& tape, const Tensor& a, const Tensor& b);
Tensor sub(Tape& tape, const Tensor& a, const Tensor& b);
Tensor mul(Tape& tape, const Tensor& a, const Tensor& b);
Tensor scale(Tape& tape, const Tensor& x, double factor);
Tensor square(Tape& tape, const Tensor& x);
// Sum of all elements, as a scalar.
Tensor sum(Tape& tape, const Tensor& x);
Tensor mean(Tape& tape, const Tensor& x);

// max(0, x); the subgradient at 0 is 0.
Tensor relu(Tape& tape, const Tensor& x);
// Softmax along the last axis, stabilized by subtracting the row maximum.
Tensor softmax(Tape& tape, const Tensor& x);

// Batch mean of -log(max(probs[b, target_b], floor)) over a [B x C] matrix.
Tensor nll(Tape& tape, const Tensor& probs, std::span<const std::size_t> targets,
           double floor = 1e-12);

// [m x p] ++ [m x q] -> [m x (p + q)]
Tensor concat_cols(Tape& tape, const Tensor& a, const Tensor& b);
// n tensors of equal numel -> [n x numel]
Tensor stack_rows(Tape& tape, std::span<const Tensor> rows);
// [m_1 x d], ..., [m_n x d] -> [(m_1 + ... + m_n) x d]
Tensor concat_rows(Tape& tape, std::span<const Tensor> parts);
// Rows [begin, end) of a [m x d] matrix.
Tensor slice_rows(Tape& tape, const Tensor& x, std::size_t begin, std::size_t end);

// Batch normalization over the rows of a [B x d] matrix followed by the
// learnable affine map gamma * xhat + beta. Train mode uses batch statistics
// (needs B >= 2) and, when update_running is set, folds them into `stats`;
// eval mode normalizes with the running statistics.
Tensor batch_norm(Tape& tape, const Tensor& x, const Tensor& gamma, const Tensor& beta,
                  BatchNormStats& stats, Mode mode, bool update_running = true);

// Inverted dropout: train mode zeroes each element with probability p and
// scales survivors by 1/(1-p); eval mode (or p == 0) is the identity.
Tensor dropout(Tape& tape, const Tensor& x, double p, Mode mode, Rng* rng);

// Gathers rows of a [V x E] table. The result has at least min_rows rows;
// missing rows are zero padding (constants).
Tensor embedding(Tape& tape, const Tensor& table, std::span<const std::int32_t> ids,
                 std::size_t min_rows = 1);

// Text-CNN feature map: for each kernel bank of shape [w x E x K] slide a
// width-w window over the [L x E] token matrix, add the bias, apply ReLU and
// max-pool over time. Outputs the concatenation of all banks as a vector.
Tensor conv1d_maxpool(Tape& tape, const Tensor& tokens, std::span<const Tensor> kernels,
                      std::span<const Tensor> biases);

}  // namespace man::ops

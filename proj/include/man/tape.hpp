#pragma once

#include <cstdint>
#include <functional>
#include <initializer_list>
#include <memory>
#include <optional>
#include <span>
#include <vector>

#include "man/tensor.hpp"

namespace man {

enum class OpKind {
  kMatmul,
  kAddBias,
  kAdd,
  kSub,
  kMul,
  kScale,
  kSquare,
  kSum,
  kRelu,
  kSoftmax,
  kNll,
  kConcatCols,
  kStackRows,
  kConcatRows,
  kSliceRows,
  kBatchNorm,
  kDropout,
  kEmbedding,
  kConv1dMaxPool,
};

const char* op_name(OpKind kind);

// Reverse-mode recording of the ops applied during one forward pass.
//
// Nodes are appended in execution order, so every node's inputs precede it.
// backward() walks the nodes once in reverse order and accumulates (+=) into
// the gradient slot of every requires_grad leaf it reaches. Intermediate
// gradients live only for the duration of one backward call, which makes
// several backward calls on the same tape (one per loss term) add up.
//
// A frozen tape records nothing: ops still compute values but the results
// carry no node, and backward() refuses to run.
class Tape {
 public:
  // Receives d(loss)/d(output) and adds d(loss)/d(input_i) into grad_in[i].
  // grad_in[i] is empty for inputs that need no gradient.
  using BackwardFn = std::function<void(std::span<const double> grad_out,
                                        std::span<const std::span<double>> grad_in)>;

  Tape();
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;
  Tape(Tape&&) = default;
  Tape& operator=(Tape&&) = default;

  bool frozen() const { return frozen_; }
  void freeze() { frozen_ = true; }
  std::size_t size() const { return nodes_.size(); }
  std::uint64_t id() const { return id_; }
  OpKind kind(std::size_t index) const { return nodes_.at(index).kind; }

  // True when gradients could flow from `t` back to some parameter through
  // this tape (a node of this tape, or a requires_grad leaf).
  bool tracks(const Tensor& t) const;

  // Attaches `output` to a new node when any input is tracked and the tape is
  // not frozen; otherwise returns `output` untouched.
  Tensor record(OpKind kind, std::initializer_list<Tensor> inputs, Tensor output,
                BackwardFn backward);
  Tensor record(OpKind kind, std::span<const Tensor> inputs, Tensor output,
                BackwardFn backward);

  // Seeds d(loss)/d(loss) = 1 and back-propagates.
  void backward(const Tensor& loss);

 private:
  struct Input {
    std::shared_ptr<TensorImpl> impl;
    std::optional<std::size_t> node;  // set when produced on this tape
  };
  struct Node {
    OpKind kind;
    std::vector<Input> inputs;
    BackwardFn backward;
    std::size_t size = 0;
  };

  std::uint64_t id_;
  bool frozen_ = false;
  std::vector<Node> nodes_;
};

}  // namespace man

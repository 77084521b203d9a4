#include "man/tape.hpp"

#include <atomic>

#include "man/errors.hpp"

namespace man {

namespace {
std::atomic<std::uint64_t> next_tape_id{1};
}  // namespace

const char* op_name(OpKind kind) {
  switch (kind) {
    case OpKind::kMatmul: return "matmul";
    case OpKind::kAddBias: return "add_bias";
    case OpKind::kAdd: return "add";
    case OpKind::kSub: return "sub";
    case OpKind::kMul: return "mul";
    case OpKind::kScale: return "scale";
    case OpKind::kSquare: return "square";
    case OpKind::kSum: return "sum";
    case OpKind::kRelu: return "relu";
    case OpKind::kSoftmax: return "softmax";
    case OpKind::kNll: return "nll";
    case OpKind::kConcatCols: return "concat_cols";
    case OpKind::kStackRows: return "stack_rows";
    case OpKind::kConcatRows: return "concat_rows";
    case OpKind::kSliceRows: return "slice_rows";
    case OpKind::kBatchNorm: return "batch_norm";
    case OpKind::kDropout: return "dropout";
    case OpKind::kEmbedding: return "embedding";
    case OpKind::kConv1dMaxPool: return "conv1d_maxpool";
  }
  return "?";
}

Tape::Tape() : id_(next_tape_id.fetch_add(1)) {}

bool Tape::tracks(const Tensor& t) const {
  if (!t.defined()) return false;
  const auto& impl = *t.impl();
  if (impl.node && impl.node->tape_id == id_) return true;
  return impl.requires_grad;
}

Tensor Tape::record(OpKind kind, std::initializer_list<Tensor> inputs, Tensor output,
                    BackwardFn backward) {
  return record(kind, std::span<const Tensor>(inputs.begin(), inputs.size()),
                std::move(output), std::move(backward));
}

Tensor Tape::record(OpKind kind, std::span<const Tensor> inputs, Tensor output,
                    BackwardFn backward) {
  if (frozen_) return output;
  bool any = false;
  for (const auto& in : inputs) any = any || tracks(in);
  if (!any) return output;

  Node node{kind, {}, std::move(backward), output.numel()};
  node.inputs.reserve(inputs.size());
  for (const auto& in : inputs) {
    Input slot{in.impl(), std::nullopt};
    if (in.defined() && in.impl()->node && in.impl()->node->tape_id == id_) {
      slot.node = in.impl()->node->index;
    }
    node.inputs.push_back(std::move(slot));
  }
  output.impl_->node = TapeRef{id_, nodes_.size()};
  output.impl_->requires_grad = true;
  nodes_.push_back(std::move(node));
  return output;
}

void Tape::backward(const Tensor& loss) {
  if (frozen_) throw StateError("backward on a frozen tape");
  if (loss.numel() != 1) {
    throw DimensionError("backward needs a scalar loss, got shape " +
                         shape_to_string(loss.shape()));
  }
  const auto& ref = loss.node();
  if (!ref || ref->tape_id != id_) {
    throw StateError("loss was not produced by this tape");
  }

  std::vector<std::vector<double>> grads(nodes_.size());
  grads[ref->index].assign(1, 1.0);

  std::vector<std::span<double>> grad_in;
  for (std::size_t i = ref->index + 1; i-- > 0;) {
    if (grads[i].empty()) continue;  // not an ancestor of the loss
    Node& node = nodes_[i];
    grad_in.assign(node.inputs.size(), {});
    for (std::size_t j = 0; j < node.inputs.size(); ++j) {
      const Input& in = node.inputs[j];
      if (!in.impl) continue;
      if (in.node) {
        auto& g = grads[*in.node];
        if (g.empty()) g.assign(in.impl->data.size(), 0.0);
        grad_in[j] = g;
      } else if (in.impl->requires_grad) {
        if (in.impl->grad.empty()) in.impl->grad.assign(in.impl->data.size(), 0.0);
        grad_in[j] = in.impl->grad;
      }
    }
    node.backward(grads[i], grad_in);
    std::vector<double>().swap(grads[i]);
  }
}

}  // namespace man

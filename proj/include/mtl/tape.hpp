#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "mtl/params.hpp"
#include "mtl/tensor.hpp"

namespace mtl::ad {

enum class Activation { tanh, relu, identity };
enum class LossKind { mse, mae, cross_entropy };

Activation activation_from_string(const std::string& s);
std::string to_string(Activation a);
LossKind loss_kind_from_string(const std::string& s);
std::string to_string(LossKind k);

// Numerically stabilized row-wise softmax (max subtraction). logits: [n,K].
Tensor softmax(const Tensor& logits);

// Handle to a node on a Tape.
struct Value {
  int32_t idx = -1;
  bool valid() const { return idx >= 0; }
};

// Reverse-mode tape. Records ops in the order the forward pass applies them
// and replays the exact reverse order on backward(). Gradients of bound
// parameters accumulate additively into their ParameterSet slots. A tape is
// single-use: backward() consumes it.
class Tape {
 public:
  // Leaf carrying data; rejects non-finite values.
  Value input(Tensor t);
  // Leaf bound to a parameter; its gradient lands in p.grad.
  Value param(Parameter& p);

  // x:[n,in] * w:[in,out] + b:[out] -> [n,out]. label names the layer in
  // shape-mismatch errors.
  Value linear(Value x, Value w, Value b, const std::string& label = "linear");
  // Elementwise sum of same-shape tensors.
  Value add(Value a, Value b);
  Value activate(Value x, Activation act);

  // Per-task losses, averaged over unmasked rows only; mask.size() == n and
  // at least one row must be unmasked. Masked rows get exactly zero gradient.
  Value mse_loss(Value pred, const Tensor& target, std::span<const uint8_t> mask);
  Value mae_loss(Value pred, const Tensor& target, std::span<const uint8_t> mask);
  Value loss(LossKind kind, Value pred, const Tensor& target, std::span<const uint8_t> mask);
  // logits: [n,K], classes: per-row target index in [0,K).
  Value cross_entropy_loss(Value logits, std::span<const int> classes,
                           std::span<const uint8_t> mask);

  // a + alpha * b for scalar nodes (loss combination).
  Value axpy(Value a, double alpha, Value b);

  const Tensor& value(Value v) const;
  double scalar(Value v) const;

  // Seeds d(loss)/d(loss) = 1 and sweeps the tape in reverse; throws
  // UsageError on a consumed tape or a non-scalar loss.
  void backward(Value loss);

  bool consumed() const { return consumed_; }
  size_t node_count() const { return nodes_.size(); }

 private:
  struct Node {
    Tensor val;
    Tensor grad;
    std::function<void(Tape&, int32_t)> back;
    Parameter* bound = nullptr;
    bool needs_grad = false;
  };

  Value push(Tensor val, bool needs_grad, std::function<void(Tape&, int32_t)> back,
             Parameter* bound = nullptr);
  Node& node(Value v);
  const Node& node(Value v) const;
  Tensor& grad(Value v);

  std::vector<Node> nodes_;
  bool consumed_ = false;
};

// Forward through a stack of (weight, bias) pairs taken from the set in
// order, applying the activation after every layer. The weight of layer k
// must be [in_k, out_k] with in_k equal to the previous layer's width.
Value forward_dense(Tape& tape, ParameterSet& params, const Tensor& input, Activation act);

// One task's slice of a combined loss. For regression kinds `target` holds
// the label rows; for cross_entropy `classes` holds the label indices.
struct TaskLossTerm {
  LossKind kind = LossKind::mse;
  Value pred;
  Tensor target;
  std::vector<int> classes;
  std::vector<uint8_t> mask;
};

// L = L_0 + alpha * L_1 + alpha * L_2 + ... with each per-task loss averaged
// over its unmasked samples only. A task whose mask is all-false contributes
// exactly zero loss and exactly zero gradient (its term is skipped, not
// evaluated). Every task empty -> UsageError (degenerate batch).
Value masked_multitask_loss(Tape& tape, const std::vector<TaskLossTerm>& terms, double alpha);

}  // namespace mtl::ad

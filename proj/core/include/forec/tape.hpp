#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "forec/ops.hpp"
#include "forec/tensor.hpp"

namespace forec::tape {

/// Trainable tensor plus its accumulated gradient. Gradients accumulate
/// across backward calls until zero_grad().
struct Parameter {
  std::string name;
  Tensor value;
  Tensor grad;

  Parameter() = default;
  Parameter(std::string n, Tensor v)
      : name(std::move(n)), value(std::move(v)), grad(Tensor::zeros(value.shape)) {}

  void zero_grad() { grad.fill(0.f); }
};

using NodeId = int;
constexpr NodeId kNoNode = -1;

/// Records ops in execution order and replays them in exact reverse order
/// on backward(). A tape lives for one training step; call clear() (or make
/// a fresh one) before the next forward pass. Multiple backward calls on the
/// same tape are allowed; each re-propagates from its own root with its own
/// seed and adds into the bound parameters' grads.
class Tape {
 public:
  NodeId input(Tensor t);
  NodeId param(Parameter& p);

  NodeId conv2d(NodeId input, NodeId weight, NodeId bias, int stride, int pad);
  NodeId relu(NodeId input);
  NodeId upsample_nearest(NodeId input, int factor);

  /// Scalar loss nodes (value shape {1}).
  NodeId softmax_ce(NodeId logits, std::vector<LabelMap> labels);
  NodeId masked_mse(NodeId pred, Tensor target, Tensor mask);
  /// sum_i weights[i] * x[i]; reduction helper for tests and probes.
  NodeId weighted_sum(NodeId input, Tensor weights);

  const Tensor& value(NodeId id) const;
  float scalar(NodeId id) const;
  /// Loss-node bookkeeping: #non-ignored pixels (softmax_ce) or #masked-in
  /// pixels (masked_mse).
  int64_t valid_count(NodeId id) const;
  /// Saved softmax probabilities of a softmax_ce node.
  const Tensor& probs(NodeId id) const;

  /// Reverse pass from a scalar node; the seed scales the whole gradient.
  /// Node-local grads are reset on every call so grad(id) reflects only the
  /// latest backward; Parameter::grad accumulates across calls.
  void backward(NodeId root, float seed = 1.f);
  /// d(root)/d(value of id) from the most recent backward call.
  const Tensor& grad(NodeId id) const;

  size_t size() const { return nodes_.size(); }
  void clear();

 private:
  enum class Kind : uint8_t {
    Input,
    Param,
    Conv2d,
    Relu,
    Upsample,
    SoftmaxCe,
    MaskedMse,
    WeightedSum,
    BrokenScale,
  };

  struct Node {
    Kind kind;
    NodeId in0 = kNoNode, in1 = kNoNode, in2 = kNoNode;
    int aux0 = 0, aux1 = 0;  // stride/pad or factor
    Tensor value;
    Tensor grad;  // allocated on demand during backward
    bool needs_grad = false;
    Parameter* bound = nullptr;
    // op-specific saved state
    ops::SoftmaxCeResult ce;
    std::vector<LabelMap> labels;
    Tensor aux_tensor;  // masked_mse target / weighted_sum weights
    Tensor mask;
    int64_t masked_in = 0;
  };

  NodeId push(Node n);
  const Node& at(NodeId id) const;
  Node& at(NodeId id);

  std::vector<Node> nodes_;

  friend NodeId broken_scale_for_selftest(Tape& t, NodeId input);
};

/// y = 2x with a deliberately wrong backward (claims dy/dx = 2.5). Exists so
/// the gradient checker can demonstrate that it catches bad gradients; never
/// used by the networks.
NodeId broken_scale_for_selftest(Tape& t, NodeId input);

}  // namespace forec::tape

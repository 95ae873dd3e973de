#include "forec/tape.hpp"

#include <utility>

#include "forec/errors.hpp"

namespace forec::tape {

NodeId Tape::push(Node n) {
  check_finite(n.value, "tape node output");
  nodes_.push_back(std::move(n));
  return NodeId(nodes_.size() - 1);
}

const Tape::Node& Tape::at(NodeId id) const {
  if (id < 0 || size_t(id) >= nodes_.size()) throw ValueError("tape: node id out of range");
  return nodes_[size_t(id)];
}

Tape::Node& Tape::at(NodeId id) {
  if (id < 0 || size_t(id) >= nodes_.size()) throw ValueError("tape: node id out of range");
  return nodes_[size_t(id)];
}

NodeId Tape::input(Tensor t) {
  Node n;
  n.kind = Kind::Input;
  n.value = std::move(t);
  return push(std::move(n));
}

NodeId Tape::param(Parameter& p) {
  Node n;
  n.kind = Kind::Param;
  n.value = p.value;
  n.needs_grad = true;
  n.bound = &p;
  return push(std::move(n));
}

NodeId Tape::conv2d(NodeId input, NodeId weight, NodeId bias, int stride, int pad) {
  const Node& in = at(input);
  const Node& wt = at(weight);
  const Tensor* b = bias == kNoNode ? nullptr : &at(bias).value;
  Node n;
  n.kind = Kind::Conv2d;
  n.in0 = input;
  n.in1 = weight;
  n.in2 = bias;
  n.aux0 = stride;
  n.aux1 = pad;
  n.value = ops::conv2d_forward(in.value, wt.value, b, stride, pad);
  n.needs_grad = in.needs_grad || wt.needs_grad || (bias != kNoNode && at(bias).needs_grad);
  return push(std::move(n));
}

NodeId Tape::relu(NodeId input) {
  const Node& in = at(input);
  Node n;
  n.kind = Kind::Relu;
  n.in0 = input;
  n.value = ops::relu_forward(in.value);
  n.needs_grad = in.needs_grad;
  return push(std::move(n));
}

NodeId Tape::upsample_nearest(NodeId input, int factor) {
  const Node& in = at(input);
  Node n;
  n.kind = Kind::Upsample;
  n.in0 = input;
  n.aux0 = factor;
  n.value = ops::upsample_nearest_forward(in.value, factor);
  n.needs_grad = in.needs_grad;
  return push(std::move(n));
}

NodeId Tape::softmax_ce(NodeId logits, std::vector<LabelMap> labels) {
  const Node& in = at(logits);
  Node n;
  n.kind = Kind::SoftmaxCe;
  n.in0 = logits;
  n.ce = ops::softmax_ce_forward(in.value, labels);
  n.labels = std::move(labels);
  n.value = Tensor({1}, {n.ce.loss});
  n.needs_grad = in.needs_grad;
  return push(std::move(n));
}

NodeId Tape::masked_mse(NodeId pred, Tensor target, Tensor mask) {
  const Node& in = at(pred);
  Node n;
  n.kind = Kind::MaskedMse;
  n.in0 = pred;
  ops::MaskedMseResult r = ops::masked_mse_forward(in.value, target, mask);
  n.aux_tensor = std::move(target);
  n.mask = std::move(mask);
  n.masked_in = r.masked_in;
  n.value = Tensor({1}, {r.loss});
  n.needs_grad = in.needs_grad;
  return push(std::move(n));
}

NodeId Tape::weighted_sum(NodeId input, Tensor weights) {
  const Node& in = at(input);
  if (!in.value.same_shape(weights))
    throw ShapeError("weighted_sum: weights shape must match input");
  double acc = 0.0;
  for (size_t i = 0; i < weights.data.size(); ++i)
    acc += double(in.value.data[i]) * double(weights.data[i]);
  Node n;
  n.kind = Kind::WeightedSum;
  n.in0 = input;
  n.aux_tensor = std::move(weights);
  n.value = Tensor({1}, {float(acc)});
  n.needs_grad = in.needs_grad;
  return push(std::move(n));
}

const Tensor& Tape::value(NodeId id) const { return at(id).value; }

float Tape::scalar(NodeId id) const {
  const Node& n = at(id);
  if (n.value.numel() != 1) throw ShapeError("tape: node is not scalar");
  return n.value.data[0];
}

int64_t Tape::valid_count(NodeId id) const {
  const Node& n = at(id);
  if (n.kind == Kind::SoftmaxCe) return n.ce.valid;
  if (n.kind == Kind::MaskedMse) return n.masked_in;
  throw ValueError("tape: node has no valid-pixel count");
}

const Tensor& Tape::probs(NodeId id) const {
  const Node& n = at(id);
  if (n.kind != Kind::SoftmaxCe) throw ValueError("tape: node has no softmax probabilities");
  return n.ce.probs;
}

const Tensor& Tape::grad(NodeId id) const {
  const Node& n = at(id);
  if (n.grad.numel() == 0) throw ValueError("tape: no gradient recorded for node");
  return n.grad;
}

void Tape::backward(NodeId root, float seed) {
  const Node& r = at(root);
  if (r.value.numel() != 1) throw ShapeError("tape: backward root must be scalar");
  if (!r.needs_grad) return;

  for (Node& n : nodes_) {
    if (!n.needs_grad) continue;
    if (n.grad.numel() == 0)
      n.grad = Tensor::zeros(n.value.shape);
    else
      n.grad.fill(0.f);
  }

  std::vector<char> live(nodes_.size(), 0);
  live[size_t(root)] = 1;
  at(root).grad.data[0] = seed;

  for (NodeId id = root; id >= 0; --id) {
    Node& n = at(id);
    if (!live[size_t(id)] || !n.needs_grad) continue;
    auto mark = [&](NodeId in) {
      if (in != kNoNode && at(in).needs_grad) live[size_t(in)] = 1;
    };
    switch (n.kind) {
      case Kind::Input:
        break;
      case Kind::Param:
        for (size_t i = 0; i < n.grad.data.size(); ++i) n.bound->grad.data[i] += n.grad.data[i];
        break;
      case Kind::Conv2d: {
        Node& in = at(n.in0);
        Node& wt = at(n.in1);
        Tensor* db = nullptr;
        if (n.in2 != kNoNode && at(n.in2).needs_grad) {
          db = &at(n.in2).grad;
          live[size_t(n.in2)] = 1;
        }
        mark(n.in0);
        mark(n.in1);
        ops::conv2d_backward(in.value, wt.value, n.aux0, n.aux1, n.grad,
                             in.needs_grad ? &in.grad : nullptr,
                             wt.needs_grad ? &wt.grad : nullptr, db);
        break;
      }
      case Kind::Relu: {
        Node& in = at(n.in0);
        if (in.needs_grad) {
          mark(n.in0);
          ops::relu_backward(in.value, n.grad, in.grad);
        }
        break;
      }
      case Kind::Upsample: {
        Node& in = at(n.in0);
        if (in.needs_grad) {
          mark(n.in0);
          ops::upsample_nearest_backward(n.grad, n.aux0, in.grad);
        }
        break;
      }
      case Kind::SoftmaxCe: {
        Node& in = at(n.in0);
        if (in.needs_grad) {
          mark(n.in0);
          ops::softmax_ce_backward(n.ce, n.labels, n.grad.data[0], in.grad);
        }
        break;
      }
      case Kind::MaskedMse: {
        Node& in = at(n.in0);
        if (in.needs_grad) {
          mark(n.in0);
          ops::masked_mse_backward(in.value, n.aux_tensor, n.mask, n.masked_in, n.grad.data[0],
                                   in.grad);
        }
        break;
      }
      case Kind::WeightedSum: {
        Node& in = at(n.in0);
        if (in.needs_grad) {
          mark(n.in0);
          float s = n.grad.data[0];
          for (size_t i = 0; i < in.grad.data.size(); ++i)
            in.grad.data[i] += s * n.aux_tensor.data[i];
        }
        break;
      }
      case Kind::BrokenScale: {
        Node& in = at(n.in0);
        if (in.needs_grad) {
          mark(n.in0);
          for (size_t i = 0; i < in.grad.data.size(); ++i)
            in.grad.data[i] += 2.5f * n.grad.data[i];
        }
        break;
      }
    }
  }
}

void Tape::clear() { nodes_.clear(); }

NodeId broken_scale_for_selftest(Tape& t, NodeId input) {
  const Tape::Node& in = t.at(input);
  Tape::Node n;
  n.kind = Tape::Kind::BrokenScale;
  n.in0 = input;
  n.value = in.value;
  for (float& v : n.value.data) v *= 2.f;
  n.needs_grad = in.needs_grad;
  return t.push(std::move(n));
}

}  // namespace forec::tape

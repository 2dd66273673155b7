// SPDX-License-Identifier: Apache-2.0
#include "segdistill/tape.hpp"

#include <algorithm>

#include "segdistill/error.hpp"

namespace segdistill {

const Tensor& Var::value() const {
  if (!tape_) throw ValueError("use of an unbound Var");
  return tape_->value(id_);
}

bool Var::requires_grad() const { return tape_ && tape_->requires_grad(id_); }

Var Tape::constant(Tensor value) {
  value.set_requires_grad(false);
  nodes_.push_back(Node{std::move(value), false, {}, {}, {}});
  return Var(this, static_cast<int>(nodes_.size()) - 1);
}

Var Tape::leaf(Tensor value) {
  value.set_requires_grad(record_);
  const bool rg = record_;
  nodes_.push_back(Node{std::move(value), rg, {}, {}, {}});
  return Var(this, static_cast<int>(nodes_.size()) - 1);
}

Var Tape::push(Tensor value, std::vector<int> inputs, BackwardFn backward) {
  bool rg = false;
  if (record_) {
    rg = std::any_of(inputs.begin(), inputs.end(), [&](int id) { return requires_grad(id); });
  }
  value.set_requires_grad(rg);
  Node node{std::move(value), rg, {}, {}, {}};
  if (rg) {
    node.inputs = std::move(inputs);
    node.backward = std::move(backward);
  }
  nodes_.push_back(std::move(node));
  return Var(this, static_cast<int>(nodes_.size()) - 1);
}

std::span<float> Tape::grad(int id) {
  Node& node = nodes_.at(id);
  if (node.grad.empty()) node.grad.assign(node.value.size(), 0.0f);
  return node.grad;
}

void Tape::backward(Var loss) {
  if (&loss.tape() != this) throw ValueError("loss is not on this tape");
  if (loss.value().size() != 1) {
    throw ShapeError("backward requires a scalar loss, got shape " + loss.shape().str());
  }
  if (!record_) throw ValueError("backward on a non-recording tape");
  grad(loss.id())[0] = 1.0f;
  for (int id = loss.id(); id >= 0; --id) {
    Node& node = nodes_[id];
    if (!node.requires_grad || node.grad.empty() || !node.backward) continue;
    node.backward(*this, id);
  }
}

Tensor Tape::gradient(Var v) const {
  const Node& node = nodes_.at(v.id());
  if (node.grad.empty()) return Tensor(node.value.shape(), 0.0f);
  return Tensor(node.value.shape(), node.grad);
}

}  // namespace segdistill

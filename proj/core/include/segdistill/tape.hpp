// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <deque>
#include <functional>
#include <span>
#include <vector>

#include "segdistill/tensor.hpp"

namespace segdistill {

class Tape;

/// Handle to a value recorded on a Tape. Cheap to copy; valid while the tape lives.
class Var {
 public:
  Var() = default;

  bool valid() const noexcept { return tape_ != nullptr; }
  Tape& tape() const { return *tape_; }
  int id() const noexcept { return id_; }

  const Tensor& value() const;
  const Shape& shape() const { return value().shape(); }
  bool requires_grad() const;

 private:
  friend class Tape;
  Var(Tape* tape, int id) : tape_(tape), id_(id) {}

  Tape* tape_ = nullptr;
  int id_ = -1;
};

/// Ordered record of executed operations. Nodes are appended in execution
/// order, so every node's inputs precede it and a reverse sweep is a valid
/// topological traversal.
class Tape {
 public:
  /// Backward rule of a node: reads tape.grad(self) and accumulates into inputs.
  using BackwardFn = std::function<void(Tape& tape, int self)>;

  /// A non-recording tape evaluates forward only; no backward rules are kept.
  explicit Tape(bool record = true) : record_(record) {}

  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  bool recording() const noexcept { return record_; }

  /// Value that never receives a gradient.
  Var constant(Tensor value);
  /// Value that receives a gradient when the tape records.
  Var leaf(Tensor value);

  /// Appends an operation output. The node requires a gradient iff the tape
  /// records and any input does.
  Var push(Tensor value, std::vector<int> inputs, BackwardFn backward);

  const Tensor& value(int id) const { return nodes_.at(id).value; }
  bool requires_grad(int id) const { return nodes_.at(id).requires_grad; }
  std::size_t size() const noexcept { return nodes_.size(); }

  /// Gradient buffer of a node, allocated (zeroed) on first access.
  std::span<float> grad(int id);
  bool has_grad(int id) const { return !nodes_.at(id).grad.empty(); }

  /// Reverse sweep from a scalar loss; d loss / d loss = 1.
  void backward(Var loss);

  /// Accumulated gradient of v; zeros when v received none.
  Tensor gradient(Var v) const;

 private:
  struct Node {
    Tensor value;
    bool requires_grad = false;
    std::vector<int> inputs;
    BackwardFn backward;
    std::vector<float> grad;
  };

  bool record_;
  std::deque<Node> nodes_;
};

}  // namespace segdistill

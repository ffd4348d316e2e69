#pragma once

#include <cstddef>
#include <deque>
#include <functional>
#include <string>
#include <utility>

#include "binaural/errors.hpp"
#include "binaural/grad/tensor.hpp"

namespace binaural::grad {

class Tape;

/// Handle to a value recorded on a tape.
struct Var {
  Tape* tape = nullptr;
  std::size_t id = 0;

  const Tensor& value() const;
  const Shape& shape() const { return value().shape; }
  std::size_t size() const { return value().size(); }
};

/// Ordered record of primitive applications. Nodes are appended in forward
/// order; backward() replays them in reverse. Single owner, not thread-safe.
class Tape {
 public:
  using Backward = std::function<void(Tape&, std::size_t self)>;

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var constant(Tensor value) { return push("constant", std::move(value), false, {}); }
  Var variable(Tensor value) { return push("variable", std::move(value), true, {}); }

  /// Appends the result of a primitive. Non-finite output is a hard failure.
  Var record(const char* op, Tensor value, bool needs_grad, Backward backward) {
    if (!value.all_finite())
      throw NumericalError(std::string("non-finite value produced by op '") + op + "' (tape node " +
                           std::to_string(nodes_.size()) + ", shape " + to_string(value.shape) + ")");
    return push(op, std::move(value), needs_grad, needs_grad ? std::move(backward) : Backward{});
  }

  const Tensor& value(std::size_t id) const { return nodes_.at(id).value; }
  const Tensor& value(Var v) const { return value(v.id); }
  bool needs_grad(Var v) const { return nodes_.at(v.id).needs_grad; }
  bool needs_grad(std::size_t id) const { return nodes_.at(id).needs_grad; }
  const char* op_name(std::size_t id) const { return nodes_.at(id).op; }
  std::size_t size() const { return nodes_.size(); }

  /// Gradient buffer of a node, allocated as zeros on first access.
  Tensor& grad(std::size_t id) {
    Node& n = nodes_.at(id);
    if (n.grad.data.empty()) n.grad = Tensor(n.value.shape, 0.0);
    return n.grad;
  }
  Tensor& grad(Var v) { return grad(v.id); }

  /// Gradient of the last backward pass w.r.t. v, zeros if v never received one.
  Tensor grad_or_zero(Var v) const {
    const Node& n = nodes_.at(v.id);
    return n.grad.data.empty() ? Tensor(n.value.shape, 0.0) : n.grad;
  }

  void backward(Var loss) {
    if (loss.tape != this) throw UsageError("backward: loss is not recorded on this tape");
    if (value(loss).size() != 1)
      throw UsageError("backward: loss must be a scalar, got shape " + to_string(value(loss).shape));
    for (auto& n : nodes_) n.grad = Tensor();
    if (!nodes_[loss.id].needs_grad) return;
    grad(loss.id).data[0] = 1.0;
    for (std::size_t i = loss.id + 1; i-- > 0;) {
      Node& n = nodes_[i];
      if (!n.needs_grad || !n.backward || n.grad.data.empty()) continue;
      n.backward(*this, i);
    }
  }

 private:
  struct Node {
    const char* op;
    Tensor value;
    Tensor grad;
    bool needs_grad;
    Backward backward;
  };

  Var push(const char* op, Tensor value, bool needs_grad, Backward backward) {
    nodes_.push_back(Node{op, std::move(value), Tensor(), needs_grad, std::move(backward)});
    return Var{this, nodes_.size() - 1};
  }

  std::deque<Node> nodes_;
};

inline const Tensor& Var::value() const {
  if (tape == nullptr) throw UsageError("var: unbound handle");
  return tape->value(id);
}

}  // namespace binaural::grad

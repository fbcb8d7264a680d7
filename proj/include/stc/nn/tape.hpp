#pragma once

#include <cstdint>
#include <functional>
#include <deque>
#include <vector>

#include "stc/nn/tensor.hpp"

namespace stc::nn {

// Handle to a value recorded on a tape.
struct Var {
  int id = -1;
};

// Records operations in execution order. backward() walks the record in
// reverse, which is a reverse topological order because every node is
// appended after its inputs.
template <class T>
class Tape {
 public:
  using BackwardFn = std::function<void(Tape&, Var)>;

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var constant(Tensor<T> value) { return push(std::move(value), false); }
  Var variable(Tensor<T> value) { return push(std::move(value), true); }

  // Parameters are read in place; their gradients accumulate into p.grad.
  Var param(Parameter<T>& p, bool trainable = true) {
    Node node;
    node.external = &p;
    node.requires_grad = trainable;
    nodes_.push_back(std::move(node));
    return {static_cast<int>(nodes_.size()) - 1};
  }

  // Appends an op result. `fn` runs during backward if any input needs grad.
  Var record(Tensor<T> value, bool requires_grad, BackwardFn fn) {
    Var v = push(std::move(value), requires_grad);
    if (requires_grad) nodes_[v.id].backward = std::move(fn);
    return v;
  }

  const Tensor<T>& value(Var v) const {
    const Node& n = nodes_.at(v.id);
    return n.external ? n.external->value : n.value;
  }
  const Shape& shape(Var v) const { return value(v).shape; }
  bool requires_grad(Var v) const { return nodes_.at(v.id).requires_grad; }

  // Gradient buffer, zero-allocated on first access.
  Tensor<T>& grad(Var v) {
    Node& n = nodes_.at(v.id);
    if (n.external) return n.external->grad;
    if (n.grad.shape != n.value.shape) n.grad = Tensor<T>(n.value.shape);
    return n.grad;
  }
  bool has_grad(Var v) const {
    const Node& n = nodes_.at(v.id);
    return n.external != nullptr || n.grad.shape == n.value.shape;
  }

  // Backpropagates d(loss)/d(.) from a scalar loss.
  void backward(Var loss) {
    if (value(loss).size() != 1) throw ArgumentError("backward expects a scalar loss");
    if (!requires_grad(loss)) return;
    grad(loss)[0] += T(1);
    for (int id = loss.id; id >= 0; --id) {
      Node& n = nodes_[id];
      if (!n.requires_grad || !n.backward || !has_grad(Var{id})) continue;
      n.backward(*this, Var{id});
      ++visits_;
    }
  }

  std::size_t size() const { return nodes_.size(); }
  std::size_t backward_visits() const { return visits_; }

  // Hash of the branch taken at every piecewise-linear point (abs, leaky
  // ReLU). Two evaluations with equal signatures lie in the same smooth piece.
  std::uint64_t kink_signature() const { return signature_; }
  void mix_signature(bool bit) {
    signature_ = (signature_ ^ static_cast<std::uint64_t>(bit)) * 0x100000001b3ULL + 0x9e3779b97f4a7c15ULL;
  }

 private:
  struct Node {
    Tensor<T> value;
    Tensor<T> grad;
    Parameter<T>* external = nullptr;
    bool requires_grad = false;
    BackwardFn backward;
  };

  Var push(Tensor<T> value, bool requires_grad) {
    Node node;
    node.value = std::move(value);
    node.requires_grad = requires_grad;
    nodes_.push_back(std::move(node));
    return {static_cast<int>(nodes_.size()) - 1};
  }

  std::deque<Node> nodes_;  // stable references across appends
  std::uint64_t signature_ = 0xcbf29ce484222325ULL;
  std::size_t visits_ = 0;
};

}  // namespace stc::nn

#pragma once

// Reverse-mode autodiff over batched matrices. Nodes are appended in
// evaluation order, so walking the tape backwards is a valid topological order.

#include <cstddef>
#include <functional>
#include <initializer_list>
#include <stdexcept>
#include <vector>

#include "drex/matrix.hpp"
#include "drex/nn/params.hpp"

namespace drex::nn {

struct Var {
  std::size_t id = static_cast<std::size_t>(-1);
};

template <class T>
class Tape {
 public:
  using Backward = std::function<void(Tape&, const Matrix<T>& out_grad)>;

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  /// A constant or an input. With requires_grad, backward() fills grad(var).
  Var input(Matrix<T> value, bool requires_grad = false) {
    Node n;
    n.owned = std::move(value);
    n.needs_grad = requires_grad;
    return push_node(std::move(n));
  }

  /// Binds a parameter; gradients accumulate into p.grad.
  Var param(Parameter<T>& p) {
    Node n;
    n.external = &p.value;
    n.external_grad = &p.grad;
    n.needs_grad = true;
    return push_node(std::move(n));
  }

  /// Binds an external value without tracking its gradient. `value` must outlive the tape.
  Var constant(const Matrix<T>& value) {
    Node n;
    n.external = &value;
    return push_node(std::move(n));
  }

  /// Records an op result. It needs a gradient iff some parent does.
  Var push(Matrix<T> value, std::initializer_list<Var> parents, Backward back) {
    Node n;
    n.owned = std::move(value);
    for (Var p : parents) n.needs_grad = n.needs_grad || node(p).needs_grad;
    if (n.needs_grad) n.back = std::move(back);
    return push_node(std::move(n));
  }

  const Matrix<T>& value(Var v) const {
    const Node& n = node(v);
    return n.external ? *n.external : n.owned;
  }

  bool needs_grad(Var v) const { return node(v).needs_grad; }

  /// Gradient buffer of `v`, zero-initialized on first touch.
  Matrix<T>& grad_ref(Var v) {
    Node& n = node(v);
    if (n.external_grad) return *n.external_grad;
    if (n.grad.empty() && !value(v).empty()) n.grad = Matrix<T>(value(v).rows(), value(v).cols());
    return n.grad;
  }

  const Matrix<T>& grad(Var v) const {
    const Node& n = node(v);
    if (n.external_grad) return *n.external_grad;
    if (!backward_done_) throw std::logic_error("tape: gradient requested before backward()");
    return n.grad;
  }

  std::size_t size() const { return nodes_.size(); }

  /// Propagates d(loss)/d(.) to every node that needs it. `loss` must be 1x1.
  void backward(Var loss) {
    if (nodes_.empty() || loss.id >= nodes_.size())
      throw std::logic_error("tape: backward() called before a forward pass was recorded");
    if (backward_done_) throw std::logic_error("tape: backward() already ran on this tape");
    const auto& lv = value(loss);
    if (lv.rows() != 1 || lv.cols() != 1) throw std::logic_error("tape: backward() needs a scalar loss");
    backward_done_ = true;
    if (!node(loss).needs_grad) return;
    grad_ref(loss)(0, 0) += T(1);
    for (std::size_t i = loss.id + 1; i-- > 0;) {
      Node& n = nodes_[i];
      if (!n.back) continue;
      if (n.grad.empty()) continue;  // unreachable from the loss
      n.back(*this, n.grad);
    }
  }

 private:
  struct Node {
    Matrix<T> owned;
    const Matrix<T>* external = nullptr;
    Matrix<T>* external_grad = nullptr;
    Matrix<T> grad;
    bool needs_grad = false;
    Backward back;
  };

  Node& node(Var v) {
    if (v.id >= nodes_.size()) throw std::logic_error("tape: variable not recorded on this tape");
    return nodes_[v.id];
  }
  const Node& node(Var v) const {
    if (v.id >= nodes_.size()) throw std::logic_error("tape: variable not recorded on this tape");
    return nodes_[v.id];
  }

  Var push_node(Node n) {
    if (backward_done_) throw std::logic_error("tape: cannot record after backward()");
    nodes_.push_back(std::move(n));
    return Var{nodes_.size() - 1};
  }

  std::vector<Node> nodes_;
  bool backward_done_ = false;
};

}  // namespace drex::nn

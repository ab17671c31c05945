// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <functional>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "echoreg/tensor.hpp"

namespace echoreg {

class Var;
struct Node;

/// One entry per parent; std::nullopt where the parent needs no gradient.
using ParentGrads = std::vector<std::optional<Tensor>>;
using BackwardFn = std::function<ParentGrads(const Node& self, const Tensor& upstream)>;

/// A recorded value in the computation graph.
struct Node {
  std::string op;
  Tensor value;
  std::vector<Var> parents;
  BackwardFn backward;
  bool requires_grad = false;
  bool leaf = true;
};

/// Shared handle to a graph node. Copies alias the same node.
class Var {
 public:
  Var() = default;

  static Var constant(Tensor value);
  /// Trainable leaf: receives a gradient from backward().
  static Var parameter(Tensor value);

  const Tensor& value() const { return node_->value; }
  const Shape& shape() const { return node_->value.shape(); }
  std::size_t numel() const { return node_->value.numel(); }
  bool requires_grad() const { return node_->requires_grad; }
  bool is_leaf() const { return node_->leaf; }
  const std::string& op() const { return node_->op; }
  const Node* node() const noexcept { return node_.get(); }
  explicit operator bool() const noexcept { return static_cast<bool>(node_); }

  /// Replaces a leaf's value (optimizer updates, finite differences).
  void set_value(Tensor value);
  /// Mutable access to a leaf's storage; shape must be preserved by callers.
  Tensor& leaf_value();

  friend bool same_node(const Var& a, const Var& b) noexcept {
    return a.node_ == b.node_;
  }

 private:
  friend Var make_op(std::string, Tensor, std::vector<Var>, BackwardFn);
  std::shared_ptr<Node> node_;
};

/// Records a new interior node. The backward function is only invoked when
/// at least one parent requires a gradient.
Var make_op(std::string op, Tensor value, std::vector<Var> parents, BackwardFn backward);

/// Gradients of a scalar root with respect to the leaves that reached it.
class Gradients {
 public:
  /// Gradient for a leaf; zeros of the leaf's shape when untouched.
  Tensor of(const Var& leaf) const;
  bool touched(const Var& leaf) const { return grads_.count(leaf.node()) != 0; }
  std::size_t size() const noexcept { return grads_.size(); }

 private:
  friend Gradients backward(const Var& root);
  std::unordered_map<const Node*, Tensor> grads_;
};

/// Reverse-mode differentiation from a single-element root.
Gradients backward(const Var& root);

// Elementwise ops. Operands must have equal shapes, or one of them a single
// element (scalar broadcast).
Var add(const Var& a, const Var& b);
Var sub(const Var& a, const Var& b);
Var mul(const Var& a, const Var& b);
Var scale(const Var& a, double factor);
Var add_scalar(const Var& a, double offset);
Var neg(const Var& a);
Var square(const Var& a);
Var abs(const Var& a);
Var relu(const Var& a);
Var sigmoid(const Var& a);
Var tanh(const Var& a);

/// (m x k) . (k x n) -> (m x n)
Var matmul(const Var& a, const Var& b);
/// Adds a vector of length shape.back() to every row of the last axis.
Var bias_add(const Var& a, const Var& bias);

// Reductions. The reduced axis is removed; a rank-1 input yields shape (1).
Var sum(const Var& a, std::size_t axis);
Var mean(const Var& a, std::size_t axis);
/// Gradient flows to the first maximal element along the axis.
Var max(const Var& a, std::size_t axis);
Var sum_all(const Var& a);
Var mean_all(const Var& a);

// Structural ops.
Var concat(std::span<const Var> parts, std::size_t axis);
Var reshape(const Var& a, Shape shape);
/// Half-open range [begin, end) along an axis.
Var slice(const Var& a, std::size_t axis, std::size_t begin, std::size_t end);

}  // namespace echoreg

// SPDX-License-Identifier: Apache-2.0
#include "echoreg/autograd.hpp"

#include <algorithm>
#include <cmath>
#include <unordered_set>

#include "echoreg/blas.hpp"

namespace echoreg {

Var Var::constant(Tensor value) {
  Var v;
  v.node_ = std::make_shared<Node>();
  v.node_->op = "constant";
  v.node_->value = std::move(value);
  return v;
}

Var Var::parameter(Tensor value) {
  Var v = constant(std::move(value));
  v.node_->op = "parameter";
  v.node_->requires_grad = true;
  return v;
}

void Var::set_value(Tensor value) {
  if (!node_->leaf) throw std::logic_error("set_value on non-leaf node " + node_->op);
  if (value.shape() != node_->value.shape()) {
    throw ShapeError("set_value shape " + shape_to_string(value.shape()) +
                     " differs from " + shape_to_string(node_->value.shape()));
  }
  node_->value = std::move(value);
}

Tensor& Var::leaf_value() {
  if (!node_->leaf) throw std::logic_error("leaf_value on non-leaf node " + node_->op);
  return node_->value;
}

Var make_op(std::string op, Tensor value, std::vector<Var> parents, BackwardFn backward) {
  Var v;
  v.node_ = std::make_shared<Node>();
  v.node_->op = std::move(op);
  v.node_->value = std::move(value);
  v.node_->leaf = false;
  v.node_->requires_grad =
      std::any_of(parents.begin(), parents.end(), [](const Var& p) { return p.requires_grad(); });
  if (v.node_->requires_grad) {
    v.node_->parents = std::move(parents);
    v.node_->backward = std::move(backward);
  }
  return v;
}

Tensor Gradients::of(const Var& leaf) const {
  auto it = grads_.find(leaf.node());
  if (it == grads_.end()) return Tensor::zeros(leaf.shape());
  return it->second;
}

namespace {

void accumulate(Tensor& into, const Tensor& g) {
  auto dst = into.data();
  auto src = g.data();
  for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += src[i];
}

std::vector<const Node*> topological_order(const Node* root) {
  std::vector<const Node*> order;
  std::unordered_set<const Node*> visited;
  // Iterative post-order DFS; (node, next parent index).
  std::vector<std::pair<const Node*, std::size_t>> stack;
  stack.emplace_back(root, 0);
  visited.insert(root);
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->parents.size()) {
      const Node* parent = node->parents[next++].node();
      if (parent->requires_grad && visited.insert(parent).second) {
        stack.emplace_back(parent, 0);
      }
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }
  return order;
}

}  // namespace

Gradients backward(const Var& root) {
  if (!root) throw std::invalid_argument("backward on empty Var");
  if (root.numel() != 1) {
    throw ShapeError("backward requires a scalar root, got shape " +
                     shape_to_string(root.shape()));
  }
  Gradients result;
  if (!root.requires_grad()) return result;

  const auto order = topological_order(root.node());
  std::unordered_map<const Node*, Tensor> pending;
  pending.emplace(root.node(), Tensor::ones(root.shape()));

  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    const Node* node = *it;
    auto found = pending.find(node);
    if (found == pending.end()) continue;
    if (node->leaf) {
      result.grads_.emplace(node, std::move(found->second));
      pending.erase(found);
      continue;
    }
    Tensor upstream = std::move(found->second);
    pending.erase(found);
    ParentGrads grads = node->backward(*node, upstream);
    for (std::size_t i = 0; i < node->parents.size(); ++i) {
      const Node* parent = node->parents[i].node();
      if (!parent->requires_grad || i >= grads.size() || !grads[i]) continue;
      auto slot = pending.find(parent);
      if (slot == pending.end()) {
        pending.emplace(parent, std::move(*grads[i]));
      } else {
        accumulate(slot->second, *grads[i]);
      }
    }
  }
  return result;
}

// ---------------------------------------------------------------------------
// Elementwise

namespace {

enum class Broadcast { kNone, kLeftScalar, kRightScalar };

Broadcast check_elementwise(const char* op, const Var& a, const Var& b) {
  if (a.shape() == b.shape()) return Broadcast::kNone;
  if (b.numel() == 1) return Broadcast::kRightScalar;
  if (a.numel() == 1) return Broadcast::kLeftScalar;
  throw ShapeError(std::string(op) + ": shape mismatch " + shape_to_string(a.shape()) +
                   " vs " + shape_to_string(b.shape()));
}

template <class F>
Tensor zip(const Tensor& a, const Tensor& b, Broadcast mode, F f) {
  const Tensor& like = mode == Broadcast::kLeftScalar ? b : a;
  Tensor out(like.shape());
  auto o = out.data();
  switch (mode) {
    case Broadcast::kNone:
      for (std::size_t i = 0; i < o.size(); ++i) o[i] = f(a[i], b[i]);
      break;
    case Broadcast::kRightScalar:
      for (std::size_t i = 0; i < o.size(); ++i) o[i] = f(a[i], b[0]);
      break;
    case Broadcast::kLeftScalar:
      for (std::size_t i = 0; i < o.size(); ++i) o[i] = f(a[0], b[i]);
      break;
  }
  return out;
}

// Reduces a full-shape gradient to the operand's shape (sums for a
// broadcast scalar).
Tensor reduce_to(const Tensor& g, const Shape& shape) {
  if (g.shape() == shape) return g;
  double total = 0.0;
  for (double v : g.data()) total += v;
  return Tensor(shape, total);
}

template <class F>
Tensor map(const Tensor& a, F f) {
  Tensor out(a.shape());
  auto o = out.data();
  for (std::size_t i = 0; i < o.size(); ++i) o[i] = f(a[i]);
  return out;
}

}  // namespace

Var add(const Var& a, const Var& b) {
  const auto mode = check_elementwise("add", a, b);
  return make_op("add", zip(a.value(), b.value(), mode, std::plus<>()), {a, b},
                 [](const Node& self, const Tensor& g) -> ParentGrads {
                   return {reduce_to(g, self.parents[0].shape()),
                           reduce_to(g, self.parents[1].shape())};
                 });
}

Var sub(const Var& a, const Var& b) {
  const auto mode = check_elementwise("sub", a, b);
  return make_op("sub", zip(a.value(), b.value(), mode, std::minus<>()), {a, b},
                 [](const Node& self, const Tensor& g) -> ParentGrads {
                   Tensor ng = map(g, [](double v) { return -v; });
                   return {reduce_to(g, self.parents[0].shape()),
                           reduce_to(ng, self.parents[1].shape())};
                 });
}

Var mul(const Var& a, const Var& b) {
  const auto mode = check_elementwise("mul", a, b);
  return make_op("mul", zip(a.value(), b.value(), mode, std::multiplies<>()), {a, b},
                 [mode](const Node& self, const Tensor& g) -> ParentGrads {
                   const Tensor& av = self.parents[0].value();
                   const Tensor& bv = self.parents[1].value();
                   ParentGrads out(2);
                   // g has the output shape; the other operand is either the
                   // same shape or a broadcast scalar.
                   if (self.parents[0].requires_grad()) {
                     const auto m = mode == Broadcast::kRightScalar ? Broadcast::kRightScalar
                                                                    : Broadcast::kNone;
                     out[0] = reduce_to(zip(g, bv, m, std::multiplies<>()), av.shape());
                   }
                   if (self.parents[1].requires_grad()) {
                     const auto m = mode == Broadcast::kLeftScalar ? Broadcast::kRightScalar
                                                                   : Broadcast::kNone;
                     out[1] = reduce_to(zip(g, av, m, std::multiplies<>()), bv.shape());
                   }
                   return out;
                 });
}

Var scale(const Var& a, double factor) {
  return make_op("scale", map(a.value(), [factor](double v) { return v * factor; }), {a},
                 [factor](const Node&, const Tensor& g) -> ParentGrads {
                   return {map(g, [factor](double v) { return v * factor; })};
                 });
}

Var add_scalar(const Var& a, double offset) {
  return make_op("add_scalar", map(a.value(), [offset](double v) { return v + offset; }), {a},
                 [](const Node&, const Tensor& g) -> ParentGrads { return {g}; });
}

Var neg(const Var& a) { return scale(a, -1.0); }

Var square(const Var& a) {
  return make_op("square", map(a.value(), [](double v) { return v * v; }), {a},
                 [](const Node& self, const Tensor& g) -> ParentGrads {
                   const Tensor& x = self.parents[0].value();
                   Tensor out(g.shape());
                   for (std::size_t i = 0; i < g.numel(); ++i) out[i] = 2.0 * x[i] * g[i];
                   return {std::move(out)};
                 });
}

Var abs(const Var& a) {
  return make_op("abs", map(a.value(), [](double v) { return std::fabs(v); }), {a},
                 [](const Node& self, const Tensor& g) -> ParentGrads {
                   const Tensor& x = self.parents[0].value();
                   Tensor out(g.shape());
                   for (std::size_t i = 0; i < g.numel(); ++i) {
                     out[i] = x[i] > 0.0 ? g[i] : (x[i] < 0.0 ? -g[i] : 0.0);
                   }
                   return {std::move(out)};
                 });
}

Var relu(const Var& a) {
  return make_op("relu", map(a.value(), [](double v) { return v > 0.0 || std::isnan(v) ? v : 0.0; }), {a},
                 [](const Node& self, const Tensor& g) -> ParentGrads {
                   const Tensor& x = self.parents[0].value();
                   Tensor out(g.shape());
                   for (std::size_t i = 0; i < g.numel(); ++i) out[i] = x[i] > 0.0 ? g[i] : 0.0;
                   return {std::move(out)};
                 });
}

Var sigmoid(const Var& a) {
  return make_op("sigmoid", map(a.value(), [](double v) { return 1.0 / (1.0 + std::exp(-v)); }),
                 {a}, [](const Node& self, const Tensor& g) -> ParentGrads {
                   const Tensor& y = self.value;
                   Tensor out(g.shape());
                   for (std::size_t i = 0; i < g.numel(); ++i) out[i] = g[i] * y[i] * (1.0 - y[i]);
                   return {std::move(out)};
                 });
}

Var tanh(const Var& a) {
  return make_op("tanh", map(a.value(), [](double v) { return std::tanh(v); }), {a},
                 [](const Node& self, const Tensor& g) -> ParentGrads {
                   const Tensor& y = self.value;
                   Tensor out(g.shape());
                   for (std::size_t i = 0; i < g.numel(); ++i) out[i] = g[i] * (1.0 - y[i] * y[i]);
                   return {std::move(out)};
                 });
}

// ---------------------------------------------------------------------------
// Linear algebra

Var matmul(const Var& a, const Var& b) {
  if (a.value().rank() != 2 || b.value().rank() != 2) {
    throw ShapeError("matmul expects rank-2 operands, got " + shape_to_string(a.shape()) +
                     " and " + shape_to_string(b.shape()));
  }
  const std::size_t m = a.shape()[0], k = a.shape()[1], n = b.shape()[1];
  if (b.shape()[0] != k) {
    throw ShapeError("matmul inner extents differ: " + shape_to_string(a.shape()) + " . " +
                     shape_to_string(b.shape()));
  }
  Tensor out({m, n});
  blas::gemm(false, false, m, n, k, 1.0, a.value().data().data(), b.value().data().data(), 0.0,
             out.data().data());
  return make_op("matmul", std::move(out), {a, b},
                 [m, n, k](const Node& self, const Tensor& g) -> ParentGrads {
                   ParentGrads grads(2);
                   if (self.parents[0].requires_grad()) {
                     Tensor ga({m, k});
                     blas::gemm(false, true, m, k, n, 1.0, g.data().data(),
                                self.parents[1].value().data().data(), 0.0, ga.data().data());
                     grads[0] = std::move(ga);
                   }
                   if (self.parents[1].requires_grad()) {
                     Tensor gb({k, n});
                     blas::gemm(true, false, k, n, m, 1.0, self.parents[0].value().data().data(),
                                g.data().data(), 0.0, gb.data().data());
                     grads[1] = std::move(gb);
                   }
                   return grads;
                 });
}

Var bias_add(const Var& a, const Var& bias) {
  const std::size_t width = a.shape().back();
  if (bias.value().rank() != 1 || bias.numel() != width) {
    throw ShapeError("bias_add: bias " + shape_to_string(bias.shape()) +
                     " does not match last axis of " + shape_to_string(a.shape()));
  }
  Tensor out = a.value();
  auto o = out.data();
  const auto b = bias.value().data();
  for (std::size_t i = 0; i < o.size(); ++i) o[i] += b[i % width];
  return make_op("bias_add", std::move(out), {a, bias},
                 [width](const Node&, const Tensor& g) -> ParentGrads {
                   Tensor gb({width});
                   for (std::size_t i = 0; i < g.numel(); ++i) gb[i % width] += g[i];
                   return {g, std::move(gb)};
                 });
}

// ---------------------------------------------------------------------------
// Reductions

namespace {

struct AxisSplit {
  std::size_t outer, n, inner;
};

AxisSplit split_axis(const Shape& shape, std::size_t axis, const char* op) {
  if (axis >= shape.size()) {
    throw ShapeError(std::string(op) + ": invalid axis " + std::to_string(axis) + " for shape " +
                     shape_to_string(shape));
  }
  AxisSplit s{1, shape[axis], 1};
  for (std::size_t i = 0; i < axis; ++i) s.outer *= shape[i];
  for (std::size_t i = axis + 1; i < shape.size(); ++i) s.inner *= shape[i];
  return s;
}

Shape drop_axis(const Shape& shape, std::size_t axis) {
  Shape out;
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i != axis) out.push_back(shape[i]);
  }
  if (out.empty()) out.push_back(1);
  return out;
}

Var reduce_sum(const char* op, const Var& a, std::size_t axis, double factor) {
  const auto s = split_axis(a.shape(), axis, op);
  Tensor out(drop_axis(a.shape(), axis));
  const auto x = a.value().data();
  for (std::size_t o = 0; o < s.outer; ++o) {
    for (std::size_t j = 0; j < s.n; ++j) {
      const double* row = &x[(o * s.n + j) * s.inner];
      double* dst = &out[o * s.inner];
      for (std::size_t i = 0; i < s.inner; ++i) dst[i] += row[i];
    }
  }
  if (factor != 1.0) {
    for (double& v : out.data()) v *= factor;
  }
  return make_op(op, std::move(out), {a},
                 [s, factor](const Node& self, const Tensor& g) -> ParentGrads {
                   Tensor ga(self.parents[0].shape());
                   for (std::size_t o = 0; o < s.outer; ++o) {
                     for (std::size_t j = 0; j < s.n; ++j) {
                       double* dst = &ga[(o * s.n + j) * s.inner];
                       for (std::size_t i = 0; i < s.inner; ++i) dst[i] = g[o * s.inner + i] * factor;
                     }
                   }
                   return {std::move(ga)};
                 });
}

}  // namespace

Var sum(const Var& a, std::size_t axis) { return reduce_sum("sum", a, axis, 1.0); }

Var mean(const Var& a, std::size_t axis) {
  const auto s = split_axis(a.shape(), axis, "mean");
  return reduce_sum("mean", a, axis, 1.0 / static_cast<double>(s.n));
}

Var max(const Var& a, std::size_t axis) {
  const auto s = split_axis(a.shape(), axis, "max");
  Tensor out(drop_axis(a.shape(), axis));
  std::vector<std::size_t> arg(s.outer * s.inner);
  const auto x = a.value().data();
  for (std::size_t o = 0; o < s.outer; ++o) {
    for (std::size_t i = 0; i < s.inner; ++i) {
      std::size_t best = 0;
      double best_v = x[o * s.n * s.inner + i];
      for (std::size_t j = 1; j < s.n; ++j) {
        const double v = x[(o * s.n + j) * s.inner + i];
        if (v > best_v) {
          best_v = v;
          best = j;
        }
      }
      out[o * s.inner + i] = best_v;
      arg[o * s.inner + i] = best;
    }
  }
  return make_op("max", std::move(out), {a},
                 [s, arg = std::move(arg)](const Node& self, const Tensor& g) -> ParentGrads {
                   Tensor ga(self.parents[0].shape());
                   for (std::size_t o = 0; o < s.outer; ++o) {
                     for (std::size_t i = 0; i < s.inner; ++i) {
                       const std::size_t j = arg[o * s.inner + i];
                       ga[(o * s.n + j) * s.inner + i] = g[o * s.inner + i];
                     }
                   }
                   return {std::move(ga)};
                 });
}

Var sum_all(const Var& a) {
  double total = 0.0;
  for (double v : a.value().data()) total += v;
  return make_op("sum_all", Tensor::scalar(total), {a},
                 [](const Node& self, const Tensor& g) -> ParentGrads {
                   return {Tensor(self.parents[0].shape(), g[0])};
                 });
}

Var mean_all(const Var& a) {
  const double inv = 1.0 / static_cast<double>(a.numel());
  double total = 0.0;
  for (double v : a.value().data()) total += v;
  return make_op("mean_all", Tensor::scalar(total * inv), {a},
                 [inv](const Node& self, const Tensor& g) -> ParentGrads {
                   return {Tensor(self.parents[0].shape(), g[0] * inv)};
                 });
}

// ---------------------------------------------------------------------------
// Structural

Var concat(std::span<const Var> parts, std::size_t axis) {
  if (parts.empty()) throw ShapeError("concat: no operands");
  const Shape& first = parts.front().shape();
  if (axis >= first.size()) {
    throw ShapeError("concat: invalid axis " + std::to_string(axis) + " for shape " +
                     shape_to_string(first));
  }
  Shape out_shape = first;
  out_shape[axis] = 0;
  std::vector<std::size_t> widths;
  for (const auto& p : parts) {
    const Shape& s = p.shape();
    bool compatible = s.size() == first.size();
    for (std::size_t i = 0; compatible && i < s.size(); ++i) {
      if (i != axis && s[i] != first[i]) compatible = false;
    }
    if (!compatible) {
      throw ShapeError("concat: shape mismatch " + shape_to_string(first) + " vs " +
                       shape_to_string(s) + " on axis " + std::to_string(axis));
    }
    out_shape[axis] += s[axis];
    widths.push_back(s[axis]);
  }
  std::size_t outer = 1, inner = 1;
  for (std::size_t i = 0; i < axis; ++i) outer *= first[i];
  for (std::size_t i = axis + 1; i < first.size(); ++i) inner *= first[i];
  const std::size_t total = out_shape[axis];

  Tensor out(out_shape);
  std::size_t offset = 0;
  for (std::size_t p = 0; p < parts.size(); ++p) {
    const auto src = parts[p].value().data();
    const std::size_t w = widths[p] * inner;
    for (std::size_t o = 0; o < outer; ++o) {
      std::copy_n(&src[o * w], w, &out[(o * total + offset) * inner]);
    }
    offset += widths[p];
  }
  return make_op("concat", std::move(out), std::vector<Var>(parts.begin(), parts.end()),
                 [outer, inner, total, widths](const Node& self, const Tensor& g) -> ParentGrads {
                   ParentGrads grads(widths.size());
                   std::size_t offset = 0;
                   for (std::size_t p = 0; p < widths.size(); ++p) {
                     if (self.parents[p].requires_grad()) {
                       Tensor gp(self.parents[p].shape());
                       const std::size_t w = widths[p] * inner;
                       for (std::size_t o = 0; o < outer; ++o) {
                         std::copy_n(g.data().data() + (o * total + offset) * inner, w, &gp[o * w]);
                       }
                       grads[p] = std::move(gp);
                     }
                     offset += widths[p];
                   }
                   return grads;
                 });
}

Var reshape(const Var& a, Shape shape) {
  Tensor out = a.value().reshaped(std::move(shape));
  return make_op("reshape", std::move(out), {a},
                 [](const Node& self, const Tensor& g) -> ParentGrads {
                   return {g.reshaped(self.parents[0].shape())};
                 });
}

Var slice(const Var& a, std::size_t axis, std::size_t begin, std::size_t end) {
  const auto s = split_axis(a.shape(), axis, "slice");
  if (begin >= end || end > s.n) {
    throw ShapeError("slice: invalid range [" + std::to_string(begin) + ", " +
                     std::to_string(end) + ") on axis " + std::to_string(axis) + " of " +
                     shape_to_string(a.shape()));
  }
  Shape out_shape = a.shape();
  out_shape[axis] = end - begin;
  Tensor out(out_shape);
  const std::size_t w = (end - begin) * s.inner;
  const auto x = a.value().data();
  for (std::size_t o = 0; o < s.outer; ++o) {
    std::copy_n(&x[(o * s.n + begin) * s.inner], w, &out[o * w]);
  }
  return make_op("slice", std::move(out), {a},
                 [s, begin, w](const Node& self, const Tensor& g) -> ParentGrads {
                   Tensor ga(self.parents[0].shape());
                   for (std::size_t o = 0; o < s.outer; ++o) {
                     std::copy_n(g.data().data() + o * w, w, &ga[(o * s.n + begin) * s.inner]);
                   }
                   return {std::move(ga)};
                 });
}

}  // namespace echoreg

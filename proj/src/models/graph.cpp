// SPDX-License-Identifier: Apache-2.0
#include <algorithm>
#include <map>
#include <set>

#include "echoreg/models.hpp"

namespace echoreg::models {
namespace {

Shape concat_shape(const std::string& node, const std::vector<Shape>& parts) {
  Shape out = parts.front();
  std::size_t channels = 0;
  for (const Shape& p : parts) {
    if (p.size() != out.size()) throw ShapeError("concat " + node + ": rank mismatch");
    // Temporal extents may differ by cropping; the rest must agree.
    for (std::size_t a = 1; a + 1 < p.size(); ++a) {
      if (p[a] != out[a]) {
        throw ShapeError("concat " + node + ": " + shape_to_string(p) + " vs " +
                         shape_to_string(out));
      }
    }
    if (p.size() > 1) out[0] = std::min(out[0], p[0]);
    channels += p.back();
  }
  out.back() = channels;
  return out;
}

}  // namespace

std::string GraphNode::describe() const {
  std::string from;
  for (const auto& i : inputs) from += (from.empty() ? "" : ",") + i;
  switch (kind) {
    case NodeKind::kConcat:
      return name + " <- concat(" + from + ")";
    case NodeKind::kSplit:
      return name + " <- split(" + from + ", " + std::to_string(split_begin) + ":" +
             std::to_string(split_end) + ")";
    case NodeKind::kModule:
      break;
  }
  return name + " <- " + from + " " + module->describe();
}

std::vector<std::string> Model::node_names() const {
  std::vector<std::string> names;
  for (const auto& n : nodes_) names.push_back(n.name);
  return names;
}

const GraphNode& Model::node(std::string_view name) const {
  for (const auto& n : nodes_) {
    if (n.name == name) return n;
  }
  throw std::out_of_range("no node named " + std::string(name));
}

std::vector<Shape> Model::propagate_shapes() const {
  std::map<std::string, Shape, std::less<>> shapes;
  for (const auto& in : inputs_) shapes[in.name] = in.shape;
  std::vector<Shape> out;
  for (const auto& n : nodes_) {
    std::vector<Shape> from;
    for (const auto& i : n.inputs) from.push_back(shapes.at(i));
    Shape s;
    switch (n.kind) {
      case NodeKind::kModule:
        s = n.module->output_shape(from.front());
        break;
      case NodeKind::kConcat:
        s = concat_shape(n.name, from);
        break;
      case NodeKind::kSplit:
        if (n.split_end > from.front().back() || n.split_begin >= n.split_end) {
          throw ShapeError("split " + n.name + ": channel range out of bounds");
        }
        s = from.front();
        s.back() = n.split_end - n.split_begin;
        break;
    }
    shapes[n.name] = s;
    out.push_back(std::move(s));
  }
  return out;
}

layers::StateRefs Model::state() {
  layers::StateRefs refs;
  std::set<const layers::Module*> seen;
  for (auto& n : nodes_) {
    if (n.kind != NodeKind::kModule || !seen.insert(n.module.get()).second) continue;
    n.module->collect(n.name, refs);
  }
  refs.buffers.push_back({"output/shift", &output_shift_});
  refs.buffers.push_back({"output/scale", &output_scale_});
  return refs;
}

void Model::set_output_affine(double shift, double scale) {
  output_shift_[0] = shift;
  output_scale_[0] = scale;
}

Var model_forward(Model& model, std::span<const Var> inputs, layers::ForwardContext& ctx) {
  if (inputs.size() != model.inputs_.size()) {
    throw ShapeError("model expects " + std::to_string(model.inputs_.size()) + " inputs, got " +
                     std::to_string(inputs.size()));
  }
  std::map<std::string, Var, std::less<>> values;
  std::size_t batch = 0;
  for (std::size_t i = 0; i < inputs.size(); ++i) {
    const InputDecl& decl = model.inputs_[i];
    const Shape& s = inputs[i].shape();
    if (s.size() != decl.shape.size() + 1 || !std::equal(decl.shape.begin(), decl.shape.end(), s.begin() + 1) ||
        (i > 0 && s[0] != batch)) {
      throw ShapeError("input " + decl.name + " expects batch x " + shape_to_string(decl.shape) +
                       ", got " + shape_to_string(s));
    }
    batch = s[0];
    values[decl.name] = inputs[i];
  }
  Var last;
  for (const auto& n : model.nodes_) {
    switch (n.kind) {
      case NodeKind::kModule:
        last = n.module->forward(values.at(n.inputs.front()), ctx);
        break;
      case NodeKind::kSplit: {
        const Var& x = values.at(n.inputs.front());
        last = slice(x, x.shape().size() - 1, n.split_begin, n.split_end);
        break;
      }
      case NodeKind::kConcat: {
        std::vector<Var> parts;
        std::size_t frames = SIZE_MAX;
        for (const auto& i : n.inputs) {
          parts.push_back(values.at(i));
          if (parts.back().shape().size() == 5) frames = std::min(frames, parts.back().shape()[1]);
        }
        for (Var& p : parts) {
          if (p.shape().size() == 5 && p.shape()[1] != frames) p = slice(p, 1, 0, frames);
        }
        last = concat(parts, parts.front().shape().size() - 1);
        break;
      }
    }
    if (!last.value().all_finite()) {
      throw NumericError("non-finite activation in node '" + n.name + "'");
    }
    values[n.name] = last;
  }
  return add_scalar(scale(last, model.output_scale_[0]), model.output_shift_[0]);
}

std::size_t count_params(Model& model) {
  std::size_t total = 0;
  for (const auto& p : model.state().parameters) total += p.var->numel();
  return total;
}

}  // namespace echoreg::models

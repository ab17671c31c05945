// SPDX-License-Identifier: Apache-2.0
#include "echoreg/layers.hpp"

namespace echoreg::layers {

Var dense(const Var& input, const Var& weights, const Var& bias, Activation activation) {
  if (input.shape().size() != 2 || weights.shape().size() != 2 ||
      input.shape()[1] != weights.shape()[0] || bias.shape() != Shape{weights.shape()[1]}) {
    throw ShapeError("dense: input " + shape_to_string(input.shape()) + ", weights " +
                     shape_to_string(weights.shape()) + ", bias " +
                     shape_to_string(bias.shape()));
  }
  Var out = bias_add(matmul(input, weights), bias);
  return activation == Activation::kRelu ? relu(out) : out;
}

Var dropout(const Var& input, const DropoutSpec& spec, Rng& rng) {
  if (!(spec.rate >= 0.0 && spec.rate < 1.0)) {
    throw std::invalid_argument("dropout rate must lie in [0, 1), got " +
                                std::to_string(spec.rate));
  }
  if (spec.mode == Mode::kInference || spec.rate == 0.0) return input;
  const double keep_scale = 1.0 / (1.0 - spec.rate);
  Tensor mask(input.shape());
  for (double& m : mask.data()) m = rng.uniform() >= spec.rate ? keep_scale : 0.0;
  return mul(input, Var::constant(std::move(mask)));
}

std::size_t gate_count(CellKind cell) { return cell == CellKind::kLstm ? 4 : 3; }

RecurrentState initial_state(CellKind cell, std::size_t batch, std::size_t hidden) {
  RecurrentState s;
  s.hidden = Var::constant(Tensor({batch, hidden}));
  if (cell == CellKind::kLstm) s.cell = Var::constant(Tensor({batch, hidden}));
  return s;
}

RecurrentState recurrent_step(CellKind cell, const Var& input, const RecurrentState& previous,
                              const RecurrentParams& params) {
  const std::size_t gates = gate_count(cell);
  const Shape& ws = params.recurrent_weights.shape();
  if (ws.size() != 2 || ws[1] != gates * ws[0]) {
    throw ShapeError("recurrent weights must be H x " + std::to_string(gates) + "H, got " +
                     shape_to_string(ws));
  }
  const std::size_t h = ws[0];
  if (input.shape().size() != 2 || params.input_weights.shape() != Shape{input.shape()[1], gates * h} ||
      params.bias.shape() != Shape{gates * h}) {
    throw ShapeError("recurrent step: input " + shape_to_string(input.shape()) +
                     ", input weights " + shape_to_string(params.input_weights.shape()));
  }
  const Shape state_shape{input.shape()[0], h};
  if (previous.hidden.shape() != state_shape ||
      (cell == CellKind::kLstm && previous.cell.shape() != state_shape)) {
    throw ShapeError("recurrent step: state must be " + shape_to_string(state_shape));
  }
  const Var& a = previous.hidden;
  const Var zx = bias_add(matmul(input, params.input_weights), params.bias);
  const auto gate = [h](const Var& z, std::size_t k) { return slice(z, 1, k * h, (k + 1) * h); };

  if (cell == CellKind::kLstm) {
    const Var z = add(zx, matmul(a, params.recurrent_weights));
    const Var i = sigmoid(gate(z, 0));
    const Var f = sigmoid(gate(z, 1));
    const Var g = tanh(gate(z, 2));
    const Var o = sigmoid(gate(z, 3));
    const Var c = add(mul(f, previous.cell), mul(i, g));
    return {mul(o, tanh(c)), c};
  }
  const Var uzr = slice(params.recurrent_weights, 1, 0, 2 * h);
  const Var uh = slice(params.recurrent_weights, 1, 2 * h, 3 * h);
  const Var zr = matmul(a, uzr);
  const Var z = sigmoid(add(gate(zx, 0), gate(zr, 0)));
  const Var r = sigmoid(add(gate(zx, 1), gate(zr, 1)));
  const Var candidate = tanh(add(gate(zx, 2), matmul(mul(r, a), uh)));
  // (1 - z) * a + z * candidate
  return {add(a, mul(z, sub(candidate, a))), Var()};
}

Var apply_per_frame(const std::function<Var(const Var&)>& frame_model, const Shape& frame_shape,
                    const Var& clip) {
  const Shape& s = clip.shape();
  if (s.size() != 5 || frame_shape.size() != 3 ||
      !std::equal(frame_shape.begin(), frame_shape.end(), s.begin() + 2)) {
    throw ShapeError("per-frame model expects frames " + shape_to_string(frame_shape) +
                     ", clip is " + shape_to_string(s));
  }
  const std::size_t batch = s[0];
  const std::size_t frames = s[1];
  const Var stacked = reshape(clip, {batch * frames, 1, s[2], s[3], s[4]});
  const Var features = frame_model(stacked);
  if (features.shape().size() != 2 || features.shape()[0] != batch * frames) {
    throw ShapeError("per-frame model must return (frames x D), got " +
                     shape_to_string(features.shape()));
  }
  return reshape(features, {batch, frames, features.shape()[1]});
}

}  // namespace echoreg::layers

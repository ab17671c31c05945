// SPDX-License-Identifier: Apache-2.0
#include "echoreg/modules.hpp"

#include <cmath>
#include <sstream>
#include <stdexcept>

namespace echoreg::layers {
namespace {

Tensor init_normal(Shape shape, std::size_t fan_in, Init init, Rng& rng) {
  const double gain = init == Init::kHe ? 2.0 : 1.0;
  const double std = std::sqrt(gain / static_cast<double>(fan_in));
  Tensor t(std::move(shape));
  for (double& v : t.data()) v = std * rng.normal();
  return t;
}

std::string join(const std::string& prefix, const std::string& name) {
  return prefix.empty() ? name : prefix + "/" + name;
}

Shape with_batch(const Shape& sample) {
  Shape s{1};
  s.insert(s.end(), sample.begin(), sample.end());
  return s;
}

Shape without_batch(const Shape& batched) { return Shape(batched.begin() + 1, batched.end()); }

const char* padding_name(Padding p) { return p == Padding::kSame ? "same" : "valid"; }

}  // namespace

std::string extents_to_string(const Extents3& e) {
  return std::to_string(e[0]) + "x" + std::to_string(e[1]) + "x" + std::to_string(e[2]);
}

void Module::collect(const std::string&, StateRefs&) {}

Conv3dLayer::Conv3dLayer(const ConvSpec& spec, bool with_bias, Init init, Rng& rng)
    : spec_(spec) {
  const std::size_t fan_in = spec.kernel[0] * spec.kernel[1] * spec.kernel[2] * spec.in_channels;
  if (fan_in == 0 || spec.out_channels == 0) {
    throw std::invalid_argument("conv3d layer needs positive kernel and channel counts");
  }
  weights_ = Var::parameter(init_normal(spec.weight_shape(), fan_in, init, rng));
  if (with_bias) bias_ = Var::parameter(Tensor({spec.out_channels}));
}

std::string Conv3dLayer::describe() const {
  return "conv3d " + extents_to_string(spec_.kernel) + " " + std::to_string(spec_.in_channels) +
         "->" + std::to_string(spec_.out_channels) + " stride " +
         extents_to_string(spec_.stride) + " " + padding_name(spec_.padding) +
         (bias_ ? " bias" : "");
}

Shape Conv3dLayer::output_shape(const Shape& input) const {
  return without_batch(conv3d_output_shape(with_batch(input), spec_));
}

Var Conv3dLayer::forward(const Var& input, ForwardContext&) {
  return conv3d(input, weights_, bias_, spec_);
}

void Conv3dLayer::collect(const std::string& prefix, StateRefs& out) {
  out.parameters.push_back({join(prefix, "weights"), &weights_, true});
  if (bias_) out.parameters.push_back({join(prefix, "bias"), &bias_, false});
}

NormLayer::NormLayer(NormKind kind, std::size_t features, NormSpec spec)
    : spec_(spec), features_(features) {
  spec_.kind = kind;
  if (!(spec_.epsilon > 0.0)) throw std::invalid_argument("norm epsilon must be positive");
  gamma_ = Var::parameter(Tensor::ones({features}));
  beta_ = Var::parameter(Tensor::zeros({features}));
  if (kind == NormKind::kBatch) stats_ = {Tensor::zeros({features}), Tensor::ones({features})};
}

std::string NormLayer::describe() const {
  return std::string(spec_.kind == NormKind::kBatch ? "batch_norm " : "layer_norm ") +
         std::to_string(features_);
}

Var NormLayer::forward(const Var& input, ForwardContext& ctx) {
  if (spec_.kind == NormKind::kLayer) return layer_norm(input, gamma_, beta_, spec_);
  return batch_norm(input, gamma_, beta_, stats_, spec_, ctx.mode);
}

void NormLayer::collect(const std::string& prefix, StateRefs& out) {
  out.parameters.push_back({join(prefix, "gamma"), &gamma_, false});
  out.parameters.push_back({join(prefix, "beta"), &beta_, false});
  if (spec_.kind == NormKind::kBatch) {
    out.buffers.push_back({join(prefix, "running_mean"), &stats_.mean});
    out.buffers.push_back({join(prefix, "running_variance"), &stats_.variance});
  }
}

std::string PoolLayer::describe() const {
  switch (spec_.kind) {
    case PoolKind::kGlobalAvg:
      return "global_avg_pool";
    case PoolKind::kMax:
    case PoolKind::kAvg:
      break;
  }
  return std::string(spec_.kind == PoolKind::kMax ? "max_pool " : "avg_pool ") +
         extents_to_string(spec_.window) + " stride " + extents_to_string(spec_.stride) + " " +
         padding_name(spec_.padding);
}

Shape PoolLayer::output_shape(const Shape& input) const {
  return without_batch(pool3d_output_shape(with_batch(input), spec_));
}

DenseLayer::DenseLayer(std::size_t in, std::size_t out, Activation activation, Init init,
                       Rng& rng)
    : in_(in), out_(out), activation_(activation) {
  if (in == 0 || out == 0) throw std::invalid_argument("dense layer needs positive sizes");
  weights_ = Var::parameter(init_normal({in, out}, in, init, rng));
  bias_ = Var::parameter(Tensor({out}));
}

std::string DenseLayer::describe() const {
  return "dense " + std::to_string(in_) + "->" + std::to_string(out_) +
         (activation_ == Activation::kRelu ? " relu" : " linear");
}

Shape DenseLayer::output_shape(const Shape& input) const {
  if (input != Shape{in_}) {
    throw ShapeError("dense expects (" + std::to_string(in_) + "), got " + shape_to_string(input));
  }
  return {out_};
}

Var DenseLayer::forward(const Var& input, ForwardContext&) {
  return dense(input, weights_, bias_, activation_);
}

void DenseLayer::collect(const std::string& prefix, StateRefs& out) {
  out.parameters.push_back({join(prefix, "weights"), &weights_, true});
  out.parameters.push_back({join(prefix, "bias"), &bias_, false});
}

DropoutLayer::DropoutLayer(double rate) : rate_(rate) {
  if (!(rate >= 0.0 && rate < 1.0)) {
    throw std::invalid_argument("dropout rate must lie in [0, 1), got " + std::to_string(rate));
  }
}

std::string DropoutLayer::describe() const {
  std::ostringstream os;
  os << "dropout " << rate_;
  return os.str();
}

Var DropoutLayer::forward(const Var& input, ForwardContext& ctx) {
  if (ctx.mode == Mode::kInference || rate_ == 0.0) return input;
  if (ctx.rng == nullptr) throw std::logic_error("training-mode dropout needs an rng");
  return dropout(input, {rate_, ctx.mode}, *ctx.rng);
}

Var FlattenLayer::forward(const Var& input, ForwardContext&) {
  return reshape(input, {input.shape()[0], input.numel() / input.shape()[0]});
}

Sequential& Sequential::add(std::string name, ModulePtr layer) {
  layers_.emplace_back(std::move(name), std::move(layer));
  return *this;
}

std::string Sequential::describe() const {
  std::string s = "[";
  for (std::size_t i = 0; i < layers_.size(); ++i) {
    if (i) s += "; ";
    s += layers_[i].first + ": " + layers_[i].second->describe();
  }
  return s + "]";
}

Shape Sequential::output_shape(const Shape& input) const {
  Shape s = input;
  for (const auto& [name, layer] : layers_) s = layer->output_shape(s);
  return s;
}

Var Sequential::forward(const Var& input, ForwardContext& ctx) {
  Var x = input;
  for (const auto& [name, layer] : layers_) x = layer->forward(x, ctx);
  return x;
}

void Sequential::collect(const std::string& prefix, StateRefs& out) {
  for (const auto& [name, layer] : layers_) layer->collect(join(prefix, name), out);
}

Branches::Branches(std::vector<NamedModule> branches) : branches_(std::move(branches)) {
  if (branches_.empty()) throw std::invalid_argument("branches need at least one member");
}

std::string Branches::describe() const {
  std::string s = "branches{";
  for (std::size_t i = 0; i < branches_.size(); ++i) {
    if (i) s += " | ";
    s += branches_[i].first + ": " + branches_[i].second->describe();
  }
  return s + "}";
}

Shape Branches::output_shape(const Shape& input) const {
  Shape out;
  std::size_t channels = 0;
  for (const auto& [name, branch] : branches_) {
    const Shape s = branch->output_shape(input);
    if (!out.empty() && !std::equal(s.begin(), s.end() - 1, out.begin())) {
      throw ShapeError("branch " + name + " output " + shape_to_string(s) +
                       " disagrees with " + shape_to_string(out));
    }
    out = s;
    channels += s.back();
  }
  out.back() = channels;
  return out;
}

Var Branches::forward(const Var& input, ForwardContext& ctx) {
  std::vector<Var> outs;
  outs.reserve(branches_.size());
  for (const auto& [name, branch] : branches_) outs.push_back(branch->forward(input, ctx));
  return concat(outs, input.shape().size() - 1);
}

void Branches::collect(const std::string& prefix, StateRefs& out) {
  for (const auto& [name, branch] : branches_) branch->collect(join(prefix, name), out);
}

RecurrentLayer::RecurrentLayer(CellKind cell, std::size_t input_size, std::size_t hidden_size,
                               bool normalize_hidden, Rng& rng)
    : cell_(cell),
      input_size_(input_size),
      hidden_size_(hidden_size),
      normalize_hidden_(normalize_hidden) {
  const std::size_t g = gate_count(cell) * hidden_size;
  params_.input_weights = Var::parameter(init_normal({input_size, g}, input_size, Init::kLecun, rng));
  params_.recurrent_weights =
      Var::parameter(init_normal({hidden_size, g}, hidden_size, Init::kLecun, rng));
  Tensor bias({g});
  if (cell == CellKind::kLstm) {
    for (std::size_t j = hidden_size; j < 2 * hidden_size; ++j) bias[j] = 1.0;  // forget gate
  }
  params_.bias = Var::parameter(std::move(bias));
  if (normalize_hidden) {
    ln_gamma_ = Var::parameter(Tensor::ones({hidden_size}));
    ln_beta_ = Var::parameter(Tensor::zeros({hidden_size}));
  }
}

std::string RecurrentLayer::describe() const {
  return std::string(cell_ == CellKind::kGru ? "gru " : "lstm ") + std::to_string(input_size_) +
         "->" + std::to_string(hidden_size_) + (normalize_hidden_ ? " layer_norm_hidden" : "");
}

Shape RecurrentLayer::output_shape(const Shape& input) const {
  if (input.size() != 2 || input[1] != input_size_) {
    throw ShapeError("recurrent layer expects (T x " + std::to_string(input_size_) + "), got " +
                     shape_to_string(input));
  }
  return {hidden_size_};
}

Var RecurrentLayer::forward(const Var& input, ForwardContext&) {
  const Shape& s = input.shape();
  if (s.size() != 3 || s[2] != input_size_) {
    throw ShapeError("recurrent layer expects batch x T x " + std::to_string(input_size_) +
                     ", got " + shape_to_string(s));
  }
  const std::size_t batch = s[0];
  RecurrentState state = initial_state(cell_, batch, hidden_size_);
  for (std::size_t t = 0; t < s[1]; ++t) {
    const Var x = reshape(slice(input, 1, t, t + 1), {batch, input_size_});
    state = recurrent_step(cell_, x, state, params_);
    if (normalize_hidden_) {
      state.hidden = layer_norm(state.hidden, ln_gamma_, ln_beta_, {NormKind::kLayer});
    }
  }
  return state.hidden;
}

void RecurrentLayer::collect(const std::string& prefix, StateRefs& out) {
  out.parameters.push_back({join(prefix, "input_weights"), &params_.input_weights, true});
  out.parameters.push_back({join(prefix, "recurrent_weights"), &params_.recurrent_weights, true});
  out.parameters.push_back({join(prefix, "bias"), &params_.bias, false});
  if (normalize_hidden_) {
    out.parameters.push_back({join(prefix, "hidden_norm/gamma"), &ln_gamma_, false});
    out.parameters.push_back({join(prefix, "hidden_norm/beta"), &ln_beta_, false});
  }
}

PerFrameLayer::PerFrameLayer(ModulePtr frame_model, Shape frame_shape)
    : frame_model_(std::move(frame_model)), frame_shape_(std::move(frame_shape)) {
  if (frame_shape_.size() != 3) throw ShapeError("frame shape must be H x W x C");
}

std::string PerFrameLayer::describe() const {
  return "per_frame " + shape_to_string(frame_shape_) + " " + frame_model_->describe();
}

Shape PerFrameLayer::output_shape(const Shape& input) const {
  if (input.size() != 4 || !std::equal(frame_shape_.begin(), frame_shape_.end(), input.begin() + 1)) {
    throw ShapeError("per-frame layer expects T x " + shape_to_string(frame_shape_) + ", got " +
                     shape_to_string(input));
  }
  Shape frame{1};
  frame.insert(frame.end(), frame_shape_.begin(), frame_shape_.end());
  const Shape features = frame_model_->output_shape(frame);
  if (features.size() != 1) {
    throw ShapeError("frame model must produce a feature vector, got " +
                     shape_to_string(features));
  }
  return {input[0], features[0]};
}

Var PerFrameLayer::forward(const Var& input, ForwardContext& ctx) {
  return apply_per_frame([&](const Var& frames) { return frame_model_->forward(frames, ctx); },
                         frame_shape_, input);
}

void PerFrameLayer::collect(const std::string& prefix, StateRefs& out) {
  frame_model_->collect(join(prefix, "frame"), out);
}

std::shared_ptr<Sequential> conv_block(const ConvSpec& spec, NormKind norm, Rng& rng) {
  auto block = std::make_shared<Sequential>();
  block->add("conv", std::make_shared<Conv3dLayer>(spec, false, Init::kHe, rng));
  block->add("norm", std::make_shared<NormLayer>(norm, spec.out_channels));
  block->add("relu", std::make_shared<ReluLayer>());
  return block;
}

}  // namespace echoreg::layers

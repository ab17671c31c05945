// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <memory>
#include <string>
#include <utility>
#include <vector>

#include "echoreg/layers.hpp"

namespace echoreg::layers {

struct ForwardContext {
  Mode mode = Mode::kInference;
  /// Required when mode is kTrain and any dropout rate is positive.
  Rng* rng = nullptr;
};

struct ParameterRef {
  std::string name;
  Var* var;
  /// Weights take part in L1/L2 penalties; biases and norm affines do not.
  bool regularized;
};

struct BufferRef {
  std::string name;
  Tensor* tensor;
};

struct StateRefs {
  std::vector<ParameterRef> parameters;
  std::vector<BufferRef> buffers;
};

/// A layer with owned state. Shapes passed to output_shape exclude the batch
/// axis; forward receives and returns batched values.
class Module {
 public:
  virtual ~Module() = default;
  virtual std::string describe() const = 0;
  virtual Shape output_shape(const Shape& input) const = 0;
  virtual Var forward(const Var& input, ForwardContext& ctx) = 0;
  virtual void collect(const std::string& prefix, StateRefs& out);
};

using ModulePtr = std::shared_ptr<Module>;

enum class Init {
  kHe,     // N(0, 2 / fan_in), for layers followed by ReLU
  kLecun,  // N(0, 1 / fan_in), for linear outputs
};

class Conv3dLayer : public Module {
 public:
  Conv3dLayer(const ConvSpec& spec, bool with_bias, Init init, Rng& rng);
  std::string describe() const override;
  Shape output_shape(const Shape& input) const override;
  Var forward(const Var& input, ForwardContext& ctx) override;
  void collect(const std::string& prefix, StateRefs& out) override;
  const ConvSpec& spec() const { return spec_; }

 private:
  ConvSpec spec_;
  Var weights_;
  Var bias_;
};

class NormLayer : public Module {
 public:
  NormLayer(NormKind kind, std::size_t features, NormSpec spec = {});
  std::string describe() const override;
  Shape output_shape(const Shape& input) const override { return input; }
  Var forward(const Var& input, ForwardContext& ctx) override;
  void collect(const std::string& prefix, StateRefs& out) override;

 private:
  NormSpec spec_;
  std::size_t features_;
  Var gamma_;
  Var beta_;
  RunningStats stats_;
};

class ReluLayer : public Module {
 public:
  std::string describe() const override { return "relu"; }
  Shape output_shape(const Shape& input) const override { return input; }
  Var forward(const Var& input, ForwardContext&) override { return relu(input); }
};

class PoolLayer : public Module {
 public:
  explicit PoolLayer(const PoolSpec& spec) : spec_(spec) {}
  std::string describe() const override;
  Shape output_shape(const Shape& input) const override;
  Var forward(const Var& input, ForwardContext&) override { return pool3d(input, spec_); }

 private:
  PoolSpec spec_;
};

class DenseLayer : public Module {
 public:
  DenseLayer(std::size_t in, std::size_t out, Activation activation, Init init, Rng& rng);
  std::string describe() const override;
  Shape output_shape(const Shape& input) const override;
  Var forward(const Var& input, ForwardContext& ctx) override;
  void collect(const std::string& prefix, StateRefs& out) override;

 private:
  std::size_t in_;
  std::size_t out_;
  Activation activation_;
  Var weights_;
  Var bias_;
};

class DropoutLayer : public Module {
 public:
  explicit DropoutLayer(double rate);
  std::string describe() const override;
  Shape output_shape(const Shape& input) const override { return input; }
  Var forward(const Var& input, ForwardContext& ctx) override;
  double rate() const { return rate_; }

 private:
  double rate_;
};

class FlattenLayer : public Module {
 public:
  std::string describe() const override { return "flatten"; }
  Shape output_shape(const Shape& input) const override { return {shape_numel(input)}; }
  Var forward(const Var& input, ForwardContext&) override;
};

using NamedModule = std::pair<std::string, ModulePtr>;

class Sequential : public Module {
 public:
  Sequential() = default;
  explicit Sequential(std::vector<NamedModule> layers) : layers_(std::move(layers)) {}
  Sequential& add(std::string name, ModulePtr layer);
  std::string describe() const override;
  Shape output_shape(const Shape& input) const override;
  Var forward(const Var& input, ForwardContext& ctx) override;
  void collect(const std::string& prefix, StateRefs& out) override;
  const std::vector<NamedModule>& layers() const { return layers_; }

 private:
  std::vector<NamedModule> layers_;
};

/// Parallel branches over one input, concatenated along the channel axis.
class Branches : public Module {
 public:
  explicit Branches(std::vector<NamedModule> branches);
  std::string describe() const override;
  Shape output_shape(const Shape& input) const override;
  Var forward(const Var& input, ForwardContext& ctx) override;
  void collect(const std::string& prefix, StateRefs& out) override;
  const std::vector<NamedModule>& branches() const { return branches_; }

 private:
  std::vector<NamedModule> branches_;
};

/// batch x T x D sequence to the final hidden state batch x H.
class RecurrentLayer : public Module {
 public:
  RecurrentLayer(CellKind cell, std::size_t input_size, std::size_t hidden_size,
                 bool normalize_hidden, Rng& rng);
  std::string describe() const override;
  Shape output_shape(const Shape& input) const override;
  Var forward(const Var& input, ForwardContext& ctx) override;
  void collect(const std::string& prefix, StateRefs& out) override;

 private:
  CellKind cell_;
  std::size_t input_size_;
  std::size_t hidden_size_;
  bool normalize_hidden_;
  RecurrentParams params_;
  Var ln_gamma_;
  Var ln_beta_;
};

/// batch x T x H x W x C clip to a batch x T x D feature sequence through a
/// frame model that sees frames as 1 x H x W x C volumes.
class PerFrameLayer : public Module {
 public:
  PerFrameLayer(ModulePtr frame_model, Shape frame_shape);
  std::string describe() const override;
  Shape output_shape(const Shape& input) const override;
  Var forward(const Var& input, ForwardContext& ctx) override;
  void collect(const std::string& prefix, StateRefs& out) override;

 private:
  ModulePtr frame_model_;
  Shape frame_shape_;
};

/// conv (no bias) -> norm -> ReLU.
std::shared_ptr<Sequential> conv_block(const ConvSpec& spec, NormKind norm, Rng& rng);

std::string extents_to_string(const Extents3& e);

}  // namespace echoreg::layers

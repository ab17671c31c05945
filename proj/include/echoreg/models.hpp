// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "echoreg/errors.hpp"
#include "echoreg/modules.hpp"

namespace echoreg::models {

enum class Family {
  kI3dOriginal,
  kI3dMini,
  kTwoStream,
  kFusionCombination,
  kFusionNewCombination,
  kFusionDualInput,
  kFusionDualTruncated,
  kFusionSingleInput,
  kCnnRnnScratch,
};

/// kMixed: batch norm in the convolutional extractor, layer norm on the
/// recurrent hidden state. Recurrent families only.
enum class NormChoice { kBatch, kLayer, kMixed };

enum class Conv2Kernel { k1x1x1, k3x1x1, k3x3x3, kDouble3x3x3 };

/// OG: dropout, flatten, dense. A: GAP, dropout, dense. B: dropout, 1x1x1
/// conv, GAP. C: GAP, dense + ReLU, dropout, dense.
enum class HeadVariant { kOG, kA, kB, kC };

using layers::CellKind;

inline constexpr Family kAllFamilies[] = {
    Family::kI3dOriginal,          Family::kI3dMini,           Family::kTwoStream,
    Family::kFusionCombination,    Family::kFusionNewCombination, Family::kFusionDualInput,
    Family::kFusionDualTruncated,  Family::kFusionSingleInput, Family::kCnnRnnScratch,
};

std::string to_string(Family f);
std::string to_string(NormChoice n);
std::string to_string(Conv2Kernel k);
std::string to_string(HeadVariant h);
std::string to_string(CellKind c);
// Parsers throw ConfigError(key, ...) listing the accepted spellings.
Family parse_family(std::string_view s, const std::string& key = "family");
NormChoice parse_norm(std::string_view s, const std::string& key = "norm");
Conv2Kernel parse_conv2_kernel(std::string_view s, const std::string& key = "conv2_kernel");
HeadVariant parse_head(std::string_view s, const std::string& key = "head");
CellKind parse_rnn_cell(std::string_view s, const std::string& key = "rnn_cell");

bool has_i3d_stem(Family f);
bool is_recurrent(Family f);

struct ModelConfig {
  Family family = Family::kI3dMini;
  NormChoice norm = NormChoice::kBatch;
  Conv2Kernel conv2_kernel = Conv2Kernel::k1x1x1;
  HeadVariant head = HeadVariant::kA;
  CellKind rnn_cell = CellKind::kGru;
  /// Scales every channel width; in (0, 1].
  double width_multiplier = 1.0;
  double dropout_rate = 0.5;
  std::size_t rnn_hidden = 64;
  std::size_t frames = 28;
  std::size_t height = 112;
  std::size_t width = 112;

  friend bool operator==(const ModelConfig&, const ModelConfig&) = default;
};

/// Throws ConfigError naming the violated invariant.
void validate(const ModelConfig& config);

/// Channel count c scaled by the width multiplier, at least 1.
std::size_t scaled_width(std::size_t c, double width_multiplier);

enum class InputKind { kFrames, kFrameDifferences, kTriplicatedFrames };

struct InputDecl {
  std::string name;
  InputKind kind;
  Shape shape;  // per sample: T x H x W x C
};

enum class NodeKind {
  kModule,  // one input through a module
  kConcat,  // channel concatenation; rank-5 inputs are cropped to the shortest T
  kSplit,   // channel range [split_begin, split_end)
};

struct GraphNode {
  std::string name;
  NodeKind kind = NodeKind::kModule;
  std::vector<std::string> inputs;
  layers::ModulePtr module;
  std::size_t split_begin = 0;
  std::size_t split_end = 0;

  std::string describe() const;
};

/// Widths of the four inception branches: 1x1x1; reduce then 3x3x3; reduce
/// then two 3x3x3; max-pool then 1x1x1 projection.
struct InceptionWidths {
  std::size_t a, b_reduce, b, c_reduce, c, d;
  std::size_t total() const { return a + b + c + d; }
};

inline constexpr InceptionWidths kInception3{64, 96, 128, 16, 32, 32};
inline constexpr InceptionWidths kInception4{192, 96, 208, 16, 48, 64};
inline constexpr InceptionWidths kInception5{256, 160, 320, 32, 128, 128};

/// Stem: conv_a 3x3x3 -> max-pool 1x2x2 -> conv2 -> conv_b 3x3x3 -> max-pool
/// 1x2x2. `planar` replaces every temporal kernel extent with 1.
std::shared_ptr<layers::Sequential> build_stem(layers::NormKind norm, Conv2Kernel conv2,
                                               double width_multiplier, std::size_t in_channels,
                                               bool planar, Rng& rng);

std::shared_ptr<layers::Branches> build_inception(std::size_t in_channels,
                                                  const InceptionWidths& widths,
                                                  double width_multiplier, layers::NormKind norm,
                                                  bool planar, Rng& rng);

/// Regression head over a per-sample feature map T x H x W x C; output (1).
std::shared_ptr<layers::Sequential> build_head(HeadVariant variant, const Shape& features,
                                               double dropout_rate, double width_multiplier,
                                               Rng& rng);

/// Move-only: copies would alias the same parameter storage.
class Model {
 public:
  Model() = default;
  Model(Model&&) = default;
  Model& operator=(Model&&) = default;
  Model(const Model&) = delete;
  Model& operator=(const Model&) = delete;

  const ModelConfig& config() const { return config_; }
  const std::vector<InputDecl>& inputs() const { return inputs_; }
  const std::vector<GraphNode>& nodes() const { return nodes_; }
  std::vector<std::string> node_names() const;
  const GraphNode& node(std::string_view name) const;

  /// Per-sample output shape of every node, in node order.
  std::vector<Shape> propagate_shapes() const;

  /// Parameters and buffers; a module reached through several nodes is
  /// listed once, under its first node.
  layers::StateRefs state();

  /// Final prediction = shift + scale * raw output.
  void set_output_affine(double shift, double scale);
  double output_shift() const { return output_shift_[0]; }
  double output_scale() const { return output_scale_[0]; }

 private:
  friend Model build_model(const ModelConfig& config, std::uint64_t init_seed);
  friend Var model_forward(Model& model, std::span<const Var> inputs,
                           layers::ForwardContext& ctx);
  ModelConfig config_;
  std::vector<InputDecl> inputs_;
  std::vector<GraphNode> nodes_;
  Tensor output_shift_ = Tensor::zeros({1});
  Tensor output_scale_ = Tensor::ones({1});
};

Model build_model(const ModelConfig& config, std::uint64_t init_seed = 0);

/// Inputs in declaration order, each batch x T x H x W x C. Returns batch x 1.
/// Throws NumericError naming the first node that produced a non-finite value.
Var model_forward(Model& model, std::span<const Var> inputs, layers::ForwardContext& ctx);

/// Trainable parameter elements, shared modules counted once.
std::size_t count_params(Model& model);

}  // namespace echoreg::models

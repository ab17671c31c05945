// SPDX-License-Identifier: Apache-2.0
#include <stdexcept>

#include "echoreg/models.hpp"

namespace echoreg::models {

using layers::ConvSpec;
using layers::Extents3;
using layers::NormKind;
using layers::PoolKind;
using layers::PoolLayer;
using layers::Sequential;

namespace {

Extents3 cube(bool planar) { return planar ? Extents3{1, 3, 3} : Extents3{3, 3, 3}; }

ConvSpec same_conv(Extents3 kernel, std::size_t in, std::size_t out) {
  return {kernel, in, out, {1, 1, 1}, Padding::kSame};
}

layers::ModulePtr spatial_pool() {
  return std::make_shared<PoolLayer>(
      layers::PoolSpec{PoolKind::kMax, {1, 2, 2}, {1, 2, 2}, Padding::kSame});
}

layers::ModulePtr linear_dense(std::size_t in, Rng& rng) {
  return std::make_shared<layers::DenseLayer>(in, 1, layers::Activation::kLinear,
                                              layers::Init::kLecun, rng);
}

layers::ModulePtr global_pool() {
  return std::make_shared<PoolLayer>(layers::PoolSpec{PoolKind::kGlobalAvg});
}

// Two 3x3x3 convs of 128 channels applied per path before fusion.
std::shared_ptr<Sequential> task_convs(std::size_t in, double w, NormKind norm, Rng& rng) {
  const std::size_t c = scaled_width(128, w);
  auto s = std::make_shared<Sequential>();
  s->add("conv_1", layers::conv_block(same_conv({3, 3, 3}, in, c), norm, rng));
  s->add("conv_2", layers::conv_block(same_conv({3, 3, 3}, c, c), norm, rng));
  return s;
}

// Three conv/pool blocks of 32/64/128 channels, GAP, dropout and a scalar.
std::shared_ptr<Sequential> plain_stream(double w, NormKind norm, double dropout, Rng& rng) {
  auto s = std::make_shared<Sequential>();
  std::size_t in = 1;
  const std::size_t widths[] = {32, 64, 128};
  for (std::size_t i = 0; i < 3; ++i) {
    const std::size_t c = scaled_width(widths[i], w);
    const std::string id = std::to_string(i + 1);
    s->add("block" + id, layers::conv_block(same_conv({3, 3, 3}, in, c), norm, rng));
    s->add("pool" + id, spatial_pool());
    in = c;
  }
  s->add("gap", global_pool());
  s->add("dropout", std::make_shared<layers::DropoutLayer>(dropout));
  s->add("dense", linear_dense(in, rng));
  return s;
}

std::shared_ptr<Sequential> downsampled_inception(std::size_t in, const InceptionWidths& widths,
                                                  double w, NormKind norm, Rng& rng) {
  auto s = std::make_shared<Sequential>();
  s->add("pool", std::make_shared<PoolLayer>(layers::PoolSpec{
                     PoolKind::kMax, {2, 2, 2}, {2, 2, 2}, Padding::kSame}));
  s->add("inception", build_inception(in, widths, w, norm, false, rng));
  return s;
}

class GraphBuilder {
 public:
  GraphBuilder(std::vector<GraphNode>& nodes, std::vector<InputDecl>& inputs)
      : nodes_(nodes), inputs_(inputs) {}

  std::string input(std::string name, InputKind kind, Shape shape) {
    inputs_.push_back({name, kind, std::move(shape)});
    return name;
  }
  std::string apply(std::string name, const std::string& from, layers::ModulePtr module) {
    GraphNode n;
    n.name = name;
    n.inputs = {from};
    n.module = std::move(module);
    nodes_.push_back(std::move(n));
    return name;
  }
  std::string concat(std::string name, std::vector<std::string> from) {
    GraphNode n;
    n.name = name;
    n.kind = NodeKind::kConcat;
    n.inputs = std::move(from);
    nodes_.push_back(std::move(n));
    return name;
  }
  std::string split(std::string name, const std::string& from, std::size_t begin,
                    std::size_t end) {
    GraphNode n;
    n.name = name;
    n.kind = NodeKind::kSplit;
    n.inputs = {from};
    n.split_begin = begin;
    n.split_end = end;
    nodes_.push_back(std::move(n));
    return name;
  }

 private:
  std::vector<GraphNode>& nodes_;
  std::vector<InputDecl>& inputs_;
};

}  // namespace

std::shared_ptr<Sequential> build_stem(NormKind norm, Conv2Kernel conv2, double w,
                                       std::size_t in_channels, bool planar, Rng& rng) {
  if (planar && conv2 != Conv2Kernel::k1x1x1) {
    throw ConfigError("conv2_kernel", "planar stems only support the 1x1x1 conv2 kernel");
  }
  const std::size_t c64 = scaled_width(64, w);
  const std::size_t c192 = scaled_width(192, w);
  auto stem = std::make_shared<Sequential>();
  stem->add("conv_a", layers::conv_block(same_conv(cube(planar), in_channels, c64), norm, rng));
  stem->add("pool_1", spatial_pool());
  switch (conv2) {
    case Conv2Kernel::k1x1x1:
      stem->add("conv2", layers::conv_block(same_conv({1, 1, 1}, c64, c64), norm, rng));
      break;
    case Conv2Kernel::k3x1x1:
      stem->add("conv2", layers::conv_block(same_conv({3, 1, 1}, c64, c64), norm, rng));
      break;
    case Conv2Kernel::k3x3x3:
      stem->add("conv2", layers::conv_block(same_conv({3, 3, 3}, c64, c64), norm, rng));
      break;
    case Conv2Kernel::kDouble3x3x3:
      stem->add("conv2_a", layers::conv_block(same_conv({3, 3, 3}, c64, c64), norm, rng));
      stem->add("conv2_b", layers::conv_block(same_conv({3, 3, 3}, c64, c64), norm, rng));
      break;
  }
  stem->add("conv_b", layers::conv_block(same_conv(cube(planar), c64, c192), norm, rng));
  stem->add("pool_2", spatial_pool());
  return stem;
}

std::shared_ptr<layers::Branches> build_inception(std::size_t in, const InceptionWidths& widths,
                                                  double w, NormKind norm, bool planar,
                                                  Rng& rng) {
  const InceptionWidths s{scaled_width(widths.a, w),        scaled_width(widths.b_reduce, w),
                          scaled_width(widths.b, w),        scaled_width(widths.c_reduce, w),
                          scaled_width(widths.c, w),        scaled_width(widths.d, w)};
  const Extents3 k = cube(planar);
  auto a = std::make_shared<Sequential>();
  a->add("conv", layers::conv_block(same_conv({1, 1, 1}, in, s.a), norm, rng));
  auto b = std::make_shared<Sequential>();
  b->add("reduce", layers::conv_block(same_conv({1, 1, 1}, in, s.b_reduce), norm, rng));
  b->add("conv", layers::conv_block(same_conv(k, s.b_reduce, s.b), norm, rng));
  auto c = std::make_shared<Sequential>();
  c->add("reduce", layers::conv_block(same_conv({1, 1, 1}, in, s.c_reduce), norm, rng));
  c->add("conv_1", layers::conv_block(same_conv(k, s.c_reduce, s.c), norm, rng));
  c->add("conv_2", layers::conv_block(same_conv(k, s.c, s.c), norm, rng));
  auto d = std::make_shared<Sequential>();
  d->add("pool", std::make_shared<PoolLayer>(
                     layers::PoolSpec{PoolKind::kMax, k, {1, 1, 1}, Padding::kSame}));
  d->add("project", layers::conv_block(same_conv({1, 1, 1}, in, s.d), norm, rng));
  return std::make_shared<layers::Branches>(std::vector<layers::NamedModule>{
      {"branch_a", a}, {"branch_b", b}, {"branch_c", c}, {"branch_d", d}});
}

std::shared_ptr<Sequential> build_head(HeadVariant variant, const Shape& features,
                                       double dropout, double w, Rng& rng) {
  if (features.size() != 4) {
    throw ShapeError("regression heads expect a T x H x W x C feature map, got " +
                     shape_to_string(features));
  }
  const std::size_t channels = features[3];
  auto head = std::make_shared<Sequential>();
  const auto drop = [&] { return std::make_shared<layers::DropoutLayer>(dropout); };
  switch (variant) {
    case HeadVariant::kOG:
      head->add("dropout", drop());
      head->add("flatten", std::make_shared<layers::FlattenLayer>());
      head->add("dense", linear_dense(shape_numel(features), rng));
      break;
    case HeadVariant::kA:
      head->add("gap", global_pool());
      head->add("dropout", drop());
      head->add("dense", linear_dense(channels, rng));
      break;
    case HeadVariant::kB:
      head->add("dropout", drop());
      head->add("conv", std::make_shared<layers::Conv3dLayer>(
                            same_conv({1, 1, 1}, channels, 1), true, layers::Init::kLecun, rng));
      head->add("gap", global_pool());
      break;
    case HeadVariant::kC: {
      const std::size_t hidden = scaled_width(128, w);
      head->add("gap", global_pool());
      head->add("hidden", std::make_shared<layers::DenseLayer>(
                              channels, hidden, layers::Activation::kRelu, layers::Init::kHe, rng));
      head->add("dropout", drop());
      head->add("dense", linear_dense(hidden, rng));
      break;
    }
  }
  return head;
}

Model build_model(const ModelConfig& config, std::uint64_t init_seed) {
  validate(config);
  Model model;
  model.config_ = config;
  Rng rng(init_seed);
  GraphBuilder g(model.nodes_, model.inputs_);
  const double w = config.width_multiplier;
  const NormKind norm = config.norm == NormChoice::kLayer ? NormKind::kLayer : NormKind::kBatch;
  const std::size_t T = config.frames, H = config.height, W = config.width;
  const Shape frame_shape{T, H, W, 1};
  const Shape diff_shape{T - 1, H, W, 1};
  const std::size_t im3_out = InceptionWidths{scaled_width(kInception3.a, w), 0,
                                              scaled_width(kInception3.b, w), 0,
                                              scaled_width(kInception3.c, w),
                                              scaled_width(kInception3.d, w)}
                                  .total();
  const std::size_t stem_out = scaled_width(192, w);

  // Output shape of the node most recently added.
  const auto last_shape = [&model]() { return model.propagate_shapes().back(); };
  const auto backbone = [&](const std::string& prefix, const std::string& from) {
    const std::string s = g.apply(prefix + "stem", from,
                                  build_stem(norm, config.conv2_kernel, w, 1, false, rng));
    return g.apply(prefix + "im3", s, build_inception(stem_out, kInception3, w, norm, false, rng));
  };
  const auto head_on = [&](const std::string& from) {
    return g.apply("head", from, build_head(config.head, last_shape(), config.dropout_rate, w, rng));
  };

  switch (config.family) {
    case Family::kI3dMini: {
      const std::string x = g.input("frames", InputKind::kFrames, frame_shape);
      head_on(backbone("", x));
      break;
    }
    case Family::kI3dOriginal: {
      const std::string x = g.input("frames", InputKind::kFrames, frame_shape);
      const std::string im3 = backbone("", x);
      const std::size_t im4_out = scaled_width(kInception4.a, w) + scaled_width(kInception4.b, w) +
                                  scaled_width(kInception4.c, w) + scaled_width(kInception4.d, w);
      const std::string im4 =
          g.apply("im4", im3, downsampled_inception(im3_out, kInception4, w, norm, rng));
      const std::string im5 =
          g.apply("im5", im4, downsampled_inception(im4_out, kInception5, w, norm, rng));
      head_on(im5);
      break;
    }
    case Family::kTwoStream: {
      const std::string x = g.input("frames", InputKind::kFrames, frame_shape);
      const std::string d = g.input("frame_differences", InputKind::kFrameDifferences, diff_shape);
      const std::string a = g.apply("spatial_stream", x, plain_stream(w, norm, config.dropout_rate, rng));
      const std::string b = g.apply("temporal_stream", d, plain_stream(w, norm, config.dropout_rate, rng));
      g.apply("head", g.concat("fuse", {a, b}), linear_dense(2, rng));
      break;
    }
    case Family::kFusionCombination: {
      const std::string x = g.input("frames", InputKind::kFrames, frame_shape);
      const std::string d = g.input("frame_differences", InputKind::kFrameDifferences, diff_shape);
      std::string outs[2];
      const std::string prefixes[] = {"spatial_", "temporal_"};
      const std::string sources[] = {x, d};
      for (int i = 0; i < 2; ++i) {
        const std::string im3 = backbone(prefixes[i], sources[i]);
        outs[i] = g.apply(prefixes[i] + "head", im3,
                          build_head(config.head, last_shape(), config.dropout_rate, w, rng));
      }
      g.apply("head", g.concat("fuse", {outs[0], outs[1]}), linear_dense(2, rng));
      break;
    }
    case Family::kFusionNewCombination: {
      const std::string x = g.input("frames", InputKind::kFrames, frame_shape);
      const std::string d = g.input("frame_differences", InputKind::kFrameDifferences, diff_shape);
      const std::string a = backbone("spatial_", x);
      const std::string b = backbone("temporal_", d);
      head_on(g.concat("fuse", {a, b}));
      break;
    }
    case Family::kFusionDualInput:
    case Family::kFusionDualTruncated: {
      const std::string x = g.input("frames", InputKind::kFrames, frame_shape);
      const std::string d = g.input("frame_differences", InputKind::kFrameDifferences, diff_shape);
      auto stem = build_stem(norm, config.conv2_kernel, w, 1, false, rng);
      auto im3 = build_inception(stem_out, kInception3, w, norm, false, rng);
      // One backbone instance serves both paths.
      std::string a = g.apply("spatial_im3", g.apply("spatial_stem", x, stem), im3);
      std::string b = g.apply("temporal_im3", g.apply("temporal_stem", d, stem), im3);
      if (config.family == Family::kFusionDualInput) {
        a = g.apply("spatial_task", a, task_convs(im3_out, w, norm, rng));
        b = g.apply("temporal_task", b, task_convs(im3_out, w, norm, rng));
      }
      head_on(g.concat("fuse", {a, b}));
      break;
    }
    case Family::kFusionSingleInput: {
      const std::string x = g.input("frames", InputKind::kFrames, frame_shape);
      const std::string features = backbone("", x);
      const std::size_t half = im3_out / 2;
      if (half == 0) throw ConfigError("width_multiplier", "too small to split feature channels");
      const std::string a = g.apply("task_a", g.split("split_a", features, 0, half),
                                    task_convs(half, w, norm, rng));
      const std::string b = g.apply("task_b", g.split("split_b", features, half, im3_out),
                                    task_convs(im3_out - half, w, norm, rng));
      head_on(g.concat("fuse", {a, b}));
      break;
    }
    case Family::kCnnRnnScratch: {
      const std::string x =
          g.input("frames_rgb", InputKind::kTriplicatedFrames, Shape{T, H, W, 3});
      auto extractor = std::make_shared<Sequential>();
      extractor->add("stem", build_stem(norm, Conv2Kernel::k1x1x1, w, 3, true, rng));
      extractor->add("im3", build_inception(stem_out, kInception3, w, norm, true, rng));
      extractor->add("gap", global_pool());
      const std::string f = g.apply(
          "frame_features", x, std::make_shared<layers::PerFrameLayer>(extractor, Shape{H, W, 3}));
      const std::string r = g.apply(
          "rnn", f,
          std::make_shared<layers::RecurrentLayer>(config.rnn_cell, im3_out, config.rnn_hidden,
                                                   config.norm == NormChoice::kMixed, rng));
      auto head = std::make_shared<Sequential>();
      head->add("dropout", std::make_shared<layers::DropoutLayer>(config.dropout_rate));
      head->add("dense", linear_dense(config.rnn_hidden, rng));
      g.apply("head", r, head);
      break;
    }
  }
  const Shape out = last_shape();
  if (out != Shape{1}) {
    throw std::logic_error("model output must be one scalar per sample, got " +
                           shape_to_string(out));
  }
  return model;
}

}  // namespace echoreg::models

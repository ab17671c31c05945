// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <array>
#include <cstddef>
#include <functional>

#include "echoreg/autograd.hpp"
#include "echoreg/conv_geometry.hpp"
#include "echoreg/rng.hpp"

namespace echoreg::layers {

enum class Mode { kTrain, kInference };

using Extents3 = std::array<std::size_t, 3>;

/// 3D convolution (cross-correlation, no kernel flip) over
/// batch x T x H x W x C inputs. Weights are laid out F_T x F_H x F_W x C x K.
struct ConvSpec {
  Extents3 kernel{1, 1, 1};
  std::size_t in_channels = 1;
  std::size_t out_channels = 1;
  Extents3 stride{1, 1, 1};
  Padding padding = Padding::kSame;

  std::size_t weight_count() const {
    return kernel[0] * kernel[1] * kernel[2] * in_channels * out_channels;
  }
  Shape weight_shape() const {
    return {kernel[0], kernel[1], kernel[2], in_channels, out_channels};
  }
};

/// Output shape of conv3d for a batch x T x H x W x C input.
Shape conv3d_output_shape(const Shape& input, const ConvSpec& spec);

/// `bias` may be an empty Var for a bias-free convolution.
Var conv3d(const Var& input, const Var& weights, const Var& bias, const ConvSpec& spec);

enum class PoolKind { kMax, kAvg, kGlobalAvg };

struct PoolSpec {
  PoolKind kind = PoolKind::kMax;
  Extents3 window{2, 2, 2};
  Extents3 stride{2, 2, 2};
  Padding padding = Padding::kValid;
};

/// Max/avg pooling keeps rank 5; global average pooling returns batch x C.
/// Padded positions never win a max and are excluded from averages.
Shape pool3d_output_shape(const Shape& input, const PoolSpec& spec);
Var pool3d(const Var& input, const PoolSpec& spec);

enum class NormKind { kBatch, kLayer };

struct NormSpec {
  NormKind kind = NormKind::kBatch;
  double epsilon = 1e-5;
  /// running = momentum * running + (1 - momentum) * batch statistic.
  double momentum = 0.9;
};

struct RunningStats {
  Tensor mean;
  Tensor variance;
};

/// Per-feature (last axis) normalization over all other axes using batch
/// statistics in training mode (and updating `stats`), running statistics in
/// inference mode.
Var batch_norm(const Var& input, const Var& gamma, const Var& beta, RunningStats& stats,
               const NormSpec& spec, Mode mode);

/// Per-sample normalization over all non-batch axes; gamma/beta per feature.
Var layer_norm(const Var& input, const Var& gamma, const Var& beta, const NormSpec& spec);

enum class Activation { kLinear, kRelu };

/// batch x D times D x U plus bias U.
Var dense(const Var& input, const Var& weights, const Var& bias, Activation activation);

struct DropoutSpec {
  double rate = 0.5;
  Mode mode = Mode::kInference;
};

/// Inverted dropout; identity in inference mode or at rate 0.
Var dropout(const Var& input, const DropoutSpec& spec, Rng& rng);

enum class CellKind { kGru, kLstm };

/// Fused gate parameters. LSTM gate order: input, forget, candidate, output.
/// GRU gate order: update, reset, candidate.
struct RecurrentParams {
  Var input_weights;      // D x G*H
  Var recurrent_weights;  // H x G*H
  Var bias;               // G*H
};

std::size_t gate_count(CellKind cell);

struct RecurrentState {
  Var hidden;  // batch x H, also the step output
  Var cell;    // batch x H, LSTM only
};

/// Zero hidden (and cell) state for a batch.
RecurrentState initial_state(CellKind cell, std::size_t batch, std::size_t hidden);

RecurrentState recurrent_step(CellKind cell, const Var& input, const RecurrentState& previous,
                              const RecurrentParams& params);

/// Runs `frame_model` on every frame of a batch x T x H x W x C clip (frames
/// presented as (batch*T) x 1 x H x W x C) and returns batch x T x D.
Var apply_per_frame(const std::function<Var(const Var&)>& frame_model, const Shape& frame_shape,
                    const Var& clip);

}  // namespace echoreg::layers

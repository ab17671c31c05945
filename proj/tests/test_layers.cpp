// SPDX-License-Identifier: Apache-2.0
#include <gtest/gtest.h>

#include <cmath>

#include "echoreg/grad_check.hpp"
#include "echoreg/layers.hpp"
#include "layer_oracles.hpp"

namespace echoreg::layers {
namespace {

using oracle::random_tensor;

double max_abs_diff(const Tensor& a, const Tensor& b) {
  EXPECT_EQ(a.shape(), b.shape());
  double m = 0.0;
  for (std::size_t i = 0; i < a.numel(); ++i) m = std::max(m, std::fabs(a[i] - b[i]));
  return m;
}

TEST(Conv3d, OnesKernelCountsNeighbours) {
  ConvSpec spec{{3, 3, 3}, 1, 1, {1, 1, 1}, Padding::kValid};
  const Var x = Var::constant(Tensor::ones({1, 3, 3, 3, 1}));
  const Var w = Var::constant(Tensor::ones({3, 3, 3, 1, 1}));
  const Var valid = conv3d(x, w, Var(), spec);
  EXPECT_EQ(valid.shape(), (Shape{1, 1, 1, 1, 1}));
  EXPECT_EQ(valid.value()[0], 27.0);

  spec.padding = Padding::kSame;
  const Var same = conv3d(x, w, Var(), spec);
  EXPECT_EQ(same.shape(), (Shape{1, 3, 3, 3, 1}));
  EXPECT_EQ(same.value().at({0, 1, 1, 1, 0}), 27.0);
  EXPECT_EQ(same.value().at({0, 0, 0, 0, 0}), 8.0);
  EXPECT_EQ(same.value().at({0, 0, 1, 1, 0}), 18.0);
}

TEST(Conv3d, MatchesDirectLoopOnRandomCases) {
  Rng rng(2024);
  for (int trial = 0; trial < 50; ++trial) {
    ConvSpec spec;
    spec.kernel = {1 + rng.below(3), 1 + rng.below(3), 1 + rng.below(3)};
    spec.stride = {1 + rng.below(2), 1 + rng.below(3), 1 + rng.below(3)};
    spec.in_channels = 1 + rng.below(3);
    spec.out_channels = 1 + rng.below(4);
    spec.padding = rng.below(2) ? Padding::kSame : Padding::kValid;
    const Shape in{1 + rng.below(2), 3 + rng.below(4), 3 + rng.below(5), 3 + rng.below(5),
                   spec.in_channels};
    const Tensor x = random_tensor(in, 100 + trial);
    const Tensor w = random_tensor(spec.weight_shape(), 200 + trial);
    const Tensor b = random_tensor({spec.out_channels}, 300 + trial);
    const Var y = conv3d(Var::constant(x), Var::constant(w), Var::constant(b), spec);
    const Tensor ref = oracle::conv3d(x, w, &b, static_cast<long>(spec.stride[0]),
                                      static_cast<long>(spec.stride[1]),
                                      static_cast<long>(spec.stride[2]),
                                      spec.padding == Padding::kSame);
    EXPECT_LT(max_abs_diff(y.value(), ref), 1e-10) << "trial " << trial;
    EXPECT_EQ(conv3d_output_shape(in, spec), ref.shape());
  }
}

TEST(Conv3d, RejectsWrongChannelsAndShortInput) {
  ConvSpec spec{{3, 3, 3}, 2, 4, {1, 1, 1}, Padding::kValid};
  const Var w = Var::constant(Tensor(spec.weight_shape()));
  EXPECT_THROW(conv3d(Var::constant(Tensor({1, 4, 4, 4, 3})), w, Var(), spec), ShapeError);
  EXPECT_THROW(conv3d(Var::constant(Tensor({1, 2, 4, 4, 2})), w, Var(), spec), ShapeError);
  EXPECT_THROW(conv3d(Var::constant(Tensor({4, 4, 2})), w, Var(), spec), ShapeError);
}

TEST(Conv3d, GradientsMatchFiniteDifferences) {
  const std::vector<ConvSpec> specs = {
      {{3, 3, 3}, 2, 3, {1, 1, 1}, Padding::kSame},
      {{1, 3, 3}, 2, 3, {1, 2, 2}, Padding::kSame},  // per-frame 2D
      {{2, 3, 2}, 2, 2, {2, 1, 2}, Padding::kValid},
      {{1, 1, 1}, 2, 3, {1, 1, 1}, Padding::kSame},
  };
  for (std::size_t i = 0; i < specs.size(); ++i) {
    const ConvSpec spec = specs[i];
    const auto report = grad_check(
        [spec](std::span<const Var> v) { return project_to_scalar(conv3d(v[0], v[1], v[2], spec)); },
        {random_tensor({2, 4, 5, 5, 2}, 1 + i), random_tensor(spec.weight_shape(), 11 + i),
         random_tensor({spec.out_channels}, 21 + i)});
    EXPECT_TRUE(report.passed) << "spec " << i << " error " << report.max_error;
  }
}

TEST(Pool3d, MaxAndAverageMatchDirectLoop) {
  Rng rng(7);
  for (int trial = 0; trial < 30; ++trial) {
    PoolSpec spec;
    spec.kind = rng.below(2) ? PoolKind::kMax : PoolKind::kAvg;
    spec.window = {1 + rng.below(3), 1 + rng.below(3), 1 + rng.below(3)};
    spec.stride = {1 + rng.below(2), 1 + rng.below(3), 1 + rng.below(3)};
    spec.padding = rng.below(2) ? Padding::kSame : Padding::kValid;
    const Tensor x = random_tensor({2, 3 + rng.below(3), 4 + rng.below(4), 4 + rng.below(4), 2},
                                   500 + trial);
    const Var y = pool3d(Var::constant(x), spec);
    const Tensor ref = oracle::pool3d(
        x, static_cast<long>(spec.window[0]), static_cast<long>(spec.window[1]),
        static_cast<long>(spec.window[2]), static_cast<long>(spec.stride[0]),
        static_cast<long>(spec.stride[1]), static_cast<long>(spec.stride[2]),
        spec.padding == Padding::kSame, spec.kind == PoolKind::kMax);
    EXPECT_LT(max_abs_diff(y.value(), ref), 1e-12) << "trial " << trial;
  }
}

TEST(Pool3d, SamePaddedMaxIgnoresPaddingForNegativeInputs) {
  PoolSpec spec{PoolKind::kMax, {1, 3, 3}, {1, 2, 2}, Padding::kSame};
  const Var y = pool3d(Var::constant(Tensor({1, 1, 4, 4, 1}, -5.0)), spec);
  for (double v : y.value().data()) EXPECT_EQ(v, -5.0);
}

TEST(Pool3d, GlobalAverage) {
  const Tensor x = Tensor::arange({2, 2, 2, 2, 3});
  const Var y = pool3d(Var::constant(x), {PoolKind::kGlobalAvg});
  ASSERT_EQ(y.shape(), (Shape{2, 3}));
  EXPECT_DOUBLE_EQ(y.value().at({0, 0}), (0 + 3 + 6 + 9 + 12 + 15 + 18 + 21) / 8.0);
  EXPECT_DOUBLE_EQ(y.value().at({1, 2}), 24 + 2 + 10.5);
}

TEST(Pool3d, GradientsMatchFiniteDifferences) {
  const std::vector<PoolSpec> specs = {
      {PoolKind::kMax, {1, 2, 2}, {1, 2, 2}, Padding::kSame},
      {PoolKind::kMax, {3, 3, 3}, {2, 2, 2}, Padding::kSame},
      {PoolKind::kAvg, {2, 3, 3}, {1, 2, 2}, Padding::kSame},
      {PoolKind::kAvg, {2, 2, 2}, {2, 2, 2}, Padding::kValid},
      {PoolKind::kGlobalAvg},
  };
  for (std::size_t i = 0; i < specs.size(); ++i) {
    const PoolSpec spec = specs[i];
    const auto report = grad_check(
        [spec](std::span<const Var> v) { return project_to_scalar(pool3d(v[0], spec)); },
        {random_tensor({2, 3, 5, 5, 2}, 40 + i)});
    EXPECT_TRUE(report.passed) << "spec " << i << " error " << report.max_error;
  }
}

TEST(BatchNorm, TrainingNormalizesAndUpdatesRunningStats) {
  const Tensor x = random_tensor({4, 3, 3, 2}, 3, 1.0, 5.0);
  RunningStats stats{Tensor::zeros({2}), Tensor::ones({2})};
  const Var y = batch_norm(Var::constant(x), Var::constant(Tensor::ones({2})),
                           Var::constant(Tensor::zeros({2})), stats, {}, Mode::kTrain);
  for (std::size_t c = 0; c < 2; ++c) {
    double m = 0.0, v = 0.0, xm = 0.0, xv = 0.0;
    const std::size_t n = x.numel() / 2;
    for (std::size_t i = c; i < x.numel(); i += 2) {
      m += y.value()[i];
      xm += x[i];
    }
    m /= n;
    xm /= n;
    for (std::size_t i = c; i < x.numel(); i += 2) {
      v += (y.value()[i] - m) * (y.value()[i] - m);
      xv += (x[i] - xm) * (x[i] - xm);
    }
    v /= n;
    xv /= n;
    EXPECT_NEAR(m, 0.0, 1e-12);
    EXPECT_NEAR(v, xv / (xv + 1e-5), 1e-12);
    EXPECT_NEAR(stats.mean[c], 0.1 * xm, 1e-12);
    EXPECT_NEAR(stats.variance[c], 0.9 + 0.1 * xv, 1e-12);
  }
}

TEST(BatchNorm, InferenceUsesRunningStats) {
  RunningStats stats{Tensor({2}, {1.0, -2.0}), Tensor({2}, {4.0, 0.25})};
  const Tensor x({1, 2}, {3.0, -1.0});
  const Var y = batch_norm(Var::constant(x), Var::constant(Tensor({2}, {2.0, 1.0})),
                           Var::constant(Tensor({2}, {0.5, 0.0})), stats, {NormKind::kBatch, 1e-5, 0.9},
                           Mode::kInference);
  EXPECT_NEAR(y.value()[0], 2.0 * 2.0 / std::sqrt(4.0 + 1e-5) + 0.5, 1e-12);
  EXPECT_NEAR(y.value()[1], 1.0 / std::sqrt(0.25 + 1e-5), 1e-12);
  EXPECT_EQ(stats.mean[0], 1.0);  // unchanged
}

TEST(BatchNorm, GradientsMatchFiniteDifferences) {
  for (Mode mode : {Mode::kTrain, Mode::kInference}) {
    RunningStats stats{random_tensor({3}, 5), random_tensor({3}, 6, 0.5, 2.0)};
    const auto report = grad_check(
        [&](std::span<const Var> v) {
          RunningStats scratch = stats;  // keep the update out of the objective
          return project_to_scalar(batch_norm(v[0], v[1], v[2], scratch, {}, mode));
        },
        {random_tensor({2, 2, 3, 3}, 7), random_tensor({3}, 8), random_tensor({3}, 9)});
    EXPECT_TRUE(report.passed) << report.max_error;
  }
}

TEST(LayerNorm, NormalizesEachSample) {
  const Tensor x = random_tensor({3, 4, 5}, 12, -3.0, 7.0);
  const Var y = layer_norm(Var::constant(x), Var::constant(Tensor::ones({5})),
                           Var::constant(Tensor::zeros({5})), {NormKind::kLayer});
  for (std::size_t b = 0; b < 3; ++b) {
    double m = 0.0;
    for (std::size_t i = 0; i < 20; ++i) m += y.value()[b * 20 + i];
    EXPECT_NEAR(m / 20.0, 0.0, 1e-12);
  }
}

TEST(LayerNorm, GradientsMatchFiniteDifferences) {
  const auto report = grad_check(
      [](std::span<const Var> v) {
        return project_to_scalar(layer_norm(v[0], v[1], v[2], {NormKind::kLayer}));
      },
      {random_tensor({2, 3, 3, 4}, 13), random_tensor({4}, 14), random_tensor({4}, 15)});
  EXPECT_TRUE(report.passed) << report.max_error;
}

TEST(Dense, GradientsAndShapeChecks) {
  for (Activation act : {Activation::kLinear, Activation::kRelu}) {
    const auto report = grad_check(
        [act](std::span<const Var> v) { return project_to_scalar(dense(v[0], v[1], v[2], act)); },
        {random_tensor({3, 4}, 16), random_tensor({4, 5}, 17), random_tensor({5}, 18)});
    EXPECT_TRUE(report.passed) << report.max_error;
  }
  EXPECT_THROW(dense(Var::constant(Tensor({3, 4})), Var::constant(Tensor({5, 2})),
                     Var::constant(Tensor({2})), Activation::kLinear),
               ShapeError);
}

TEST(Dropout, IdentityAtInferenceAndUnbiasedInTraining) {
  Rng rng(3);
  const Var x = Var::constant(Tensor::ones({100000}));
  EXPECT_TRUE(same_node(dropout(x, {0.5, Mode::kInference}, rng), x));
  const Var y = dropout(x, {0.4, Mode::kTrain}, rng);
  double total = 0.0;
  std::size_t zeros = 0;
  for (double v : y.value().data()) {
    total += v;
    zeros += v == 0.0;
  }
  EXPECT_NEAR(total / 100000.0, 1.0, 0.02);
  EXPECT_NEAR(static_cast<double>(zeros) / 100000.0, 0.4, 0.01);
  EXPECT_THROW(dropout(x, {1.0, Mode::kTrain}, rng), std::invalid_argument);
  EXPECT_THROW(dropout(x, {-0.1, Mode::kTrain}, rng), std::invalid_argument);
}

std::vector<double> row(const Tensor& t, std::size_t r) {
  const std::size_t cols = t.shape()[1];
  return {t.data().begin() + r * cols, t.data().begin() + (r + 1) * cols};
}

TEST(Recurrent, SingleStepMatchesGateEquations) {
  const std::size_t B = 3, D = 4, H = 5;
  for (CellKind cell : {CellKind::kGru, CellKind::kLstm}) {
    const std::size_t G = gate_count(cell);
    const Tensor x = random_tensor({B, D}, 31);
    const Tensor a = random_tensor({B, H}, 32);
    const Tensor c = random_tensor({B, H}, 33);
    const Tensor wx = random_tensor({D, G * H}, 34);
    const Tensor wh = random_tensor({H, G * H}, 35);
    const Tensor b = random_tensor({G * H}, 36);
    RecurrentState prev{Var::constant(a), cell == CellKind::kLstm ? Var::constant(c) : Var()};
    const RecurrentState next = recurrent_step(
        cell, Var::constant(x), prev, {Var::constant(wx), Var::constant(wh), Var::constant(b)});
    for (std::size_t i = 0; i < B; ++i) {
      std::vector<double> want;
      if (cell == CellKind::kLstm) {
        const auto out = oracle::lstm(row(x, i), row(a, i), row(c, i), wx, wh, b);
        want = out.hidden;
        const auto got_c = row(next.cell.value(), i);
        for (std::size_t j = 0; j < H; ++j) EXPECT_NEAR(got_c[j], out.cell[j], 1e-12);
      } else {
        want = oracle::gru(row(x, i), row(a, i), wx, wh, b);
      }
      const auto got = row(next.hidden.value(), i);
      for (std::size_t j = 0; j < H; ++j) EXPECT_NEAR(got[j], want[j], 1e-12);
    }
  }
}

TEST(Recurrent, SequenceGradientsMatchFiniteDifferences) {
  const std::size_t B = 2, D = 3, H = 4, T = 12;
  for (CellKind cell : {CellKind::kGru, CellKind::kLstm}) {
    const std::size_t G = gate_count(cell);
    GradCheckOptions opts;
    opts.tolerance = 1e-3;
    const auto report = grad_check(
        [=](std::span<const Var> v) {
          RecurrentState s = initial_state(cell, B, H);
          for (std::size_t t = 0; t < T; ++t) {
            s = recurrent_step(cell, slice(v[0], 0, t * B, (t + 1) * B), s, {v[1], v[2], v[3]});
          }
          return project_to_scalar(s.hidden);
        },
        {random_tensor({T * B, D}, 41), random_tensor({D, G * H}, 42, -0.5, 0.5),
         random_tensor({H, G * H}, 43, -0.5, 0.5), random_tensor({G * H}, 44)},
        opts);
    EXPECT_TRUE(report.passed) << report.max_error;
  }
}

TEST(PerFrame, MatchesFrameByFrameLoop) {
  const ConvSpec spec{{1, 3, 3}, 2, 3, {1, 1, 1}, Padding::kSame};
  const Tensor w = random_tensor(spec.weight_shape(), 51);
  const auto frame_model = [&](const Var& frames) {
    return pool3d(conv3d(frames, Var::constant(w), Var(), spec), {PoolKind::kGlobalAvg});
  };
  const Tensor clip = random_tensor({2, 4, 6, 6, 2}, 52);
  const Var y = apply_per_frame(frame_model, {6, 6, 2}, Var::constant(clip));
  ASSERT_EQ(y.shape(), (Shape{2, 4, 3}));
  for (std::size_t b = 0; b < 2; ++b) {
    for (std::size_t t = 0; t < 4; ++t) {
      const Var frame =
          slice(slice(Var::constant(clip), 0, b, b + 1), 1, t, t + 1);
      const Var f = frame_model(frame);
      for (std::size_t k = 0; k < 3; ++k) {
        EXPECT_EQ(y.value().at({b, t, k}), f.value()[k]);
      }
    }
  }
  EXPECT_THROW(apply_per_frame(frame_model, {5, 6, 2}, Var::constant(clip)), ShapeError);
}

TEST(Conv3d, ImpulseReproducesKernel) {
  const ConvSpec spec{{2, 3, 3}, 1, 1, {1, 1, 1}, Padding::kValid};
  Tensor x({1, 3, 5, 5, 1});
  x.at({0, 1, 2, 2, 0}) = 1.0;
  const Tensor w = random_tensor(spec.weight_shape(), 61);
  const Var y = conv3d(Var::constant(x), Var::constant(w), Var(), spec);
  // Correlation: output (t, h, w) sees the impulse at kernel offset (1-t, 2-h, 2-w).
  for (std::size_t t = 0; t < 2; ++t)
    for (std::size_t h = 0; h < 3; ++h)
      for (std::size_t ww = 0; ww < 3; ++ww)
        EXPECT_EQ(y.value().at({0, t, h, ww, 0}), w.at({1 - t, 2 - h, 2 - ww, 0, 0}));
}

TEST(Conv3d, SamePaddingStrideOnePreservesExtents) {
  for (const Extents3 k : {Extents3{1, 1, 1}, Extents3{3, 1, 1}, Extents3{3, 3, 3}}) {
    const ConvSpec spec{k, 2, 5, {1, 1, 1}, Padding::kSame};
    EXPECT_EQ(conv3d_output_shape({2, 7, 6, 5, 2}, spec), (Shape{2, 7, 6, 5, 5}));
  }
}

TEST(Pool3d, MaxOfWindowAndGlobalAverageOfOnes) {
  const Var m = pool3d(Var::constant(Tensor({1, 1, 2, 2, 1}, {1, 2, 3, 4})),
                       {PoolKind::kMax, {1, 2, 2}, {1, 2, 2}, Padding::kValid});
  EXPECT_EQ(m.value()[0], 4.0);
  const Var g = pool3d(Var::constant(Tensor::ones({1, 3, 4, 4, 3})), {PoolKind::kGlobalAvg});
  for (double v : g.value().data()) EXPECT_EQ(v, 1.0);
  EXPECT_THROW(pool3d(Var::constant(Tensor({1, 1, 2, 2, 1})),
                      {PoolKind::kMax, {1, 3, 3}, {1, 1, 1}, Padding::kValid}),
               ShapeError);
}

TEST(Pool3d, MaxTieGradientGoesToFirstElement) {
  const Var x = Var::parameter(Tensor({1, 1, 2, 2, 1}, 3.0));
  const Gradients g =
      backward(sum_all(pool3d(x, {PoolKind::kMax, {1, 2, 2}, {1, 2, 2}, Padding::kValid})));
  EXPECT_EQ(g.of(x).values(), (std::vector<double>{1, 0, 0, 0}));
}

Var plain_batch_norm(const Tensor& x, RunningStats& stats, Mode mode) {
  const std::size_t c = x.shape().back();
  return batch_norm(Var::constant(x), Var::constant(Tensor::ones({c})),
                    Var::constant(Tensor::zeros({c})), stats, {}, mode);
}

TEST(BatchNorm, ThreeValuesAndConstantBatch) {
  RunningStats stats{Tensor::zeros({1}), Tensor::ones({1})};
  const Var y = plain_batch_norm(Tensor({3, 1}, {1, 2, 3}), stats, Mode::kTrain);
  const double z = 1.0 / std::sqrt(2.0 / 3.0 + 1e-5);
  EXPECT_NEAR(y.value()[0], -z, 1e-12);
  EXPECT_EQ(y.value()[1], 0.0);
  EXPECT_NEAR(y.value()[2], z, 1e-12);
  EXPECT_NEAR(z, 1.2247, 1e-4);
  const Var c = plain_batch_norm(Tensor({4, 1}, 7.0), stats, Mode::kTrain);
  for (double v : c.value().data()) EXPECT_EQ(v, 0.0);
}

TEST(BatchNorm, RandomBatchesAreStandardized) {
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    const Tensor x = random_tensor({4, 4, 4, 3}, 700 + seed, -4.0, 9.0);
    RunningStats stats{Tensor::zeros({3}), Tensor::ones({3})};
    const Var y = plain_batch_norm(x, stats, Mode::kTrain);
    for (std::size_t c = 0; c < 3; ++c) {
      double m = 0.0, v = 0.0;
      for (std::size_t i = c; i < y.numel(); i += 3) m += y.value()[i];
      m /= 64.0;
      for (std::size_t i = c; i < y.numel(); i += 3) v += std::pow(y.value()[i] - m, 2);
      v /= 64.0;
      EXPECT_LT(std::fabs(m), 1e-6);
      EXPECT_LT(std::fabs(v - 1.0), 1e-3);
    }
  }
}

TEST(BatchNorm, RunningStatsConvergeToFixedBatch) {
  const Tensor x = random_tensor({8, 3, 3, 2}, 81, -2.0, 6.0);
  RunningStats stats{Tensor::zeros({2}), Tensor::ones({2})};
  Var train;
  for (int i = 0; i < 300; ++i) train = plain_batch_norm(x, stats, Mode::kTrain);
  const Var infer = plain_batch_norm(x, stats, Mode::kInference);
  for (std::size_t i = 0; i < x.numel(); ++i) {
    EXPECT_NEAR(infer.value()[i], train.value()[i], 1e-3);
  }
}

TEST(LayerNorm, TwoValuesAndConstantSample) {
  const NormSpec spec{NormKind::kLayer};
  const Var ones = Var::constant(Tensor::ones({2})), zeros = Var::constant(Tensor::zeros({2}));
  const Var y = layer_norm(Var::constant(Tensor({1, 2}, {2, 4})), ones, zeros, spec);
  EXPECT_NEAR(y.value()[0], -1.0, 1e-5);
  EXPECT_NEAR(y.value()[1], 1.0, 1e-5);
  const Var c = layer_norm(Var::constant(Tensor({1, 2}, 3.0)), ones, zeros, spec);
  EXPECT_EQ(c.value()[0], 0.0);
}

TEST(LayerNorm, SampleOutputIndependentOfBatch) {
  const Tensor alone = random_tensor({1, 3, 4, 2}, 91);
  Tensor batch = random_tensor({16, 3, 4, 2}, 92);
  std::copy(alone.data().begin(), alone.data().end(), batch.data().begin() + 5 * 24);
  const Var gamma = Var::constant(random_tensor({2}, 93));
  const Var beta = Var::constant(random_tensor({2}, 94));
  const Var a = layer_norm(Var::constant(alone), gamma, beta, {NormKind::kLayer});
  const Var b = layer_norm(Var::constant(batch), gamma, beta, {NormKind::kLayer});
  for (std::size_t i = 0; i < 24; ++i) EXPECT_EQ(a.value()[i], b.value()[5 * 24 + i]);
}

TEST(Dense, IdentityAndRandomOracle) {
  const Tensor x = random_tensor({3, 4}, 95);
  const Var id = dense(Var::constant(x), Var::constant(Tensor::identity(4)),
                       Var::constant(Tensor::zeros({4})), Activation::kLinear);
  EXPECT_EQ(id.value(), x);
  const Tensor w = random_tensor({4, 1}, 96);
  const Var y = dense(Var::constant(x), Var::constant(w), Var::constant(Tensor({1}, 0.25)),
                      Activation::kLinear);
  ASSERT_EQ(y.shape(), (Shape{3, 1}));
  for (std::size_t i = 0; i < 3; ++i) {
    double acc = 0.25;
    for (std::size_t k = 0; k < 4; ++k) acc += x[i * 4 + k] * w[k];
    EXPECT_NEAR(y.value()[i], acc, 1e-12);
  }
}

TEST(Dropout, ZeroRateIsIdentity) {
  Rng rng(1);
  const Var x = Var::constant(random_tensor({10}, 97));
  EXPECT_EQ(dropout(x, {0.0, Mode::kTrain}, rng).value(), x.value());
}

TEST(Recurrent, ZeroParametersGiveKnownOutputs) {
  const Var x = Var::constant(random_tensor({1, 3}, 98));
  const auto zeros = [](CellKind cell, std::size_t d, std::size_t h) {
    const std::size_t g = gate_count(cell);
    return RecurrentParams{Var::constant(Tensor({d, g * h})), Var::constant(Tensor({h, g * h})),
                           Var::constant(Tensor({g * h}))};
  };
  const RecurrentState lstm =
      recurrent_step(CellKind::kLstm, x, initial_state(CellKind::kLstm, 1, 2),
                     zeros(CellKind::kLstm, 3, 2));
  for (double v : lstm.hidden.value().data()) EXPECT_EQ(v, 0.0);
  const RecurrentState gru = recurrent_step(
      CellKind::kGru, x, {Var::constant(Tensor({1, 1}, 1.0)), Var()}, zeros(CellKind::kGru, 3, 1));
  EXPECT_EQ(gru.hidden.value()[0], 0.5);
  EXPECT_THROW(recurrent_step(CellKind::kGru, x, initial_state(CellKind::kGru, 1, 2),
                              zeros(CellKind::kGru, 4, 2)),
               ShapeError);
}

TEST(Recurrent, LengthTwentyEightGradients) {
  const std::size_t B = 2, D = 3, H = 4, T = 28;
  for (CellKind cell : {CellKind::kGru, CellKind::kLstm}) {
    const std::size_t G = gate_count(cell);
    GradCheckOptions opts;
    opts.tolerance = 1e-3;
    const auto report = grad_check(
        [=](std::span<const Var> v) {
          RecurrentState s = initial_state(cell, B, H);
          for (std::size_t t = 0; t < T; ++t) {
            s = recurrent_step(cell, slice(v[0], 0, t * B, (t + 1) * B), s, {v[1], v[2], v[3]});
          }
          return project_to_scalar(s.hidden);
        },
        {random_tensor({T * B, D}, 141), random_tensor({D, G * H}, 142, -0.5, 0.5),
         random_tensor({H, G * H}, 143, -0.5, 0.5), random_tensor({G * H}, 144)},
        opts);
    EXPECT_TRUE(report.passed) << report.max_error;
  }
}

TEST(PerFrame, IdentityFrameModelKeepsFrameOrder) {
  const Tensor clip = random_tensor({2, 3, 2, 2, 1}, 99);
  const auto flatten = [](const Var& frames) {
    return reshape(frames, {frames.shape()[0], 4});
  };
  const Var y = apply_per_frame(flatten, {2, 2, 1}, Var::constant(clip));
  EXPECT_EQ(y.shape(), (Shape{2, 3, 4}));
  EXPECT_EQ(y.value().values(), clip.values());
}

}  // namespace
}  // namespace echoreg::layers

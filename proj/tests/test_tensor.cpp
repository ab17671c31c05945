// SPDX-License-Identifier: Apache-2.0
#include <gtest/gtest.h>

#include <cmath>
#include <limits>

#include "echoreg/autograd.hpp"
#include "echoreg/blas.hpp"
#include "echoreg/conv_geometry.hpp"
#include "echoreg/grad_check.hpp"
#include "echoreg/rng.hpp"
#include "echoreg/tensor.hpp"

namespace echoreg {
namespace {

Tensor random_tensor(Shape shape, std::uint64_t seed, double lo = -1.0, double hi = 1.0) {
  Rng rng(seed);
  Tensor t(std::move(shape));
  for (double& v : t.data()) v = rng.uniform(lo, hi);
  return t;
}

TEST(Tensor, RejectsZeroExtentsAndMismatchedData) {
  EXPECT_THROW(Tensor(Shape{2, 0}), ShapeError);
  EXPECT_THROW(Tensor(Shape{2, 2}, std::vector<double>{1, 2, 3}), ShapeError);
  EXPECT_TRUE(Tensor().empty());
}

TEST(Tensor, IndexingIsRowMajor) {
  const Tensor t = Tensor::arange({2, 3, 4});
  EXPECT_EQ(t.at({1, 2, 3}), 23.0);
  EXPECT_EQ(t.at({0, 1, 0}), 4.0);
  EXPECT_THROW(t.at({2, 0, 0}), std::out_of_range);
  EXPECT_EQ(row_major_strides({2, 3, 4}), (Shape{12, 4, 1}));
}

TEST(Tensor, ReshapeKeepsData) {
  const Tensor t = Tensor::arange({2, 6});
  const Tensor r = t.reshaped({3, 4});
  EXPECT_EQ(r.values(), t.values());
  EXPECT_THROW(t.reshaped({5, 2}), ShapeError);
}

TEST(Ops, ReluClampsNegatives) {
  const Var x = Var::constant(Tensor({3}, {-3.0, 0.0, 2.0}));
  EXPECT_EQ(relu(x).value().values(), (std::vector<double>{0.0, 0.0, 2.0}));
}

TEST(Ops, MatmulByIdentity) {
  const Tensor a = random_tensor({3, 4}, 1);
  const Var out = matmul(Var::constant(a), Var::constant(Tensor::identity(4)));
  EXPECT_EQ(out.value(), a);
}

TEST(Ops, MatmulRejectsInnerMismatch) {
  EXPECT_THROW(matmul(Var::constant(Tensor({2, 3})), Var::constant(Tensor({2, 3}))), ShapeError);
}

TEST(Ops, SumAlongAxis) {
  const Var s = sum(Var::constant(Tensor::ones({2, 3})), 1);
  EXPECT_EQ(s.shape(), (Shape{2}));
  EXPECT_EQ(s.value().values(), (std::vector<double>{3.0, 3.0}));
}

TEST(Ops, ElementwiseShapeMismatchIsRejected) {
  EXPECT_THROW(add(Var::constant(Tensor({2, 3})), Var::constant(Tensor({3, 2}))), ShapeError);
}

TEST(Ops, ConcatAndSliceAreInverse) {
  const Var a = Var::constant(random_tensor({2, 3}, 2));
  const Var b = Var::constant(random_tensor({2, 5}, 3));
  const Var ab = concat(std::vector<Var>{a, b}, 1);
  EXPECT_EQ(ab.shape(), (Shape{2, 8}));
  EXPECT_EQ(slice(ab, 1, 0, 3).value(), a.value());
  EXPECT_EQ(slice(ab, 1, 3, 8).value(), b.value());
}

// Sizes straddle the thresholds where optimized kernels switch code paths.
TEST(Gemm, MatchesTripleLoopForAllTransposes) {
  Rng rng(77);
  for (std::size_t m : {1u, 3u, 18u, 64u, 131u}) {
    for (std::size_t n : {1u, 2u, 16u, 216u, 433u}) {
      for (std::size_t k : {1u, 2u, 27u, 432u}) {
        for (int t = 0; t < 4; ++t) {
          const bool ta = t & 1, tb = t & 2;
          std::vector<double> a(m * k), b(k * n), c(m * n), want(m * n);
          for (double& v : a) v = rng.uniform(-1.0, 1.0);
          for (double& v : b) v = rng.uniform(-1.0, 1.0);
          for (std::size_t i = 0; i < m * n; ++i) c[i] = want[i] = rng.uniform(-1.0, 1.0);
          for (std::size_t i = 0; i < m; ++i) {
            for (std::size_t j = 0; j < n; ++j) {
              double acc = 0.0;
              for (std::size_t l = 0; l < k; ++l) {
                acc += (ta ? a[l * m + i] : a[i * k + l]) * (tb ? b[j * k + l] : b[l * n + j]);
              }
              want[i * n + j] = 0.5 * acc + 2.0 * want[i * n + j];
            }
          }
          blas::gemm(ta, tb, m, n, k, 0.5, a.data(), b.data(), 2.0, c.data());
          double worst = 0.0;
          for (std::size_t i = 0; i < m * n; ++i) worst = std::max(worst, std::abs(c[i] - want[i]));
          ASSERT_LT(worst, 1e-11) << m << "x" << n << "x" << k << " ta=" << ta << " tb=" << tb;
        }
      }
    }
  }
}

TEST(Backward, SquareAtThree) {
  const Var x = Var::parameter(Tensor::scalar(3.0));
  const Gradients g = backward(mul(x, x));
  EXPECT_DOUBLE_EQ(g.of(x)[0], 6.0);
}

TEST(Backward, ReluBelowZeroHasNoGradient) {
  const Var x = Var::parameter(Tensor::scalar(-1.0));
  EXPECT_EQ(backward(relu(x)).of(x)[0], 0.0);
}

TEST(Backward, MseGradientMatchesCentralDifference) {
  // L = mean((p - y)^2) with p = 3, y = 2 -> dL/dp = 2.
  const Var p = Var::parameter(Tensor::scalar(3.0));
  const Var y = Var::constant(Tensor::scalar(2.0));
  const Gradients g = backward(mean_all(square(sub(p, y))));
  const double h = 1e-6;
  const double numeric = ((3.0 + h - 2.0) * (3.0 + h - 2.0) - (3.0 - h - 2.0) * (3.0 - h - 2.0)) /
                         (2.0 * h);
  EXPECT_DOUBLE_EQ(g.of(p)[0], 2.0);
  EXPECT_NEAR(g.of(p)[0], numeric, 1e-8);
}

TEST(Backward, NonScalarRootIsRejected) {
  const Var x = Var::parameter(Tensor({2}, 1.0));
  EXPECT_THROW(backward(x), ShapeError);
}

TEST(Backward, SharedSubexpressionAccumulates) {
  const Var x = Var::parameter(Tensor::scalar(2.0));
  const Var y = mul(x, x);
  const Gradients g = backward(add(y, y));  // 2x^2 -> 4x
  EXPECT_DOUBLE_EQ(g.of(x)[0], 8.0);
}

TEST(Backward, UntouchedLeafGetsZeros) {
  const Var x = Var::parameter(Tensor::scalar(2.0));
  const Var unused = Var::parameter(Tensor({3}, 1.0));
  const Gradients g = backward(square(x));
  EXPECT_FALSE(g.touched(unused));
  EXPECT_EQ(g.of(unused), Tensor::zeros({3}));
}

TEST(GradCheck, EveryPrimitivePasses) {
  GradCheckOptions opts;
  const auto check = [&](const char* name, auto fn, std::vector<Tensor> inputs) {
    const auto report = grad_check(
        [fn](std::span<const Var> v) { return project_to_scalar(fn(v)); }, std::move(inputs), opts);
    EXPECT_TRUE(report.passed) << name << " max error " << report.max_error;
  };
  check("add", [](auto v) { return add(v[0], v[1]); },
        {random_tensor({3, 4}, 1), random_tensor({3, 4}, 2)});
  check("mul scalar", [](auto v) { return mul(v[0], v[1]); },
        {random_tensor({3, 4}, 3), random_tensor({1}, 4)});
  check("sub", [](auto v) { return sub(v[0], v[1]); },
        {random_tensor({1}, 3), random_tensor({5}, 4)});
  check("sigmoid", [](auto v) { return sigmoid(v[0]); }, {random_tensor({6}, 5, -3, 3)});
  check("tanh", [](auto v) { return tanh(v[0]); }, {random_tensor({6}, 6, -3, 3)});
  check("relu", [](auto v) { return relu(v[0]); }, {random_tensor({20}, 7)});
  check("abs", [](auto v) { return abs(v[0]); }, {random_tensor({20}, 8)});
  check("matmul", [](auto v) { return matmul(v[0], v[1]); },
        {random_tensor({3, 5}, 9), random_tensor({5, 2}, 10)});
  check("bias_add", [](auto v) { return bias_add(v[0], v[1]); },
        {random_tensor({2, 3, 4}, 11), random_tensor({4}, 12)});
  check("mean axis", [](auto v) { return mean(v[0], 1); }, {random_tensor({2, 3, 4}, 13)});
  check("max axis", [](auto v) { return max(v[0], 2); }, {random_tensor({2, 3, 4}, 14)});
  check("concat", [](auto v) { return concat(v, 0); },
        {random_tensor({1, 3}, 15), random_tensor({2, 3}, 16)});
  check("slice", [](auto v) { return slice(v[0], 1, 1, 3); }, {random_tensor({2, 4}, 17)});
  check("reshape", [](auto v) { return reshape(v[0], {6}); }, {random_tensor({2, 3}, 18)});
}

TEST(GradCheck, DenseLayerPassesAndCorruptedGradientFails) {
  Var x = Var::parameter(random_tensor({4, 5}, 21));
  Var w = Var::parameter(random_tensor({5, 3}, 22));
  Var b = Var::parameter(random_tensor({3}, 23));
  const Objective objective = [&]() { return project_to_scalar(relu(bias_add(matmul(x, w), b))); };
  const auto good = grad_check(objective, {x, w, b}, {}, {"x", "w", "b"});
  EXPECT_TRUE(good.passed) << good.max_error;

  const Gradients grads = backward(objective());
  std::vector<Tensor> doubled;
  for (const Var& leaf : {x, w, b}) {
    Tensor g = grads.of(leaf);
    for (double& v : g.data()) v *= 2.0;
    doubled.push_back(std::move(g));
  }
  const auto bad = compare_with_finite_differences(objective, {x, w, b}, doubled);
  EXPECT_FALSE(bad.passed);
  EXPECT_GT(bad.max_error, 0.3);
}

TEST(ConvGeometry, KnownExtents) {
  EXPECT_EQ(conv_output_extent(make_geometry(112, 7, 2, Padding::kSame)), 56u);
  EXPECT_EQ(conv_output_extent({112, 7, 3, 3, 2}), 56u);
  EXPECT_EQ(conv_output_extent(make_geometry(28, 3, 1, Padding::kSame)), 28u);
  EXPECT_EQ(conv_output_extent(make_geometry(10, 3, 2, Padding::kValid)), 4u);
  EXPECT_THROW(conv_output_extent({2, 5, 0, 0, 1}), std::invalid_argument);
  EXPECT_THROW(conv_output_extent({4, 2, 0, 0, 0}), std::invalid_argument);
}

TEST(ConvGeometry, MatchesWindowCountOnRandomGeometries) {
  Rng rng(99);
  for (int trial = 0; trial < 1000; ++trial) {
    ConvGeometry g{1 + rng.below(40), 1 + rng.below(8), rng.below(4), rng.below(4),
                   1 + rng.below(4)};
    const long padded = static_cast<long>(g.input + g.pad_start + g.pad_end);
    if (padded < static_cast<long>(g.filter)) {
      EXPECT_THROW(conv_output_extent(g), std::invalid_argument);
      continue;
    }
    std::size_t windows = 0;
    for (long start = 0; start + static_cast<long>(g.filter) <= padded;
         start += static_cast<long>(g.stride)) {
      ++windows;
    }
    EXPECT_EQ(conv_output_extent(g), windows);
  }
}

TEST(ConvGeometry, SamePaddingGivesCeilDivision) {
  for (std::size_t i = 1; i < 40; ++i) {
    for (std::size_t f = 1; f < 8; ++f) {
      for (std::size_t s = 1; s < 4; ++s) {
        EXPECT_EQ(conv_output_extent(make_geometry(i, f, s, Padding::kSame)), (i + s - 1) / s);
      }
    }
  }
}

TEST(Rng, SameSeedSameStream) {
  Rng a(5), b(5);
  for (int i = 0; i < 100; ++i) ASSERT_EQ(a.normal(), b.normal());
  EXPECT_NE(derive_seed(5, 0), derive_seed(5, 1));
}

TEST(Rng, NormalMoments) {
  Rng rng(11);
  double s = 0.0, s2 = 0.0;
  const int n = 200000;
  for (int i = 0; i < n; ++i) {
    const double v = rng.normal();
    s += v;
    s2 += v * v;
  }
  EXPECT_NEAR(s / n, 0.0, 0.01);
  EXPECT_NEAR(s2 / n, 1.0, 0.02);
}

}  // namespace
}  // namespace echoreg

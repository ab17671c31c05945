// SPDX-License-Identifier: Apache-2.0
#include <cmath>
#include <memory>

#include "echoreg/layers.hpp"

namespace echoreg::layers {
namespace {

std::size_t check_affine(const char* op, const Var& input, const Var& gamma, const Var& beta) {
  if (input.shape().size() < 2) {
    throw ShapeError(std::string(op) + " expects rank >= 2, got " +
                     shape_to_string(input.shape()));
  }
  const std::size_t c = input.shape().back();
  if (gamma.shape() != Shape{c} || beta.shape() != Shape{c}) {
    throw ShapeError(std::string(op) + ": gamma/beta must be (" + std::to_string(c) + ")");
  }
  return c;
}

// y = gamma * xhat + beta. With batch_mean set, xhat is normalized per
// feature across all rows; otherwise per contiguous group of numel / groups
// elements.
Var normalize_groups(const char* op, const Var& input, const Var& gamma, const Var& beta,
                     std::size_t groups, double epsilon, Tensor* batch_mean, Tensor* batch_var) {
  const std::size_t c = input.shape().back();
  const std::size_t n = input.numel();
  const std::size_t per_group = n / groups;
  const bool per_feature = batch_mean != nullptr;
  const auto x = input.value().data();
  auto xhat = std::make_shared<Tensor>(input.shape());
  // One inverse std per group (layer norm) or per feature (batch norm).
  auto inv_std = std::make_shared<std::vector<double>>(per_feature ? c : groups);

  if (per_feature) {
    const std::size_t rows = n / c;
    std::vector<double> mu(c, 0.0), var(c, 0.0);
    for (std::size_t r = 0; r < rows; ++r) {
      for (std::size_t j = 0; j < c; ++j) mu[j] += x[r * c + j];
    }
    for (double& m : mu) m /= static_cast<double>(rows);
    for (std::size_t r = 0; r < rows; ++r) {
      for (std::size_t j = 0; j < c; ++j) {
        const double d = x[r * c + j] - mu[j];
        var[j] += d * d;
      }
    }
    for (double& v : var) v /= static_cast<double>(rows);
    for (std::size_t j = 0; j < c; ++j) (*inv_std)[j] = 1.0 / std::sqrt(var[j] + epsilon);
    for (std::size_t r = 0; r < rows; ++r) {
      for (std::size_t j = 0; j < c; ++j) {
        (*xhat)[r * c + j] = (x[r * c + j] - mu[j]) * (*inv_std)[j];
      }
    }
    *batch_mean = Tensor({c}, mu);
    *batch_var = Tensor({c}, var);
  } else {
    for (std::size_t gi = 0; gi < groups; ++gi) {
      const double* xs = &x[gi * per_group];
      double mu = 0.0;
      for (std::size_t i = 0; i < per_group; ++i) mu += xs[i];
      mu /= static_cast<double>(per_group);
      double var = 0.0;
      for (std::size_t i = 0; i < per_group; ++i) var += (xs[i] - mu) * (xs[i] - mu);
      var /= static_cast<double>(per_group);
      const double is = 1.0 / std::sqrt(var + epsilon);
      (*inv_std)[gi] = is;
      for (std::size_t i = 0; i < per_group; ++i) (*xhat)[gi * per_group + i] = (xs[i] - mu) * is;
    }
  }

  Tensor out(input.shape());
  const auto gv = gamma.value().data();
  const auto bv = beta.value().data();
  for (std::size_t i = 0; i < n; ++i) out[i] = gv[i % c] * (*xhat)[i] + bv[i % c];

  return make_op(
      op, std::move(out), {input, gamma, beta},
      [xhat, inv_std, c, groups, per_group, per_feature](const Node& self,
                                                         const Tensor& g) -> ParentGrads {
        const std::size_t n = g.numel();
        const auto gv = self.parents[1].value().data();
        Tensor ggamma({c}), gbeta({c});
        for (std::size_t i = 0; i < n; ++i) {
          ggamma[i % c] += g[i] * (*xhat)[i];
          gbeta[i % c] += g[i];
        }
        ParentGrads grads(3);
        if (self.parents[0].requires_grad()) {
          // dx = inv_std / m * (m * dxhat - sum(dxhat) - xhat * sum(dxhat * xhat))
          Tensor gx(self.parents[0].shape());
          if (per_feature) {
            const std::size_t rows = n / c;
            std::vector<double> s1(c, 0.0), s2(c, 0.0);
            for (std::size_t i = 0; i < n; ++i) {
              const double d = g[i] * gv[i % c];
              s1[i % c] += d;
              s2[i % c] += d * (*xhat)[i];
            }
            const double m = static_cast<double>(rows);
            for (std::size_t i = 0; i < n; ++i) {
              const std::size_t j = i % c;
              const double d = g[i] * gv[j];
              gx[i] = (*inv_std)[j] / m * (m * d - s1[j] - (*xhat)[i] * s2[j]);
            }
          } else {
            const double m = static_cast<double>(per_group);
            for (std::size_t gi = 0; gi < groups; ++gi) {
              const std::size_t base = gi * per_group;
              double s1 = 0.0, s2 = 0.0;
              for (std::size_t i = base; i < base + per_group; ++i) {
                const double d = g[i] * gv[i % c];
                s1 += d;
                s2 += d * (*xhat)[i];
              }
              const double is = (*inv_std)[gi];
              for (std::size_t i = base; i < base + per_group; ++i) {
                const double d = g[i] * gv[i % c];
                gx[i] = is / m * (m * d - s1 - (*xhat)[i] * s2);
              }
            }
          }
          grads[0] = std::move(gx);
        }
        if (self.parents[1].requires_grad()) grads[1] = std::move(ggamma);
        if (self.parents[2].requires_grad()) grads[2] = std::move(gbeta);
        return grads;
      });
}

// y = x * a + b per feature, with a and b fixed by the running statistics.
Var batch_norm_inference(const Var& input, const Var& gamma, const Var& beta,
                         const RunningStats& stats, double epsilon) {
  const std::size_t c = input.shape().back();
  auto inv_std = std::make_shared<std::vector<double>>(c);
  for (std::size_t j = 0; j < c; ++j) {
    (*inv_std)[j] = 1.0 / std::sqrt(stats.variance[j] + epsilon);
  }
  auto mu = std::make_shared<std::vector<double>>(stats.mean.values());
  const auto x = input.value().data();
  const auto gv = gamma.value().data();
  const auto bv = beta.value().data();
  Tensor out(input.shape());
  for (std::size_t i = 0; i < out.numel(); ++i) {
    const std::size_t j = i % c;
    out[i] = gv[j] * (x[i] - (*mu)[j]) * (*inv_std)[j] + bv[j];
  }
  return make_op("batch_norm", std::move(out), {input, gamma, beta},
                 [c, inv_std, mu](const Node& self, const Tensor& g) -> ParentGrads {
                   const auto x = self.parents[0].value().data();
                   const auto gv = self.parents[1].value().data();
                   Tensor gx(self.parents[0].shape()), ggamma({c}), gbeta({c});
                   for (std::size_t i = 0; i < g.numel(); ++i) {
                     const std::size_t j = i % c;
                     gx[i] = g[i] * gv[j] * (*inv_std)[j];
                     ggamma[j] += g[i] * (x[i] - (*mu)[j]) * (*inv_std)[j];
                     gbeta[j] += g[i];
                   }
                   ParentGrads grads(3);
                   if (self.parents[0].requires_grad()) grads[0] = std::move(gx);
                   if (self.parents[1].requires_grad()) grads[1] = std::move(ggamma);
                   if (self.parents[2].requires_grad()) grads[2] = std::move(gbeta);
                   return grads;
                 });
}

}  // namespace

Var batch_norm(const Var& input, const Var& gamma, const Var& beta, RunningStats& stats,
               const NormSpec& spec, Mode mode) {
  const std::size_t c = check_affine("batch_norm", input, gamma, beta);
  if (stats.mean.shape() != Shape{c} || stats.variance.shape() != Shape{c}) {
    throw ShapeError("batch_norm: running statistics must be (" + std::to_string(c) + ")");
  }
  if (mode == Mode::kInference) {
    return batch_norm_inference(input, gamma, beta, stats, spec.epsilon);
  }
  Tensor mu, var;
  Var out = normalize_groups("batch_norm", input, gamma, beta, 1, spec.epsilon, &mu, &var);
  for (std::size_t j = 0; j < c; ++j) {
    stats.mean[j] = spec.momentum * stats.mean[j] + (1.0 - spec.momentum) * mu[j];
    stats.variance[j] = spec.momentum * stats.variance[j] + (1.0 - spec.momentum) * var[j];
  }
  return out;
}

Var layer_norm(const Var& input, const Var& gamma, const Var& beta, const NormSpec& spec) {
  check_affine("layer_norm", input, gamma, beta);
  return normalize_groups("layer_norm", input, gamma, beta, input.shape()[0], spec.epsilon,
                          nullptr, nullptr);
}

}  // namespace echoreg::layers

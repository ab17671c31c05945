// SPDX-License-Identifier: Apache-2.0
#include "echoreg/grad_check.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "echoreg/rng.hpp"

namespace echoreg {

double gradient_error(double analytic, double numeric, double absolute_below) {
  const double diff = std::fabs(analytic - numeric);
  const double scale = std::max(std::fabs(analytic), std::fabs(numeric));
  if (scale < absolute_below) return diff;
  return diff / std::max(scale, 1e-8);
}

namespace {

std::vector<std::size_t> pick_entries(std::size_t numel, std::size_t limit, Rng& rng) {
  std::vector<std::size_t> idx(numel);
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  if (limit == 0 || limit >= numel) return idx;
  // Partial Fisher-Yates.
  for (std::size_t i = 0; i < limit; ++i) {
    std::swap(idx[i], idx[i + rng.below(numel - i)]);
  }
  idx.resize(limit);
  std::sort(idx.begin(), idx.end());
  return idx;
}

double evaluate(const Objective& objective) {
  const Var out = objective();
  if (out.numel() != 1) {
    throw ShapeError("grad_check objective must be scalar, got " + shape_to_string(out.shape()));
  }
  return out.value()[0];
}

}  // namespace

GradCheckReport compare_with_finite_differences(const Objective& objective,
                                                std::vector<Var> leaves,
                                                const std::vector<Tensor>& analytic,
                                                const GradCheckOptions& options,
                                                std::vector<std::string> names) {
  if (analytic.size() != leaves.size()) {
    throw std::invalid_argument("one analytic gradient per leaf required");
  }
  Rng rng(options.seed);
  GradCheckReport report;
  const double base = evaluate(objective);
  // Relative precision assumed for a full forward evaluation.
  constexpr double kForwardNoise = 1e-13;
  std::size_t probed = 0;
  std::size_t skipped = 0;

  for (std::size_t li = 0; li < leaves.size(); ++li) {
    Var& leaf = leaves[li];
    GradCheckInput entry;
    entry.name = li < names.size() ? names[li] : "input" + std::to_string(li);
    const auto indices = pick_entries(leaf.numel(), options.max_entries_per_input, rng);
    for (std::size_t idx : indices) {
      ++probed;
      const double original = leaf.leaf_value()[idx];
      double h = options.step;
      bool accepted = false;
      double numeric = 0.0;
      for (int attempt = 0; attempt <= options.kink_retries; ++attempt) {
        leaf.leaf_value()[idx] = original + h;
        const double plus = evaluate(objective);
        leaf.leaf_value()[idx] = original - h;
        const double minus = evaluate(objective);
        leaf.leaf_value()[idx] = original;
        numeric = (plus - minus) / (2.0 * h);
        const double second = std::fabs(plus - 2.0 * base + minus);
        const double noise = 4.0 * kForwardNoise *
                             std::max({std::fabs(plus), std::fabs(base), std::fabs(minus)});
        const double budget =
            0.1 * options.tolerance * 2.0 * h * std::max(std::fabs(numeric), options.absolute_below);
        if (second <= std::max(noise, budget)) {
          accepted = true;
          break;
        }
        h /= 10.0;
      }
      if (!accepted) {
        ++entry.skipped;
        ++skipped;
        continue;
      }
      ++entry.checked;
      const double a = analytic[li][idx];
      const double err = gradient_error(a, numeric, options.absolute_below);
      if (entry.checked == 1 || err > entry.max_error) {
        entry.max_error = err;
        entry.worst_index = idx;
        entry.worst_analytic = a;
        entry.worst_numeric = numeric;
      }
    }
    report.max_error = std::max(report.max_error, entry.max_error);
    report.inputs.push_back(std::move(entry));
  }
  const bool few_skips =
      static_cast<double>(skipped) <= options.max_skipped_fraction * static_cast<double>(probed);
  report.passed = probed > skipped && few_skips && report.max_error < options.tolerance;
  return report;
}

GradCheckReport grad_check(const Objective& objective, std::vector<Var> leaves,
                           const GradCheckOptions& options, std::vector<std::string> names) {
  const Var root = objective();
  const Gradients grads = backward(root);
  std::vector<Tensor> analytic;
  analytic.reserve(leaves.size());
  for (const auto& leaf : leaves) analytic.push_back(grads.of(leaf));
  return compare_with_finite_differences(objective, std::move(leaves), analytic, options,
                                         std::move(names));
}

GradCheckReport grad_check(const std::function<Var(std::span<const Var>)>& op,
                           std::vector<Tensor> inputs, const GradCheckOptions& options) {
  std::vector<Var> leaves;
  leaves.reserve(inputs.size());
  for (auto& t : inputs) leaves.push_back(Var::parameter(std::move(t)));
  const Objective objective = [&op, &leaves]() { return op(leaves); };
  return grad_check(objective, leaves, options);
}

Var project_to_scalar(const Var& out, std::uint64_t seed) {
  Rng rng(seed);
  Tensor weights(out.shape());
  for (double& w : weights.data()) w = rng.uniform(-1.0, 1.0);
  return sum_all(mul(out, Var::constant(std::move(weights))));
}

}  // namespace echoreg

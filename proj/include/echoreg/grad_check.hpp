// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "echoreg/autograd.hpp"

namespace echoreg {

struct GradCheckOptions {
  double step = 1e-6;
  /// Maximum accepted error per checked entry.
  double tolerance = 1e-4;
  /// When both |analytic| and |numeric| fall below this, absolute error is used.
  double absolute_below = 1e-6;
  /// Entries checked per input; 0 checks every entry.
  std::size_t max_entries_per_input = 0;
  std::uint64_t seed = 0x5eed;
  /// Probes whose second difference shows a ReLU/max-pool kink inside
  /// [x - h, x + h] are retried with h / 10 this many times, then skipped.
  int kink_retries = 2;
  /// Fraction of probed entries allowed to be skipped as kinks.
  double max_skipped_fraction = 0.1;
};

struct GradCheckInput {
  std::string name;
  std::size_t checked = 0;
  std::size_t skipped = 0;
  double max_error = 0.0;
  std::size_t worst_index = 0;
  double worst_analytic = 0.0;
  double worst_numeric = 0.0;
};

struct GradCheckReport {
  bool passed = false;
  double max_error = 0.0;
  std::vector<GradCheckInput> inputs;
};

/// |a - n| / max(|a|, |n|, 1e-8), or |a - n| when both are below
/// `absolute_below`.
double gradient_error(double analytic, double numeric, double absolute_below);

/// Scalar objective rebuilt from the current leaf values on every call.
using Objective = std::function<Var()>;

/// Compares reverse-mode gradients of `objective` with respect to `leaves`
/// against central finite differences.
GradCheckReport grad_check(const Objective& objective, std::vector<Var> leaves,
                           const GradCheckOptions& options = {},
                           std::vector<std::string> names = {});

/// Convenience form for an operation on fresh input tensors.
GradCheckReport grad_check(const std::function<Var(std::span<const Var>)>& op,
                           std::vector<Tensor> inputs, const GradCheckOptions& options = {});

/// Finite-difference comparison against caller-supplied analytic gradients.
GradCheckReport compare_with_finite_differences(const Objective& objective,
                                                std::vector<Var> leaves,
                                                const std::vector<Tensor>& analytic,
                                                const GradCheckOptions& options = {},
                                                std::vector<std::string> names = {});

/// sum(out * W) with a fixed pseudo-random W; turns any output into a scalar
/// whose gradient exercises every output element.
Var project_to_scalar(const Var& out, std::uint64_t seed = 17);

}  // namespace echoreg

// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <cstdint>
#include <random>

namespace echoreg {

/// SplitMix64 finalizer applied to `state + stream * golden-ratio`; used to
/// derive independent child seeds.
std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t stream);

/// Portable random source: std::mt19937_64 (fully specified by the standard)
/// plus distribution code that does not depend on the standard library's
/// unspecified distribution algorithms.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}

  std::uint64_t next_u64() { return engine_(); }
  /// Uniform in [0, 1) with 53 random bits.
  double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }
  /// Standard normal via Box-Muller.
  double normal();
  /// Uniform integer in [0, n) by rejection.
  std::size_t below(std::size_t n);

 private:
  std::mt19937_64 engine_;
  bool has_spare_ = false;
  double spare_ = 0.0;
};

}  // namespace echoreg

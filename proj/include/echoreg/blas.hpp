// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>

namespace echoreg::blas {

/// C = alpha * op(A) . op(B) + beta * C for densely packed row-major
/// matrices; op(A) is m x k, op(B) is k x n. Runs single-threaded so results
/// are bit-reproducible.
void gemm(bool transpose_a, bool transpose_b, std::size_t m, std::size_t n,
          std::size_t k, double alpha, const double* a, const double* b,
          double beta, double* c);

}  // namespace echoreg::blas

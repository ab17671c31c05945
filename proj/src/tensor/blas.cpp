// SPDX-License-Identifier: Apache-2.0
#include "echoreg/blas.hpp"

#include <Eigen/Core>

namespace echoreg::blas {

namespace {

using RowMajor = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using ConstMap = Eigen::Map<const RowMajor>;
using Map = Eigen::Map<RowMajor>;

template <typename A, typename B>
void accumulate(Map& c, double alpha, double beta, const A& a, const B& b) {
  if (beta == 0.0) {
    c.noalias() = alpha * (a * b);
  } else {
    if (beta != 1.0) c *= beta;
    c.noalias() += alpha * (a * b);
  }
}

}  // namespace

void gemm(bool transpose_a, bool transpose_b, std::size_t m, std::size_t n,
          std::size_t k, double alpha, const double* a, const double* b,
          double beta, double* c) {
  if (m == 0 || n == 0) return;
  const auto M = static_cast<Eigen::Index>(m);
  const auto N = static_cast<Eigen::Index>(n);
  const auto K = static_cast<Eigen::Index>(k);
  Map cm(c, M, N);
  if (k == 0) {
    cm *= beta;
    return;
  }
  const ConstMap am = transpose_a ? ConstMap(a, K, M) : ConstMap(a, M, K);
  const ConstMap bm = transpose_b ? ConstMap(b, N, K) : ConstMap(b, K, N);
  if (transpose_a && transpose_b) {
    accumulate(cm, alpha, beta, am.transpose(), bm.transpose());
  } else if (transpose_a) {
    accumulate(cm, alpha, beta, am.transpose(), bm);
  } else if (transpose_b) {
    accumulate(cm, alpha, beta, am, bm.transpose());
  } else {
    accumulate(cm, alpha, beta, am, bm);
  }
}

}  // namespace echoreg::blas

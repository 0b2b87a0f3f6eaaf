#pragma once

#include <cblas.h>

namespace smmix::detail {

// C = alpha * op(A) * op(B) + beta * C, row-major. m/n/k are the dimensions
// of op(A) (m x k) and op(B) (k x n).
inline void gemm(bool ta, bool tb, int m, int n, int k, double alpha, const double* a,
                 const double* b, double beta, double* c) {
  cblas_dgemm(CblasRowMajor, ta ? CblasTrans : CblasNoTrans, tb ? CblasTrans : CblasNoTrans, m, n,
              k, alpha, a, ta ? m : k, b, tb ? k : n, beta, c, n);
}

inline void gemm(bool ta, bool tb, int m, int n, int k, float alpha, const float* a, const float* b,
                 float beta, float* c) {
  cblas_sgemm(CblasRowMajor, ta ? CblasTrans : CblasNoTrans, tb ? CblasTrans : CblasNoTrans, m, n,
              k, alpha, a, ta ? m : k, b, tb ? k : n, beta, c, n);
}

}  // namespace smmix::detail

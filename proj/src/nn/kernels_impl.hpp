#pragma once

#include "sparsecap/nn/kernels.hpp"

namespace sparsecap::nn::detail {

using GemmFn = void (*)(Trans, Trans, int, int, int, double, const double*, int, const double*, int, double, double*, int);

void gemm_scalar(Trans ta, Trans tb, int m, int n, int k, double alpha, const double* a, int lda, const double* b,
                 int ldb, double beta, double* c, int ldc);
#if defined(SPARSECAP_HAVE_AVX2)
void gemm_avx2(Trans ta, Trans tb, int m, int n, int k, double alpha, const double* a, int lda, const double* b,
               int ldb, double beta, double* c, int ldc);
#endif
#if defined(SPARSECAP_HAVE_NEON)
void gemm_neon(Trans ta, Trans tb, int m, int n, int k, double alpha, const double* a, int lda, const double* b,
               int ldb, double beta, double* c, int ldc);
#endif

// Scales C by beta (beta == 0 writes zeros).
inline void scale_output(int m, int n, double beta, double* c, int ldc) {
  for (int i = 0; i < m; ++i) {
    double* row = c + static_cast<long>(i) * ldc;
    if (beta == 0.0) {
      for (int j = 0; j < n; ++j) row[j] = 0.0;
    } else if (beta != 1.0) {
      for (int j = 0; j < n; ++j) row[j] *= beta;
    }
  }
}

// Copies op(X) (rows x cols after the op) into a dense row-major buffer.
inline void pack(Trans t, int rows, int cols, const double* x, int ldx, double* out) {
  for (int i = 0; i < rows; ++i) {
    for (int j = 0; j < cols; ++j) {
      out[static_cast<long>(i) * cols + j] = t == Trans::kYes ? x[static_cast<long>(j) * ldx + i] : x[static_cast<long>(i) * ldx + j];
    }
  }
}

}  // namespace sparsecap::nn::detail

#include "kernels_impl.hpp"

namespace sparsecap::nn::detail {

void gemm_scalar(Trans ta, Trans tb, int m, int n, int k, double alpha, const double* a, int lda, const double* b,
                 int ldb, double beta, double* c, int ldc) {
  scale_output(m, n, beta, c, ldc);
  for (int i = 0; i < m; ++i) {
    double* crow = c + static_cast<long>(i) * ldc;
    for (int p = 0; p < k; ++p) {
      const double aip = alpha * (ta == Trans::kYes ? a[static_cast<long>(p) * lda + i] : a[static_cast<long>(i) * lda + p]);
      if (tb == Trans::kYes) {
        for (int j = 0; j < n; ++j) crow[j] += aip * b[static_cast<long>(j) * ldb + p];
      } else {
        const double* brow = b + static_cast<long>(p) * ldb;
        for (int j = 0; j < n; ++j) crow[j] += aip * brow[j];
      }
    }
  }
}

}  // namespace sparsecap::nn::detail

#if defined(__aarch64__)

#include <arm_neon.h>

#include <vector>

#include "kernels_impl.hpp"

namespace sparsecap::nn::detail {
namespace {

// C += alpha * A * B, dense row-major, 4 x 4 register tile.
void gemm_nn(int m, int n, int k, double alpha, const double* a, int lda, const double* b, int ldb, double* c, int ldc) {
  const int m4 = m - m % 4;
  const int n4 = n - n % 4;
  for (int i = 0; i < m4; i += 4) {
    for (int j = 0; j < n4; j += 4) {
      float64x2_t acc[4][2];
      for (auto& r : acc) r[0] = r[1] = vdupq_n_f64(0.0);
      const double* bp = b + j;
      for (int p = 0; p < k; ++p, bp += ldb) {
        const float64x2_t b0 = vld1q_f64(bp);
        const float64x2_t b1 = vld1q_f64(bp + 2);
        for (int r = 0; r < 4; ++r) {
          const float64x2_t x = vdupq_n_f64(a[static_cast<long>(i + r) * lda + p]);
          acc[r][0] = vfmaq_f64(acc[r][0], x, b0);
          acc[r][1] = vfmaq_f64(acc[r][1], x, b1);
        }
      }
      for (int r = 0; r < 4; ++r) {
        double* cr = c + static_cast<long>(i + r) * ldc + j;
        vst1q_f64(cr, vfmaq_n_f64(vld1q_f64(cr), acc[r][0], alpha));
        vst1q_f64(cr + 2, vfmaq_n_f64(vld1q_f64(cr + 2), acc[r][1], alpha));
      }
    }
  }
  auto edge = [&](int i0, int i1, int j0, int j1) {
    for (int i = i0; i < i1; ++i) {
      for (int j = j0; j < j1; ++j) {
        double s = 0.0;
        for (int p = 0; p < k; ++p) s += a[static_cast<long>(i) * lda + p] * b[static_cast<long>(p) * ldb + j];
        c[static_cast<long>(i) * ldc + j] += alpha * s;
      }
    }
  };
  edge(0, m4, n4, n);
  edge(m4, m, 0, n);
}

}  // namespace

void gemm_neon(Trans ta, Trans tb, int m, int n, int k, double alpha, const double* a, int lda, const double* b,
               int ldb, double beta, double* c, int ldc) {
  scale_output(m, n, beta, c, ldc);
  if (m == 0 || n == 0 || k == 0 || alpha == 0.0) return;
  std::vector<double> abuf, bbuf;
  if (ta == Trans::kYes) {
    abuf.resize(static_cast<std::size_t>(m) * k);
    pack(ta, m, k, a, lda, abuf.data());
    a = abuf.data();
    lda = k;
  }
  if (tb == Trans::kYes) {
    bbuf.resize(static_cast<std::size_t>(k) * n);
    pack(tb, k, n, b, ldb, bbuf.data());
    b = bbuf.data();
    ldb = n;
  }
  gemm_nn(m, n, k, alpha, a, lda, b, ldb, c, ldc);
}

}  // namespace sparsecap::nn::detail

#endif

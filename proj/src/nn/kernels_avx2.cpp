#include <immintrin.h>

#include <vector>

#include "kernels_impl.hpp"

namespace sparsecap::nn::detail {
namespace {

// C += alpha * A * B for dense row-major A (m x k, lda) and B (k x n, ldb).
void gemm_nn(int m, int n, int k, double alpha, const double* a, int lda, const double* b, int ldb, double* c, int ldc) {
  const __m256d va = _mm256_set1_pd(alpha);
  const int m4 = m - m % 4;
  const int n8 = n - n % 8;
  for (int i = 0; i < m4; i += 4) {
    const double* a0 = a + static_cast<long>(i) * lda;
    const double* a1 = a0 + lda;
    const double* a2 = a1 + lda;
    const double* a3 = a2 + lda;
    for (int j = 0; j < n8; j += 8) {
      __m256d c00 = _mm256_setzero_pd(), c01 = _mm256_setzero_pd();
      __m256d c10 = _mm256_setzero_pd(), c11 = _mm256_setzero_pd();
      __m256d c20 = _mm256_setzero_pd(), c21 = _mm256_setzero_pd();
      __m256d c30 = _mm256_setzero_pd(), c31 = _mm256_setzero_pd();
      const double* bp = b + j;
      for (int p = 0; p < k; ++p, bp += ldb) {
        const __m256d b0 = _mm256_loadu_pd(bp);
        const __m256d b1 = _mm256_loadu_pd(bp + 4);
        __m256d x = _mm256_broadcast_sd(a0 + p);
        c00 = _mm256_fmadd_pd(x, b0, c00);
        c01 = _mm256_fmadd_pd(x, b1, c01);
        x = _mm256_broadcast_sd(a1 + p);
        c10 = _mm256_fmadd_pd(x, b0, c10);
        c11 = _mm256_fmadd_pd(x, b1, c11);
        x = _mm256_broadcast_sd(a2 + p);
        c20 = _mm256_fmadd_pd(x, b0, c20);
        c21 = _mm256_fmadd_pd(x, b1, c21);
        x = _mm256_broadcast_sd(a3 + p);
        c30 = _mm256_fmadd_pd(x, b0, c30);
        c31 = _mm256_fmadd_pd(x, b1, c31);
      }
      double* r0 = c + static_cast<long>(i) * ldc + j;
      double* r1 = r0 + ldc;
      double* r2 = r1 + ldc;
      double* r3 = r2 + ldc;
      _mm256_storeu_pd(r0, _mm256_fmadd_pd(va, c00, _mm256_loadu_pd(r0)));
      _mm256_storeu_pd(r0 + 4, _mm256_fmadd_pd(va, c01, _mm256_loadu_pd(r0 + 4)));
      _mm256_storeu_pd(r1, _mm256_fmadd_pd(va, c10, _mm256_loadu_pd(r1)));
      _mm256_storeu_pd(r1 + 4, _mm256_fmadd_pd(va, c11, _mm256_loadu_pd(r1 + 4)));
      _mm256_storeu_pd(r2, _mm256_fmadd_pd(va, c20, _mm256_loadu_pd(r2)));
      _mm256_storeu_pd(r2 + 4, _mm256_fmadd_pd(va, c21, _mm256_loadu_pd(r2 + 4)));
      _mm256_storeu_pd(r3, _mm256_fmadd_pd(va, c30, _mm256_loadu_pd(r3)));
      _mm256_storeu_pd(r3 + 4, _mm256_fmadd_pd(va, c31, _mm256_loadu_pd(r3 + 4)));
    }
  }
  // Remainder rows (all columns) and remainder columns of the full row blocks.
  auto edge = [&](int i0, int i1, int j0, int j1) {
    for (int i = i0; i < i1; ++i) {
      const double* arow = a + static_cast<long>(i) * lda;
      double* crow = c + static_cast<long>(i) * ldc;
      for (int j = j0; j < j1; ++j) {
        double s = 0.0;
        for (int p = 0; p < k; ++p) s += arow[p] * b[static_cast<long>(p) * ldb + j];
        crow[j] += alpha * s;
      }
    }
  };
  edge(0, m4, n8, n);
  edge(m4, m, 0, n);
}

}  // namespace

void gemm_avx2(Trans ta, Trans tb, int m, int n, int k, double alpha, const double* a, int lda, const double* b,
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

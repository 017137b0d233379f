#pragma once

#include <string_view>

namespace sparsecap::nn {

// Dense row-major GEMM with a portable reference kernel and SIMD variants.
// The active backend is picked on first use from the CPU's features; the
// environment variable SPARSECAP_KERNELS=scalar|avx2|neon overrides it.

enum class KernelBackend { kScalar, kAvx2, kNeon };
enum class Trans { kNo, kYes };

std::string_view backend_name(KernelBackend backend);
/// Throws ValidationError for unknown names.
KernelBackend parse_backend(std::string_view name);
/// Compiled in and supported by this CPU.
bool backend_available(KernelBackend backend);
KernelBackend active_backend();
/// Throws ValidationError if the backend is not available.
void set_backend(KernelBackend backend);

/// C = alpha * op(A) * op(B) + beta * C where op(A) is m x k and op(B) is k x n.
/// With beta == 0, C is overwritten without being read.
void gemm(Trans ta, Trans tb, int m, int n, int k, double alpha, const double* a, int lda, const double* b, int ldb,
          double beta, double* c, int ldc);

/// Same as gemm on an explicit backend.
void gemm_with(KernelBackend backend, Trans ta, Trans tb, int m, int n, int k, double alpha, const double* a, int lda,
               const double* b, int ldb, double beta, double* c, int ldc);

}  // namespace sparsecap::nn

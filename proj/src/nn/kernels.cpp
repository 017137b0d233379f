#include "sparsecap/nn/kernels.hpp"

#include <atomic>
#include <cstdlib>
#include <string>

#include "kernels_impl.hpp"
#include "sparsecap/errors.hpp"

namespace sparsecap::nn {
namespace {

detail::GemmFn resolve(KernelBackend backend) {
  switch (backend) {
#if defined(SPARSECAP_HAVE_AVX2)
    case KernelBackend::kAvx2:
      return &detail::gemm_avx2;
#endif
#if defined(SPARSECAP_HAVE_NEON)
    case KernelBackend::kNeon:
      return &detail::gemm_neon;
#endif
    default:
      return &detail::gemm_scalar;
  }
}

KernelBackend detect() {
  if (const char* env = std::getenv("SPARSECAP_KERNELS"); env != nullptr && *env != '\0') {
    const KernelBackend requested = parse_backend(env);
    if (!backend_available(requested)) {
      throw ValidationError("SPARSECAP_KERNELS=" + std::string(env) + " is not available on this machine");
    }
    return requested;
  }
  if (backend_available(KernelBackend::kAvx2)) return KernelBackend::kAvx2;
  if (backend_available(KernelBackend::kNeon)) return KernelBackend::kNeon;
  return KernelBackend::kScalar;
}

struct Dispatch {
  std::atomic<KernelBackend> backend;
  std::atomic<detail::GemmFn> fn;
  Dispatch() {
    const KernelBackend b = detect();
    backend.store(b);
    fn.store(resolve(b));
  }
};

Dispatch& dispatch() {
  static Dispatch d;
  return d;
}

}  // namespace

std::string_view backend_name(KernelBackend backend) {
  switch (backend) {
    case KernelBackend::kScalar:
      return "scalar";
    case KernelBackend::kAvx2:
      return "avx2";
    case KernelBackend::kNeon:
      return "neon";
  }
  return "unknown";
}

KernelBackend parse_backend(std::string_view name) {
  if (name == "scalar") return KernelBackend::kScalar;
  if (name == "avx2") return KernelBackend::kAvx2;
  if (name == "neon") return KernelBackend::kNeon;
  throw ValidationError("unknown kernel backend '" + std::string(name) + "' (expected scalar, avx2 or neon)");
}

bool backend_available(KernelBackend backend) {
  switch (backend) {
    case KernelBackend::kScalar:
      return true;
    case KernelBackend::kAvx2:
#if defined(SPARSECAP_HAVE_AVX2)
      return __builtin_cpu_supports("avx2") && __builtin_cpu_supports("fma");
#else
      return false;
#endif
    case KernelBackend::kNeon:
#if defined(SPARSECAP_HAVE_NEON)
      return true;
#else
      return false;
#endif
  }
  return false;
}

KernelBackend active_backend() { return dispatch().backend.load(); }

void set_backend(KernelBackend backend) {
  if (!backend_available(backend)) {
    throw ValidationError("kernel backend '" + std::string(backend_name(backend)) + "' is not available");
  }
  dispatch().backend.store(backend);
  dispatch().fn.store(resolve(backend));
}

void gemm(Trans ta, Trans tb, int m, int n, int k, double alpha, const double* a, int lda, const double* b, int ldb,
          double beta, double* c, int ldc) {
  dispatch().fn.load()(ta, tb, m, n, k, alpha, a, lda, b, ldb, beta, c, ldc);
}

void gemm_with(KernelBackend backend, Trans ta, Trans tb, int m, int n, int k, double alpha, const double* a, int lda,
               const double* b, int ldb, double beta, double* c, int ldc) {
  if (!backend_available(backend)) {
    throw ValidationError("kernel backend '" + std::string(backend_name(backend)) + "' is not available");
  }
  resolve(backend)(ta, tb, m, n, k, alpha, a, lda, b, ldb, beta, c, ldc);
}

}  // namespace sparsecap::nn

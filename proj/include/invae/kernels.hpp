#pragma once

// Data-parallel inner loops. Every routine has a scalar reference version and,
// on x86-64 hosts with AVX2+FMA, a vectorized version. The active table is
// chosen once at startup (`INVAE_KERNELS=scalar` forces the reference path) and
// the two are held equivalent by tests/test_kernels.cpp.

#include <cstddef>

namespace invae::kernels {

struct KernelTable {
  const char* name;

  /// C[m×n] = A[m×k] · B[k×n] (or += when accumulate). Row-major with leading
  /// dimensions. Each C entry is summed over k in increasing order.
  void (*gemm)(std::size_t m, std::size_t n, std::size_t k, const double* a, std::size_t lda,
               const double* b, std::size_t ldb, double* c, std::size_t ldc, bool accumulate);

  /// Σ x[i]·y[i], summed in index order.
  double (*dot)(std::size_t n, const double* x, const double* y);

  /// y += alpha·x
  void (*axpy)(std::size_t n, double alpha, const double* x, double* y);

  /// out[i,j] = ‖a_i − b_j‖² for a: m×d, b: n×d (row-major, dense), out: m×n.
  void (*sq_dist)(std::size_t m, std::size_t n, std::size_t d, const double* a, const double* b,
                  double* out);

  /// y[i] = exp(x[i]). In-place (x == y) is allowed.
  void (*exp)(std::size_t n, const double* x, double* y);
};

const KernelTable& scalar_table();

/// nullptr when the AVX2 variant is not compiled in or the CPU lacks AVX2/FMA.
const KernelTable* avx2_table();

/// The table all library code routes through.
const KernelTable& active();

/// Replace the active table; returns the previous one. Intended for tests and
/// benchmarks; not synchronized with concurrent kernel calls.
const KernelTable& set_active(const KernelTable& table);

class ScopedKernels {
 public:
  explicit ScopedKernels(const KernelTable& table) : previous_(&set_active(table)) {}
  ~ScopedKernels() { set_active(*previous_); }
  ScopedKernels(const ScopedKernels&) = delete;
  ScopedKernels& operator=(const ScopedKernels&) = delete;

 private:
  const KernelTable* previous_;
};

}  // namespace invae::kernels

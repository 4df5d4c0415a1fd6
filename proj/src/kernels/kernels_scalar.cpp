#include <cmath>

#include "kernels_internal.hpp"

namespace invae::kernels::detail {
namespace {

void gemm_scalar(std::size_t m, std::size_t n, std::size_t k, const double* a, std::size_t lda,
                 const double* b, std::size_t ldb, double* c, std::size_t ldc, bool accumulate) {
  for (std::size_t i = 0; i < m; ++i) {
    double* crow = c + i * ldc;
    if (!accumulate) {
      for (std::size_t j = 0; j < n; ++j) crow[j] = 0.0;
    }
    const double* arow = a + i * lda;
    for (std::size_t p = 0; p < k; ++p) {
      const double av = arow[p];
      const double* brow = b + p * ldb;
      for (std::size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
    }
  }
}

double dot_scalar(std::size_t n, const double* x, const double* y) {
  double s = 0.0;
  for (std::size_t i = 0; i < n; ++i) s += x[i] * y[i];
  return s;
}

void axpy_scalar(std::size_t n, double alpha, const double* x, double* y) {
  for (std::size_t i = 0; i < n; ++i) y[i] += alpha * x[i];
}

void sq_dist_scalar(std::size_t m, std::size_t n, std::size_t d, const double* a, const double* b,
                    double* out) {
  for (std::size_t i = 0; i < m; ++i) {
    const double* ai = a + i * d;
    for (std::size_t j = 0; j < n; ++j) {
      const double* bj = b + j * d;
      double s = 0.0;
      for (std::size_t c = 0; c < d; ++c) {
        const double diff = ai[c] - bj[c];
        s += diff * diff;
      }
      out[i * n + j] = s;
    }
  }
}

void exp_scalar(std::size_t n, const double* x, double* y) {
  for (std::size_t i = 0; i < n; ++i) y[i] = std::exp(x[i]);
}

}  // namespace

const KernelTable kScalarTable{
    "scalar", gemm_scalar, dot_scalar, axpy_scalar, sq_dist_scalar, exp_scalar,
};

}  // namespace invae::kernels::detail

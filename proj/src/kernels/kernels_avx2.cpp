// Compiled with -mavx2 -mfma. Only reached through the dispatch table after a
// CPUID check.

#include <immintrin.h>

#include <algorithm>
#include <cstdint>
#include <vector>

#include "kernels_internal.hpp"

namespace invae::kernels::detail {
namespace {

constexpr std::size_t kMr = 4;   // rows per micro-tile
constexpr std::size_t kNr = 8;   // columns per micro-tile (two ymm)
constexpr std::size_t kMc = 64;  // rows of A kept hot per pass over B

inline __m256i lane_mask(std::size_t valid) {
  alignas(32) static const std::int64_t table[8] = {-1, -1, -1, -1, 0, 0, 0, 0};
  // valid in [0, 4]: first `valid` lanes active.
  return _mm256_loadu_si256(reinterpret_cast<const __m256i*>(table + 4 - valid));
}

// C tile [rows × cols] with rows ≤ kMr, cols ≤ kNr.
template <std::size_t Rows>
inline void micro_tile(std::size_t cols, std::size_t k, const double* a, std::size_t lda,
                       const double* b, std::size_t ldb, double* c, std::size_t ldc,
                       bool accumulate) {
  const std::size_t lo = std::min<std::size_t>(cols, 4);
  const std::size_t hi = cols > 4 ? cols - 4 : 0;
  const __m256i m0 = lane_mask(lo);
  const __m256i m1 = lane_mask(hi);
  const bool full = cols == kNr;

  __m256d acc0[Rows];
  __m256d acc1[Rows];
  for (std::size_t r = 0; r < Rows; ++r) {
    if (accumulate) {
      acc0[r] = full ? _mm256_loadu_pd(c + r * ldc) : _mm256_maskload_pd(c + r * ldc, m0);
      acc1[r] = full ? _mm256_loadu_pd(c + r * ldc + 4)
                     : (hi ? _mm256_maskload_pd(c + r * ldc + 4, m1) : _mm256_setzero_pd());
    } else {
      acc0[r] = _mm256_setzero_pd();
      acc1[r] = _mm256_setzero_pd();
    }
  }

  for (std::size_t p = 0; p < k; ++p) {
    const double* bp = b + p * ldb;
    __m256d b0;
    __m256d b1;
    if (full) {
      b0 = _mm256_loadu_pd(bp);
      b1 = _mm256_loadu_pd(bp + 4);
    } else {
      b0 = _mm256_maskload_pd(bp, m0);
      b1 = hi ? _mm256_maskload_pd(bp + 4, m1) : _mm256_setzero_pd();
    }
    for (std::size_t r = 0; r < Rows; ++r) {
      const __m256d av = _mm256_broadcast_sd(a + r * lda + p);
      acc0[r] = _mm256_fmadd_pd(av, b0, acc0[r]);
      acc1[r] = _mm256_fmadd_pd(av, b1, acc1[r]);
    }
  }

  for (std::size_t r = 0; r < Rows; ++r) {
    if (full) {
      _mm256_storeu_pd(c + r * ldc, acc0[r]);
      _mm256_storeu_pd(c + r * ldc + 4, acc1[r]);
    } else {
      _mm256_maskstore_pd(c + r * ldc, m0, acc0[r]);
      if (hi) _mm256_maskstore_pd(c + r * ldc + 4, m1, acc1[r]);
    }
  }
}

void gemm_avx2(std::size_t m, std::size_t n, std::size_t k, const double* a, std::size_t lda,
               const double* b, std::size_t ldb, double* c, std::size_t ldc, bool accumulate) {
  if (m == 0 || n == 0) return;
  if (k == 0) {
    if (!accumulate) {
      for (std::size_t i = 0; i < m; ++i) std::fill(c + i * ldc, c + i * ldc + n, 0.0);
    }
    return;
  }
  for (std::size_t i0 = 0; i0 < m; i0 += kMc) {
    const std::size_t i1 = std::min(m, i0 + kMc);
    for (std::size_t j = 0; j < n; j += kNr) {
      const std::size_t cols = std::min(kNr, n - j);
      std::size_t i = i0;
      for (; i + kMr <= i1; i += kMr) {
        micro_tile<kMr>(cols, k, a + i * lda, lda, b + j, ldb, c + i * ldc + j, ldc, accumulate);
      }
      for (; i < i1; ++i) {
        micro_tile<1>(cols, k, a + i * lda, lda, b + j, ldb, c + i * ldc + j, ldc, accumulate);
      }
    }
  }
}

double dot_avx2(std::size_t n, const double* x, const double* y) {
  __m256d acc = _mm256_setzero_pd();
  std::size_t i = 0;
  for (; i + 4 <= n; i += 4) {
    acc = _mm256_fmadd_pd(_mm256_loadu_pd(x + i), _mm256_loadu_pd(y + i), acc);
  }
  alignas(32) double lanes[4];
  _mm256_store_pd(lanes, acc);
  double s = (lanes[0] + lanes[1]) + (lanes[2] + lanes[3]);
  for (; i < n; ++i) s += x[i] * y[i];
  return s;
}

void axpy_avx2(std::size_t n, double alpha, const double* x, double* y) {
  const __m256d av = _mm256_set1_pd(alpha);
  std::size_t i = 0;
  for (; i + 4 <= n; i += 4) {
    _mm256_storeu_pd(y + i, _mm256_fmadd_pd(av, _mm256_loadu_pd(x + i), _mm256_loadu_pd(y + i)));
  }
  for (; i < n; ++i) y[i] += alpha * x[i];
}

void sq_dist_avx2(std::size_t m, std::size_t n, std::size_t d, const double* a, const double* b,
                  double* out) {
  // Transposed copy of b so the j loop is contiguous.
  std::vector<double> bt(d * n);
  for (std::size_t j = 0; j < n; ++j) {
    for (std::size_t c = 0; c < d; ++c) bt[c * n + j] = b[j * d + c];
  }
  for (std::size_t i = 0; i < m; ++i) {
    const double* ai = a + i * d;
    double* orow = out + i * n;
    std::size_t j = 0;
    for (; j + 4 <= n; j += 4) {
      __m256d acc = _mm256_setzero_pd();
      for (std::size_t c = 0; c < d; ++c) {
        const __m256d diff =
            _mm256_sub_pd(_mm256_broadcast_sd(ai + c), _mm256_loadu_pd(bt.data() + c * n + j));
        acc = _mm256_fmadd_pd(diff, diff, acc);
      }
      _mm256_storeu_pd(orow + j, acc);
    }
    for (; j < n; ++j) {
      double s = 0.0;
      for (std::size_t c = 0; c < d; ++c) {
        const double diff = ai[c] - bt[c * n + j];
        s = __builtin_fma(diff, diff, s);
      }
      orow[j] = s;
    }
  }
}

// exp(x) = 2^n · e^r with n = round(x / ln2), |r| ≤ ln2/2, and a degree-13
// Taylor polynomial for e^r (truncation error below 1e-17 relative).
inline __m256d exp4(__m256d x) {
  const __m256d hi_clamp = _mm256_set1_pd(709.78);
  const __m256d lo_limit = _mm256_set1_pd(-708.39);
  const __m256d log2e = _mm256_set1_pd(1.4426950408889634);
  const __m256d ln2_hi = _mm256_set1_pd(6.93145751953125e-1);
  const __m256d ln2_lo = _mm256_set1_pd(1.42860682030941723212e-6);

  const __m256d x_in = x;
  const __m256d nan = _mm256_cmp_pd(x, x, _CMP_UNORD_Q);
  const __m256d underflow = _mm256_cmp_pd(x, lo_limit, _CMP_LT_OQ);
  const __m256d overflow = _mm256_cmp_pd(x, _mm256_set1_pd(709.782712893384), _CMP_GT_OQ);
  x = _mm256_min_pd(x, hi_clamp);
  x = _mm256_max_pd(x, lo_limit);

  const __m256d nf = _mm256_round_pd(_mm256_mul_pd(x, log2e),
                                     _MM_FROUND_TO_NEAREST_INT | _MM_FROUND_NO_EXC);
  __m256d r = _mm256_fnmadd_pd(nf, ln2_hi, x);
  r = _mm256_fnmadd_pd(nf, ln2_lo, r);

  static constexpr double kInvFact[] = {
      1.0 / 6227020800.0, 1.0 / 479001600.0, 1.0 / 39916800.0, 1.0 / 3628800.0,
      1.0 / 362880.0,     1.0 / 40320.0,     1.0 / 5040.0,     1.0 / 720.0,
      1.0 / 120.0,        1.0 / 24.0,        1.0 / 6.0,        0.5,
      1.0,                1.0};
  __m256d poly = _mm256_set1_pd(kInvFact[0]);
  for (std::size_t i = 1; i < sizeof(kInvFact) / sizeof(kInvFact[0]); ++i) {
    poly = _mm256_fmadd_pd(poly, r, _mm256_set1_pd(kInvFact[i]));
  }

  // 2^n through the exponent field, split in two factors so both stay normal.
  const __m256d half_f = _mm256_floor_pd(_mm256_mul_pd(nf, _mm256_set1_pd(0.5)));
  const __m256d rest_f = _mm256_sub_pd(nf, half_f);
  const __m256i bias = _mm256_set1_epi64x(1023);
  auto pow2 = [&](__m256d e) {
    const __m256i e64 = _mm256_cvtepi32_epi64(_mm256_cvtpd_epi32(e));
    return _mm256_castsi256_pd(_mm256_slli_epi64(_mm256_add_epi64(e64, bias), 52));
  };
  __m256d result = _mm256_mul_pd(_mm256_mul_pd(poly, pow2(half_f)), pow2(rest_f));
  result = _mm256_andnot_pd(underflow, result);
  result = _mm256_blendv_pd(result, _mm256_set1_pd(__builtin_inf()), overflow);
  return _mm256_blendv_pd(result, x_in, nan);
}

void exp_avx2(std::size_t n, const double* x, double* y) {
  std::size_t i = 0;
  for (; i + 4 <= n; i += 4) _mm256_storeu_pd(y + i, exp4(_mm256_loadu_pd(x + i)));
  if (i < n) {
    // Pad the tail so every element goes through the same vector code.
    alignas(32) double buf[4] = {0.0, 0.0, 0.0, 0.0};
    const std::size_t rest = n - i;
    for (std::size_t t = 0; t < rest; ++t) buf[t] = x[i + t];
    _mm256_store_pd(buf, exp4(_mm256_load_pd(buf)));
    for (std::size_t t = 0; t < rest; ++t) y[i + t] = buf[t];
  }
}

}  // namespace

const KernelTable kAvx2Table{
    "avx2", gemm_avx2, dot_avx2, axpy_avx2, sq_dist_avx2, exp_avx2,
};

}  // namespace invae::kernels::detail

// Compiled with -mavx2 -mfma; only reached after a CPUID check.
#include <immintrin.h>

#include "posefabric/kernels/kernels.hpp"

namespace posefabric::kernels {
namespace avx2 {

namespace {

inline double hsum(__m256d v) {
  __m128d lo = _mm256_castpd256_pd128(v);
  __m128d hi = _mm256_extractf128_pd(v, 1);
  lo = _mm_add_pd(lo, hi);
  __m128d sh = _mm_unpackhi_pd(lo, lo);
  return _mm_cvtsd_f64(_mm_add_sd(lo, sh));
}

// One row of C, columns [j, n).
inline void gemm_row(int n, int k, const real* ai, const real* b, int ldb, real* ci, int j) {
  for (; j + 8 <= n; j += 8) {
    __m256d c0 = _mm256_loadu_pd(ci + j);
    __m256d c1 = _mm256_loadu_pd(ci + j + 4);
    for (int p = 0; p < k; ++p) {
      const real* bp = b + static_cast<std::size_t>(p) * ldb + j;
      const __m256d av = _mm256_broadcast_sd(ai + p);
      c0 = _mm256_fmadd_pd(av, _mm256_loadu_pd(bp), c0);
      c1 = _mm256_fmadd_pd(av, _mm256_loadu_pd(bp + 4), c1);
    }
    _mm256_storeu_pd(ci + j, c0);
    _mm256_storeu_pd(ci + j + 4, c1);
  }
  for (; j + 4 <= n; j += 4) {
    __m256d c0 = _mm256_loadu_pd(ci + j);
    for (int p = 0; p < k; ++p)
      c0 = _mm256_fmadd_pd(_mm256_broadcast_sd(ai + p),
                           _mm256_loadu_pd(b + static_cast<std::size_t>(p) * ldb + j), c0);
    _mm256_storeu_pd(ci + j, c0);
  }
  for (; j < n; ++j) {
    real acc = ci[j];
    for (int p = 0; p < k; ++p) acc += ai[p] * b[static_cast<std::size_t>(p) * ldb + j];
    ci[j] = acc;
  }
}

}  // namespace

void gemm_nn(int m, int n, int k, const real* a, int lda, const real* b, int ldb, real* c,
             int ldc) {
  int i = 0;
  for (; i + 4 <= m; i += 4) {
    const real* a0 = a + static_cast<std::size_t>(i) * lda;
    const real* a1 = a0 + lda;
    const real* a2 = a1 + lda;
    const real* a3 = a2 + lda;
    real* c0p = c + static_cast<std::size_t>(i) * ldc;
    real* c1p = c0p + ldc;
    real* c2p = c1p + ldc;
    real* c3p = c2p + ldc;
    int j = 0;
    for (; j + 8 <= n; j += 8) {
      __m256d c00 = _mm256_loadu_pd(c0p + j), c01 = _mm256_loadu_pd(c0p + j + 4);
      __m256d c10 = _mm256_loadu_pd(c1p + j), c11 = _mm256_loadu_pd(c1p + j + 4);
      __m256d c20 = _mm256_loadu_pd(c2p + j), c21 = _mm256_loadu_pd(c2p + j + 4);
      __m256d c30 = _mm256_loadu_pd(c3p + j), c31 = _mm256_loadu_pd(c3p + j + 4);
      for (int p = 0; p < k; ++p) {
        const real* bp = b + static_cast<std::size_t>(p) * ldb + j;
        const __m256d b0 = _mm256_loadu_pd(bp);
        const __m256d b1 = _mm256_loadu_pd(bp + 4);
        __m256d av = _mm256_broadcast_sd(a0 + p);
        c00 = _mm256_fmadd_pd(av, b0, c00);
        c01 = _mm256_fmadd_pd(av, b1, c01);
        av = _mm256_broadcast_sd(a1 + p);
        c10 = _mm256_fmadd_pd(av, b0, c10);
        c11 = _mm256_fmadd_pd(av, b1, c11);
        av = _mm256_broadcast_sd(a2 + p);
        c20 = _mm256_fmadd_pd(av, b0, c20);
        c21 = _mm256_fmadd_pd(av, b1, c21);
        av = _mm256_broadcast_sd(a3 + p);
        c30 = _mm256_fmadd_pd(av, b0, c30);
        c31 = _mm256_fmadd_pd(av, b1, c31);
      }
      _mm256_storeu_pd(c0p + j, c00);
      _mm256_storeu_pd(c0p + j + 4, c01);
      _mm256_storeu_pd(c1p + j, c10);
      _mm256_storeu_pd(c1p + j + 4, c11);
      _mm256_storeu_pd(c2p + j, c20);
      _mm256_storeu_pd(c2p + j + 4, c21);
      _mm256_storeu_pd(c3p + j, c30);
      _mm256_storeu_pd(c3p + j + 4, c31);
    }
    gemm_row(n, k, a0, b, ldb, c0p, j);
    gemm_row(n, k, a1, b, ldb, c1p, j);
    gemm_row(n, k, a2, b, ldb, c2p, j);
    gemm_row(n, k, a3, b, ldb, c3p, j);
  }
  for (; i < m; ++i)
    gemm_row(n, k, a + static_cast<std::size_t>(i) * lda, b, ldb,
             c + static_cast<std::size_t>(i) * ldc, 0);
}

real dot(std::size_t n, const real* x, const real* y) {
  __m256d s0 = _mm256_setzero_pd(), s1 = _mm256_setzero_pd();
  std::size_t i = 0;
  for (; i + 8 <= n; i += 8) {
    s0 = _mm256_fmadd_pd(_mm256_loadu_pd(x + i), _mm256_loadu_pd(y + i), s0);
    s1 = _mm256_fmadd_pd(_mm256_loadu_pd(x + i + 4), _mm256_loadu_pd(y + i + 4), s1);
  }
  for (; i + 4 <= n; i += 4) s0 = _mm256_fmadd_pd(_mm256_loadu_pd(x + i), _mm256_loadu_pd(y + i), s0);
  real acc = hsum(_mm256_add_pd(s0, s1));
  for (; i < n; ++i) acc += x[i] * y[i];
  return acc;
}

void gemm_nt(int m, int n, int k, const real* a, int lda, const real* b, int ldb, real* c,
             int ldc) {
  for (int i = 0; i < m; ++i) {
    const real* ai = a + static_cast<std::size_t>(i) * lda;
    real* ci = c + static_cast<std::size_t>(i) * ldc;
    for (int j = 0; j < n; ++j)
      ci[j] += dot(static_cast<std::size_t>(k), ai, b + static_cast<std::size_t>(j) * ldb);
  }
}

void axpy(std::size_t n, real alpha, const real* x, real* y) {
  const __m256d av = _mm256_set1_pd(alpha);
  std::size_t i = 0;
  for (; i + 8 <= n; i += 8) {
    _mm256_storeu_pd(y + i, _mm256_fmadd_pd(av, _mm256_loadu_pd(x + i), _mm256_loadu_pd(y + i)));
    _mm256_storeu_pd(y + i + 4,
                     _mm256_fmadd_pd(av, _mm256_loadu_pd(x + i + 4), _mm256_loadu_pd(y + i + 4)));
  }
  for (; i + 4 <= n; i += 4)
    _mm256_storeu_pd(y + i, _mm256_fmadd_pd(av, _mm256_loadu_pd(x + i), _mm256_loadu_pd(y + i)));
  for (; i < n; ++i) y[i] += alpha * x[i];
}

void gemm_tn(int m, int n, int k, const real* a, int lda, const real* b, int ldb, real* c,
             int ldc) {
  for (int p = 0; p < k; ++p) {
    const real* ap = a + static_cast<std::size_t>(p) * lda;
    const real* bp = b + static_cast<std::size_t>(p) * ldb;
    for (int i = 0; i < m; ++i) axpy(static_cast<std::size_t>(n), ap[i], bp, c + static_cast<std::size_t>(i) * ldc);
  }
}

void relu_forward(std::size_t n, const real* x, real* y) {
  const __m256d zero = _mm256_setzero_pd();
  std::size_t i = 0;
  for (; i + 4 <= n; i += 4) {
    const __m256d v = _mm256_loadu_pd(x + i);
    // Keeps the scalar semantics (x > 0 ? x : 0) bit-for-bit, including -0 and NaN.
    const __m256d mask = _mm256_cmp_pd(v, zero, _CMP_GT_OQ);
    _mm256_storeu_pd(y + i, _mm256_and_pd(mask, v));
  }
  for (; i < n; ++i) y[i] = x[i] > 0 ? x[i] : 0;
}

void relu_backward(std::size_t n, const real* x, const real* gy, real* gx) {
  const __m256d zero = _mm256_setzero_pd();
  std::size_t i = 0;
  for (; i + 4 <= n; i += 4) {
    const __m256d mask = _mm256_cmp_pd(_mm256_loadu_pd(x + i), zero, _CMP_GT_OQ);
    const __m256d g = _mm256_and_pd(mask, _mm256_loadu_pd(gy + i));
    _mm256_storeu_pd(gx + i, _mm256_add_pd(_mm256_loadu_pd(gx + i), g));
  }
  for (; i < n; ++i)
    if (x[i] > 0) gx[i] += gy[i];
}

void sum_squares_planes(std::size_t plane, int d, const real* x, real* out) {
  std::size_t p = 0;
  for (; p + 4 <= plane; p += 4) {
    __m256d acc = _mm256_setzero_pd();
    for (int j = 0; j < d; ++j) {
      const __m256d v = _mm256_loadu_pd(x + static_cast<std::size_t>(j) * plane + p);
      acc = _mm256_fmadd_pd(v, v, acc);
    }
    _mm256_storeu_pd(out + p, acc);
  }
  for (; p < plane; ++p) {
    real acc = 0;
    for (int j = 0; j < d; ++j) {
      const real v = x[static_cast<std::size_t>(j) * plane + p];
      acc += v * v;
    }
    out[p] = acc;
  }
}

}  // namespace avx2

const Table& avx2_table_impl() {
  static const Table t{Backend::avx2,      avx2::gemm_nn,      avx2::gemm_nt,
                       avx2::gemm_tn,      avx2::axpy,         avx2::dot,
                       avx2::relu_forward, avx2::relu_backward, avx2::sum_squares_planes};
  return t;
}

}  // namespace posefabric::kernels

#include "posefabric/kernels/kernels.hpp"

namespace posefabric::kernels {
namespace scalar {

void gemm_nn(int m, int n, int k, const real* a, int lda, const real* b, int ldb, real* c,
             int ldc) {
  for (int i = 0; i < m; ++i) {
    real* ci = c + static_cast<std::size_t>(i) * ldc;
    for (int p = 0; p < k; ++p) {
      const real av = a[static_cast<std::size_t>(i) * lda + p];
      const real* bp = b + static_cast<std::size_t>(p) * ldb;
      for (int j = 0; j < n; ++j) ci[j] += av * bp[j];
    }
  }
}

void gemm_nt(int m, int n, int k, const real* a, int lda, const real* b, int ldb, real* c,
             int ldc) {
  for (int i = 0; i < m; ++i) {
    const real* ai = a + static_cast<std::size_t>(i) * lda;
    for (int j = 0; j < n; ++j) {
      const real* bj = b + static_cast<std::size_t>(j) * ldb;
      real acc = 0;
      for (int p = 0; p < k; ++p) acc += ai[p] * bj[p];
      c[static_cast<std::size_t>(i) * ldc + j] += acc;
    }
  }
}

void gemm_tn(int m, int n, int k, const real* a, int lda, const real* b, int ldb, real* c,
             int ldc) {
  for (int p = 0; p < k; ++p) {
    const real* ap = a + static_cast<std::size_t>(p) * lda;
    const real* bp = b + static_cast<std::size_t>(p) * ldb;
    for (int i = 0; i < m; ++i) {
      const real av = ap[i];
      real* ci = c + static_cast<std::size_t>(i) * ldc;
      for (int j = 0; j < n; ++j) ci[j] += av * bp[j];
    }
  }
}

void axpy(std::size_t n, real alpha, const real* x, real* y) {
  for (std::size_t i = 0; i < n; ++i) y[i] += alpha * x[i];
}

real dot(std::size_t n, const real* x, const real* y) {
  real acc = 0;
  for (std::size_t i = 0; i < n; ++i) acc += x[i] * y[i];
  return acc;
}

void relu_forward(std::size_t n, const real* x, real* y) {
  for (std::size_t i = 0; i < n; ++i) y[i] = x[i] > 0 ? x[i] : 0;
}

void relu_backward(std::size_t n, const real* x, const real* gy, real* gx) {
  for (std::size_t i = 0; i < n; ++i)
    if (x[i] > 0) gx[i] += gy[i];
}

void sum_squares_planes(std::size_t plane, int d, const real* x, real* out) {
  for (std::size_t p = 0; p < plane; ++p) out[p] = 0;
  for (int j = 0; j < d; ++j) {
    const real* xj = x + static_cast<std::size_t>(j) * plane;
    for (std::size_t p = 0; p < plane; ++p) out[p] += xj[p] * xj[p];
  }
}

}  // namespace scalar

const Table& scalar_table() {
  static const Table t{Backend::scalar,      scalar::gemm_nn,      scalar::gemm_nt,
                       scalar::gemm_tn,      scalar::axpy,         scalar::dot,
                       scalar::relu_forward, scalar::relu_backward, scalar::sum_squares_planes};
  return t;
}

}  // namespace posefabric::kernels

#pragma once

#include <cstddef>
#include <string_view>

#include "posefabric/core/tensor.hpp"

// Inner-loop arithmetic used by the tensor ops. Every routine has a portable
// scalar reference and, on x86-64, an AVX2/FMA variant. The variant is
// chosen once at startup from CPUID and can be forced for testing.
namespace posefabric::kernels {

enum class Backend { scalar, avx2 };

struct Table {
  Backend backend;

  // Row-major, accumulating: C += op(A) * op(B).
  void (*gemm_nn)(int m, int n, int k, const real* a, int lda, const real* b, int ldb, real* c,
                  int ldc);
  void (*gemm_nt)(int m, int n, int k, const real* a, int lda, const real* b, int ldb, real* c,
                  int ldc);
  void (*gemm_tn)(int m, int n, int k, const real* a, int lda, const real* b, int ldb, real* c,
                  int ldc);

  void (*axpy)(std::size_t n, real alpha, const real* x, real* y);
  real (*dot)(std::size_t n, const real* x, const real* y);

  void (*relu_forward)(std::size_t n, const real* x, real* y);
  // gx += gy where x > 0.
  void (*relu_backward)(std::size_t n, const real* x, const real* gy, real* gx);

  // Per-pixel squared norm over `d` channel planes of length `plane`:
  // out[p] = sum_j x[j * plane + p]^2.
  void (*sum_squares_planes)(std::size_t plane, int d, const real* x, real* out);
};

const Table& scalar_table();
// Null when the build or the CPU lacks AVX2/FMA.
const Table* avx2_table();

bool supported(Backend backend);
const Table& table(Backend backend);

/// Table currently used by the ops.
const Table& active();
Backend active_backend();
/// Forces a backend; throws UsageError when it is unavailable.
void select(Backend backend);
/// Restores the CPUID-based default.
void select_best();

std::string_view name(Backend backend);
Backend parse_backend(std::string_view text);

}  // namespace posefabric::kernels

#include <doctest.h>

#include <cmath>
#include <vector>

#include "posefabric/core/ops.hpp"
#include "posefabric/core/rng.hpp"
#include "posefabric/kernels/kernels.hpp"

using namespace posefabric;

namespace {

std::vector<real> random_vec(Rng& rng, std::size_t n) {
  std::vector<real> v(n);
  for (real& x : v) x = rng.uniform(-1, 1);
  return v;
}

// FMA contraction and lane-wise accumulation reorder the sums.
void check_close(const std::vector<real>& a, const std::vector<real>& b, real tol = 1e-12) {
  REQUIRE(a.size() == b.size());
  for (std::size_t i = 0; i < a.size(); ++i) CHECK(std::abs(a[i] - b[i]) <= tol * (1 + std::abs(a[i])));
}

struct BackendGuard {
  ~BackendGuard() { kernels::select_best(); }
};

}  // namespace

TEST_CASE("scalar backend is always available") {
  CHECK(kernels::supported(kernels::Backend::scalar));
  CHECK(kernels::scalar_table().backend == kernels::Backend::scalar);
  CHECK(kernels::parse_backend("scalar") == kernels::Backend::scalar);
  CHECK_THROWS(kernels::parse_backend("sse9"));
}

TEST_CASE("avx2 kernels match the scalar reference") {
  const kernels::Table* simd = kernels::avx2_table();
  if (!simd) {
    MESSAGE("AVX2 not available on this build or CPU; skipped");
    return;
  }
  const kernels::Table& ref = kernels::scalar_table();
  Rng rng(11);

  SUBCASE("gemm variants over ragged sizes") {
    for (int m : {1, 3, 4, 7, 16})
      for (int n : {1, 2, 5, 8, 13, 33})
        for (int k : {1, 3, 9, 17}) {
          const auto a = random_vec(rng, static_cast<std::size_t>(m * k));
          const auto b = random_vec(rng, static_cast<std::size_t>(k * n));
          const auto c0 = random_vec(rng, static_cast<std::size_t>(m * n));
          auto c1 = c0, c2 = c0;
          ref.gemm_nn(m, n, k, a.data(), k, b.data(), n, c1.data(), n);
          simd->gemm_nn(m, n, k, a.data(), k, b.data(), n, c2.data(), n);
          check_close(c1, c2);

          // a^T stored (k x m); b^T stored (n x k).
          const auto at = random_vec(rng, static_cast<std::size_t>(k * m));
          const auto bt = random_vec(rng, static_cast<std::size_t>(n * k));
          c1 = c0;
          c2 = c0;
          ref.gemm_nt(m, n, k, a.data(), k, bt.data(), k, c1.data(), n);
          simd->gemm_nt(m, n, k, a.data(), k, bt.data(), k, c2.data(), n);
          check_close(c1, c2);
          c1 = c0;
          c2 = c0;
          ref.gemm_tn(m, n, k, at.data(), m, b.data(), n, c1.data(), n);
          simd->gemm_tn(m, n, k, at.data(), m, b.data(), n, c2.data(), n);
          check_close(c1, c2);
        }
  }

  SUBCASE("vector routines") {
    for (std::size_t n : {0u, 1u, 3u, 4u, 5u, 15u, 64u, 1001u}) {
      const auto x = random_vec(rng, n);
      const auto gy = random_vec(rng, n);
      auto y1 = random_vec(rng, n), y2 = y1;
      ref.axpy(n, 0.37, x.data(), y1.data());
      simd->axpy(n, 0.37, x.data(), y2.data());
      check_close(y1, y2);
      CHECK(std::abs(ref.dot(n, x.data(), gy.data()) - simd->dot(n, x.data(), gy.data())) <= 1e-12 * (1 + n));

      std::vector<real> r1(n), r2(n);
      ref.relu_forward(n, x.data(), r1.data());
      simd->relu_forward(n, x.data(), r2.data());
      CHECK(r1 == r2);
      std::vector<real> g1(n, 0.5), g2(n, 0.5);
      ref.relu_backward(n, x.data(), gy.data(), g1.data());
      simd->relu_backward(n, x.data(), gy.data(), g2.data());
      CHECK(g1 == g2);
    }
  }

  SUBCASE("sum of squares over planes") {
    for (std::size_t plane : {1u, 4u, 7u, 64u})
      for (int d : {1, 3, 8}) {
        const auto x = random_vec(rng, plane * d);
        std::vector<real> o1(plane), o2(plane);
        ref.sum_squares_planes(plane, d, x.data(), o1.data());
        simd->sum_squares_planes(plane, d, x.data(), o2.data());
        check_close(o1, o2);
      }
  }
}

TEST_CASE("conv forward and backward agree across backends") {
  if (!kernels::supported(kernels::Backend::avx2)) return;
  BackendGuard guard;
  Rng rng(5);
  Tensor x({2, 6, 9, 7}), k({4, 3, 3, 3});
  rng.fill_uniform(x, -1, 1);
  rng.fill_uniform(k, -1, 1);

  std::vector<std::vector<real>> results;
  for (auto backend : {kernels::Backend::scalar, kernels::Backend::avx2}) {
    kernels::select(backend);
    CHECK(kernels::active_backend() == backend);
    Var xv = Var::leaf(x), kv = Var::leaf(k);
    Tape tape;
    const Var y = conv2d(xv, kv, {}, {2, 1, 2});
    tape.backward(sum_squares(relu(y)));
    std::vector<real> flat(y.value().data().begin(), y.value().data().end());
    flat.insert(flat.end(), xv.grad().data().begin(), xv.grad().data().end());
    flat.insert(flat.end(), kv.grad().data().begin(), kv.grad().data().end());
    results.push_back(std::move(flat));
  }
  check_close(results[0], results[1], 1e-11);
}

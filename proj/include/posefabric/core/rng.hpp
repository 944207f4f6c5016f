#pragma once

#include <cmath>
#include <cstdint>
#include <numbers>
#include <random>

#include "posefabric/core/tensor.hpp"

namespace posefabric {

/// Seeded generator with stateless draws: all state lives in the engine, so
/// two generators with the same seed and call sequence agree bit for bit.
class Rng {
 public:
  explicit Rng(std::uint64_t seed = 0) : engine_(seed) {}

  /// Derives an independent stream, e.g. per epoch or per sample.
  static Rng derive(std::uint64_t seed, std::uint64_t stream) {
    std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                      static_cast<std::uint32_t>(stream), static_cast<std::uint32_t>(stream >> 32),
                      0x5eedu};
    Rng r;
    r.engine_.seed(seq);
    return r;
  }

  real uniform() { return std::generate_canonical<real, 53>(engine_); }
  real uniform(real lo, real hi) { return lo + (hi - lo) * uniform(); }
  int uniform_int(int lo, int hi) { return lo + static_cast<int>(engine_() % static_cast<std::uint64_t>(hi - lo + 1)); }
  bool bernoulli(real p) { return uniform() < p; }

  real normal() {
    real u1 = uniform();
    while (u1 <= 0.0) u1 = uniform();
    const real u2 = uniform();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
  }

  void fill_normal(Tensor& t, real stddev) {
    for (real& v : t.data()) v = stddev * normal();
  }
  void fill_uniform(Tensor& t, real lo, real hi) {
    for (real& v : t.data()) v = uniform(lo, hi);
  }

  std::mt19937_64& engine() { return engine_; }

 private:
  std::mt19937_64 engine_;
};

}  // namespace posefabric

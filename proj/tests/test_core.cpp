#include <doctest.h>

#include <cmath>
#include <numeric>

#include "posefabric/core/errors.hpp"
#include "posefabric/core/flops.hpp"
#include "posefabric/core/gradcheck.hpp"
#include "posefabric/core/ops.hpp"
#include "posefabric/core/rng.hpp"
#include "posefabric/fabric/modules.hpp"
#include "posefabric/harness/gradsuite.hpp"

using namespace posefabric;

namespace {

Tensor uniform(Rng& rng, Shape s) {
  Tensor t(s);
  rng.fill_uniform(t, -1, 1);
  return t;
}

std::size_t param_elements(const fabric::ParameterList& list) {
  std::size_t n = 0;
  for (const auto& p : list) n += p.var.value().size();
  return n;
}

}  // namespace

TEST_CASE("tensor shape bookkeeping") {
  Tensor t({2, 3, 4, 5});
  CHECK(t.size() == 120);
  CHECK(t.shape().plane() == 20);
  t.at(1, 2, 3, 4) = 7;
  CHECK(t.data().back() == 7);
  CHECK(t.plane(1, 2)[19] == 7);
}

TEST_CASE("conv2d examples") {
  SUBCASE("identity kernel") {
    Rng rng(1);
    const Tensor x = uniform(rng, {1, 1, 3, 3});
    Tensor k({1, 1, 3, 3});
    k.at(0, 0, 1, 1) = 1;
    const Var y = conv2d(Var::constant(x), Var::constant(k), {}, {});
    for (std::size_t i = 0; i < x.size(); ++i) CHECK(y.value()[i] == x[i]);
  }
  SUBCASE("stride 2 halves with ceil") {
    CHECK(conv_output_shape({1, 2, 4, 4}, {3, 2, 3, 3}, {2, 1, 1}) == Shape{1, 3, 2, 2});
    CHECK(conv_output_shape({1, 2, 5, 5}, {3, 2, 3, 3}, {2, 1, 1}) == Shape{1, 3, 3, 3});
  }
  SUBCASE("configuration errors") {
    const Var x = Var::constant(Tensor({1, 4, 5, 5}));
    CHECK_THROWS_AS(conv2d(x, Var::constant(Tensor({2, 3, 3, 3})), {}, {}), ConfigError);
    CHECK_THROWS_AS(conv2d(x, Var::constant(Tensor({2, 4, 2, 2})), {}, {}), ConfigError);
    CHECK_THROWS_AS(conv2d(x, Var::constant(Tensor({3, 2, 3, 3})), {}, {1, 1, 3}), ConfigError);
  }
  SUBCASE("dilation 2 reaches Chebyshev distance 2 only") {
    Tensor x({1, 1, 9, 9});
    x.at(0, 0, 4, 4) = 1;
    Tensor k({1, 1, 3, 3}, 1.0);
    const Var y = conv2d(Var::constant(x), Var::constant(k), {}, {1, 2, 1});
    for (int i = 0; i < 9; ++i)
      for (int j = 0; j < 9; ++j) {
        const int cheb = std::max(std::abs(i - 4), std::abs(j - 4));
        if (cheb > 2) CHECK(y.value().at(0, 0, i, j) == 0);
      }
    CHECK(y.value().at(0, 0, 2, 2) == 1);
    CHECK(y.value().at(0, 0, 6, 4) == 1);
  }
}

TEST_CASE("candidate op modules") {
  Rng rng(2);
  SUBCASE("separable conv parameter count for C = 8") {
    fabric::SepConv3x3 op(8, rng);
    fabric::ParameterList list;
    op.collect(list, "op");
    // 3*3*8 depthwise + 8*8 pointwise + 2*8 affine.
    CHECK(param_elements(list) == 72 + 64 + 16);
  }
  SUBCASE("separable conv of zeros gives the norm shift") {
    fabric::SepConv3x3 op(4, rng);
    Tensor shift({1, 4, 1, 1}, std::vector<real>{0.1, -0.2, 0.3, 0.4});
    op.norm.shift.mutable_value() = shift;
    const Var y = op.forward(Var::constant(Tensor({2, 4, 5, 5})));
    for (int c = 0; c < 4; ++c) CHECK(y.value().at(1, c, 2, 3) == doctest::Approx(shift[c]).epsilon(1e-12));
  }
  SUBCASE("dilated conv keeps shape") {
    fabric::DilConv3x3 op(4, rng);
    CHECK(op.forward(Var::constant(uniform(rng, {1, 4, 8, 8}))).shape() == Shape{1, 4, 8, 8});
  }
}

TEST_CASE("pooling") {
  Tensor c({1, 2, 5, 5}, 0.75);
  const Var avg = pool3x3(Var::constant(c), PoolKind::avg);
  for (real v : avg.value().data()) CHECK(v == doctest::Approx(0.75).epsilon(1e-15));

  Tensor impulse({1, 1, 5, 5});
  impulse.at(0, 0, 2, 2) = 1;
  const Var mx = pool3x3(Var::constant(impulse), PoolKind::max);
  for (int i = 0; i < 5; ++i)
    for (int j = 0; j < 5; ++j) {
      const bool inside = std::abs(i - 2) <= 1 && std::abs(j - 2) <= 1;
      CHECK(mx.value().at(0, 0, i, j) == (inside ? 1.0 : 0.0));
    }

  SUBCASE("max ties route the gradient to the lowest index") {
    Var x = Var::leaf(Tensor({1, 1, 1, 3}, 1.0));
    Tape tape;
    const Var y = pool3x3(x, PoolKind::max);
    tape.backward(sum(y));
    // Outputs 0 and 1 see {0,1} and {0,1,2}; output 2 sees {1,2}.
    CHECK(x.grad()[0] == 2);
    CHECK(x.grad()[1] == 1);
    CHECK(x.grad()[2] == 0);
  }
}

TEST_CASE("zero and skip") {
  Rng rng(3);
  Var x = Var::leaf(uniform(rng, {1, 2, 3, 3}));
  Tape tape;
  const Var z = zero_op(x);
  const Var s = skip_op(x);
  for (real v : z.value().data()) CHECK(v == 0);
  for (std::size_t i = 0; i < x.value().size(); ++i) CHECK(s.value()[i] == x.value()[i]);
  tape.backward(sum(z));
  if (x.has_grad())
    for (real g : x.grad().data()) CHECK(g == 0);
}

TEST_CASE("bilinear upsampling") {
  const Var c = bilinear_up2x(Var::constant(Tensor({1, 1, 3, 2}, -1.25)));
  CHECK(c.shape() == Shape{1, 1, 6, 4});
  for (real v : c.value().data()) CHECK(v == doctest::Approx(-1.25).epsilon(1e-15));

  const Tensor x({1, 1, 2, 2}, std::vector<real>{1, 2, 3, 4});
  const Var y = bilinear_up2x(Var::constant(x));
  // Half-pixel sampling: output o reads input (o + 0.5) / 2 - 0.5, clamped.
  const auto src = [](int o) { return std::clamp((o + 0.5) / 2 - 0.5, 0.0, 1.0); };
  for (int i = 0; i < 4; ++i)
    for (int j = 0; j < 4; ++j) {
      const real u = src(i), v = src(j);
      const real expect = (1 - u) * ((1 - v) * 1 + v * 2) + u * ((1 - v) * 3 + v * 4);
      CHECK(y.value().at(0, 0, i, j) == doctest::Approx(expect).epsilon(1e-14));
    }
}

TEST_CASE("batch norm") {
  Rng rng(4);
  const Tensor x = uniform(rng, {4, 3, 5, 5});
  BatchNormState state(3);
  const Var one = Var::constant(Tensor({1, 3, 1, 1}, 1.0));
  const Var zero = Var::constant(Tensor({1, 3, 1, 1}));

  SUBCASE("training output is standardised per channel") {
    const Var y = batch_norm(Var::constant(x), one, zero, state);
    for (int c = 0; c < 3; ++c) {
      real m = 0, v = 0;
      for (int n = 0; n < 4; ++n)
        for (std::size_t p = 0; p < 25; ++p) m += y.value().plane(n, c)[p];
      m /= 100;
      for (int n = 0; n < 4; ++n)
        for (std::size_t p = 0; p < 25; ++p) v += std::pow(y.value().plane(n, c)[p] - m, 2);
      v /= 100;
      CHECK(std::abs(m) <= 1e-12);
      // eps = 1e-5 keeps the variance just below 1.
      CHECK(std::abs(v - 1) <= 1e-3);
    }
    CHECK(state.running_mean[0] != 0);
  }
  SUBCASE("eval with fresh statistics is identity up to eps") {
    state.training = false;
    const Var y = batch_norm(Var::constant(x), one, zero, state);
    for (std::size_t i = 0; i < x.size(); ++i)
      CHECK(y.value()[i] == doctest::Approx(x[i] / std::sqrt(1 + 1e-5)).epsilon(1e-14));
    CHECK(state.running_mean[0] == 0);
    CHECK(state.running_var[0] == 1);
  }
}

TEST_CASE("softmax and losses") {
  Var eq = softmax(Var::constant(Tensor({1, 6, 1, 1}, 0.3)));
  for (real v : eq.value().data()) CHECK(v == doctest::Approx(1.0 / 6).epsilon(1e-15));
  Var two = softmax(Var::constant(Tensor({1, 2, 1, 1}, std::vector<real>{0, std::log(3.0)})));
  CHECK(two.value()[0] == doctest::Approx(0.25).epsilon(1e-15));
  CHECK(two.value()[1] == doctest::Approx(0.75).epsilon(1e-15));

  Rng rng(9);
  for (int trial = 0; trial < 50; ++trial) {
    Tensor t({1, 7, 1, 1});
    rng.fill_normal(t, 5.0);
    const Var s = softmax(Var::constant(t));
    real total = 0;
    for (real v : s.value().data()) {
      CHECK(v > 0);
      total += v;
    }
    CHECK(std::abs(total - 1) <= 1e-12);
  }

  const Var x = Var::constant(uniform(rng, {2, 2, 2, 2}));
  CHECK(mse(x, x).value()[0] == 0);
  CHECK_THROWS_AS(mse(x, Var::constant(Tensor({1, 2, 2, 2}))), ConfigError);
}

TEST_CASE("backward") {
  Rng rng(10);
  Var x = Var::leaf(uniform(rng, {1, 2, 3, 3}));
  SUBCASE("sum of squares") {
    Tape tape;
    tape.backward(sum_squares(x));
    for (std::size_t i = 0; i < x.value().size(); ++i) CHECK(x.grad()[i] == 2 * x.value()[i]);
  }
  SUBCASE("non-scalar loss") {
    Tape tape;
    const Var y = relu(x);
    CHECK_THROWS_AS(tape.backward(y), UsageError);
  }
  SUBCASE("seed scales every gradient") {
    Var k = Var::leaf(uniform(rng, {2, 2, 3, 3}));
    const auto grads = [&](real seed) {
      x.zero_grad();
      k.zero_grad();
      Tape tape;
      tape.backward(mse(conv2d(relu(x), k, {}, {}), Var::constant(Tensor({1, 2, 3, 3}, 0.1))), seed);
      return std::pair{x.grad(), k.grad()};
    };
    const auto [gx1, gk1] = grads(1.0);
    const auto [gx2, gk2] = grads(2.0);
    const auto [gx3, gk3] = grads(-3.0);
    for (std::size_t i = 0; i < gx1.size(); ++i) {
      CHECK(gx2[i] == 2 * gx1[i]);
      CHECK(gx3[i] == doctest::Approx(-3 * gx1[i]).epsilon(1e-14));
    }
    for (std::size_t i = 0; i < gk1.size(); ++i) CHECK(gk2[i] == 2 * gk1[i]);
  }
  SUBCASE("every requires_grad node gets a grad") {
    Var unused_branch = Var::leaf(uniform(rng, {1, 2, 3, 3}));
    Tape tape;
    const Var y = add(scale(x, 0.0), zero_op(unused_branch));
    tape.backward(sum(y));
    CHECK(x.has_grad());
    CHECK(unused_branch.has_grad());
  }
}

TEST_CASE("grad_check catches a wrong gradient") {
  Rng rng(12);
  Var x = Var::leaf(uniform(rng, {1, 1, 2, 2}));
  // The loss scale drifts between evaluations, so the taped gradient cannot
  // match the differences.
  real hidden = 1.0;
  const auto report = grad_check(
      [&] {
        const Var y = sum_squares(x);
        hidden += 1.0;
        return scale(y, hidden);
      },
      {{"x", x}});
  CHECK(report.max_rel_error() > 1e-2);
}

TEST_CASE("finite differences agree for every op") {
  const GradCheckReport report = harness::op_gradcheck_suite(21);
  CHECK(report.entries.size() >= 20);
  for (const auto& e : report.entries) {
    INFO(e.name);
    CHECK(e.probed > 0);
    CHECK(e.max_rel_error <= 1e-4);
  }
}

TEST_CASE("flops tally") {
  flops::Scope scope;
  Rng rng(13);
  conv2d(Var::constant(uniform(rng, {1, 8, 16, 16})), Var::constant(uniform(rng, {8, 8, 1, 1})), {}, {});
  CHECK(scope.count() == 8u * 8 * 16 * 16);
  flops::reset();
  relu(Var::constant(uniform(rng, {1, 8, 4, 4})));
  CHECK(scope.count() == 128);
}

TEST_CASE("rng streams are reproducible") {
  Rng a = Rng::derive(3, 17), b = Rng::derive(3, 17), c = Rng::derive(3, 18);
  const real x = a.normal();
  CHECK(x == b.normal());
  CHECK(x != c.normal());
}

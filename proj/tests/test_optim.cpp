#include <doctest.h>

#include <algorithm>
#include <cmath>

#include "posefabric/core/errors.hpp"
#include "posefabric/core/ops.hpp"
#include "posefabric/core/rng.hpp"
#include "posefabric/optim/adam.hpp"
#include "posefabric/optim/schedule.hpp"
#include "posefabric/optim/search.hpp"

using namespace posefabric;
using namespace posefabric::optim;

namespace {

Var scalar_leaf(real v) { return Var::leaf(Tensor(Shape{1, 1, 1, 1}, v)); }
Var scalar_const(real v) { return Var::constant(Tensor(Shape{1, 1, 1, 1}, v)); }

// a * w as a one-term weighted sum.
Var product(const Var& w, const Var& a) {
  const std::vector<Var> terms{w};
  const std::vector<int> index{0};
  return weighted_sum(terms, a, index);
}

// Hand-rolled first Adam step: m_hat = g, v_hat = g^2.
real first_adam_step(real p, real g, real lr) { return p - lr * g / (std::abs(g) + 1e-8); }

bool same(const Tensor& a, const Tensor& b) { return std::ranges::equal(a.data(), b.data()); }

}  // namespace

TEST_CASE("adam") {
  SUBCASE("first step from a unit gradient") {
    Var p = scalar_leaf(0.0);
    Adam adam({p});
    p.node()->ensure_grad()[0] = 1.0;
    adam.step(1e-3);
    CHECK(p.value()[0] == doctest::Approx(-1e-3).epsilon(1e-7));
  }
  SUBCASE("zero gradient leaves the parameter alone") {
    Var p = scalar_leaf(0.7);
    Adam adam({p});
    for (int i = 0; i < 5; ++i) adam.step(1e-2);
    CHECK(p.value()[0] == 0.7);
  }
  SUBCASE("constant gradient gives monotone steps") {
    Var p = scalar_leaf(0.0);
    Adam adam({p});
    real last = 0;
    for (int i = 0; i < 20; ++i) {
      p.zero_grad();
      p.node()->ensure_grad()[0] = 0.3;
      adam.step(1e-2);
      CHECK(p.value()[0] < last);
      last = p.value()[0];
    }
  }
  SUBCASE("weight decay shrinks an unused parameter") {
    Var p = scalar_leaf(2.0);
    Adam adam({p}, AdamOptions{.weight_decay = 1e-3});
    real last = 2.0;
    for (int i = 0; i < 10; ++i) {
      adam.step(1e-2);
      CHECK(std::abs(p.value()[0]) < last);
      last = std::abs(p.value()[0]);
    }
  }
  SUBCASE("frozen parameters are skipped") {
    Var p = scalar_leaf(1.0);
    Adam adam({p});
    p.node()->ensure_grad()[0] = 1.0;
    freeze({p});
    adam.step(0.1);
    CHECK(p.value()[0] == 1.0);
  }
  SUBCASE("bad learning rates") {
    Var p = scalar_leaf(1.0);
    Adam adam({p});
    CHECK_THROWS_AS(adam.step(0.0), UsageError);
    CHECK_THROWS_AS(adam.step(-1e-3), UsageError);
    CHECK_THROWS_AS(adam.step(std::nan("")), UsageError);
  }
  SUBCASE("state shape mismatch") {
    Var p = scalar_leaf(1.0);
    Adam adam({p});
    AdamState s;
    s.m.emplace_back(Shape{1, 2, 1, 1});
    s.v.emplace_back(Shape{1, 2, 1, 1});
    CHECK_THROWS_AS(adam.load_state(s), ConfigError);
  }
}

TEST_CASE("learning-rate schedule") {
  LrSchedule s;
  s.base_lr = 1e-3;
  s.arch_base_lr = 3e-3;
  s.milestones = {90, 120, 150};
  s.factor = 0.5;
  CHECK(s.lr_at(0, ParamKind::weight) == 1e-3);
  CHECK(s.lr_at(89, ParamKind::weight) == 1e-3);
  CHECK(s.lr_at(90, ParamKind::weight) == doctest::Approx(5e-4).epsilon(1e-15));
  CHECK(s.lr_at(100, ParamKind::weight) == doctest::Approx(5e-4).epsilon(1e-15));
  CHECK(s.lr_at(160, ParamKind::weight) == doctest::Approx(1.25e-4).epsilon(1e-15));
  CHECK(s.lr_at(160, ParamKind::arch) == doctest::Approx(3.75e-4).epsilon(1e-15));
  s.arch_decay = false;
  CHECK(s.lr_at(160, ParamKind::arch) == 3e-3);
  CHECK_THROWS_AS(s.lr_at(-1, ParamKind::weight), UsageError);

  real last = 1;
  for (int e = 0; e < 200; ++e) {
    const real lr = s.lr_at(e, ParamKind::weight);
    CHECK(lr <= last);
    last = lr;
  }
  s.milestones = {30, 20};
  CHECK_THROWS_AS(s.validate(), ConfigError);
  CHECK(scale_milestones({90, 120, 150}, 180, 60) == std::vector<int>{30, 40, 50});
}

TEST_CASE("strategy names") {
  for (Strategy st : {Strategy::random_sampled, Strategy::synchronous, Strategy::first_order_bilevel})
    CHECK(parse_strategy(strategy_name(st)) == st);
  CHECK_THROWS_AS(parse_strategy("darts"), ConfigError);
}

TEST_CASE("random architecture initialisation") {
  std::vector<Var> arch{Var::leaf(Tensor(Shape{1000, 10, 10, 1})), Var::leaf(Tensor(Shape{1, 3, 1, 1}))};
  random_init_arch(arch, 99);
  std::vector<Var> again{Var::leaf(Tensor(Shape{1000, 10, 10, 1})), Var::leaf(Tensor(Shape{1, 3, 1, 1}))};
  random_init_arch(again, 99);
  CHECK(same(arch[0].value(), again[0].value()));
  CHECK(same(arch[1].value(), again[1].value()));

  const auto& d = arch[0].value().data();
  real mean = 0, sq = 0;
  for (real v : d) mean += v;
  mean /= static_cast<real>(d.size());
  for (real v : d) sq += (v - mean) * (v - mean);
  const real sd = std::sqrt(sq / static_cast<real>(d.size() - 1));
  CHECK(std::abs(mean) < 0.02);
  CHECK(std::abs(sd - 1) < 0.02);

  SUBCASE("stays fixed under random_sampled search") {
    Var w = Var::leaf(Tensor(Shape{1, 3, 1, 1}, 0.5));
    Searcher s({w}, {arch[1]}, {.strategy = Strategy::random_sampled});
    const Tensor before = arch[1].value();
    const Tensor w0 = w.value();
    const std::vector<int> index{0, 1, 2};
    for (int i = 0; i < 100; ++i)
      s.synchronous_step(
          [&] {
            const std::vector<Var> terms{w, w, w};
            return sum_squares(weighted_sum(terms, arch[1], index));
          },
          1e-2, 1e-2);
    CHECK(same(arch[1].value(), before));
    CHECK_FALSE(same(w.value(), w0));
  }
}

TEST_CASE("synchronous step") {
  Var w = scalar_leaf(0.8), a = scalar_leaf(1.3);
  Searcher s({w}, {a}, {.strategy = Strategy::synchronous});
  const auto loss = [&] { return mse(product(w, a), scalar_const(1.0)); };
  // d/dw (aw - 1)^2 = 2(aw - 1)a, d/da likewise.
  const real r = 0.8 * 1.3 - 1;
  const real lw = s.synchronous_step(loss, 1e-2, 3e-2);
  CHECK(lw == doctest::Approx(r * r).epsilon(1e-15));
  CHECK(w.value()[0] == doctest::Approx(first_adam_step(0.8, 2 * r * 1.3, 1e-2)).epsilon(1e-12));
  CHECK(a.value()[0] == doctest::Approx(first_adam_step(1.3, 2 * r * 0.8, 3e-2)).epsilon(1e-12));
  CHECK_THROWS_AS(s.bilevel_step(loss, loss, 1e-2, 1e-2), UsageError);

  SUBCASE("descends on a convex problem for several seeds") {
    for (std::uint64_t seed = 0; seed < 5; ++seed) {
      Rng rng(seed);
      Tensor x({1, 4, 1, 1}), t({1, 1, 1, 1});
      rng.fill_normal(x, 1.0);
      rng.fill_normal(t, 1.0);
      Var k = Var::leaf(Tensor({1, 4, 1, 1}));
      Var mix = Var::leaf(Tensor({1, 1, 1, 1}, 1.0));
      rng.fill_normal(k.mutable_value(), 0.5);
      Searcher sr({k}, {mix}, {.strategy = Strategy::synchronous});
      const auto l = [&] {
        const Var y = conv2d(Var::constant(x), k, {}, {});
        return mse(product(y, mix), Var::constant(t));
      };
      real first = 0, last = 0;
      for (int i = 0; i < 200; ++i) {
        last = sr.synchronous_step(l, 1e-2, 1e-2);
        if (i == 0) first = last;
      }
      CHECK(last < 0.05 * first + 1e-6);
    }
  }
}

TEST_CASE("bilevel step") {
  Var w = scalar_leaf(0.8), a = scalar_leaf(1.3);
  const real wd = 1e-3;
  Searcher s({w}, {a}, {.strategy = Strategy::first_order_bilevel, .arch_weight_decay = wd});
  const auto train = [&] { return mse(product(w, a), scalar_const(1.0)); };
  const auto val = [&] { return mse(product(w, a), scalar_const(3.0)); };
  const auto [lt, lv] = s.bilevel_step(train, val, 1e-2, 3e-2);

  // Architecture moves on the validation loss at the old weights.
  const real rv = 0.8 * 1.3 - 3;
  const real a1 = first_adam_step(1.3, 2 * rv * 0.8 + wd * 1.3, 3e-2);
  CHECK(lv == doctest::Approx(rv * rv).epsilon(1e-15));
  CHECK(a.value()[0] == doctest::Approx(a1).epsilon(1e-12));
  // Weights then move on the training loss at the new architecture.
  const real rt = 0.8 * a1 - 1;
  CHECK(lt == doctest::Approx(rt * rt).epsilon(1e-12));
  CHECK(w.value()[0] == doctest::Approx(first_adam_step(0.8, 2 * rt * a1, 1e-2)).epsilon(1e-12));
  // Gradients are cleared after the step.
  if (w.has_grad()) CHECK(w.grad()[0] == 0);

  CHECK_THROWS_AS(s.bilevel_step(train, {}, 1e-2, 1e-2), ConfigError);
  CHECK_THROWS_AS(s.synchronous_step(train, 1e-2, 1e-2), UsageError);
}

TEST_CASE("split optimizers equal one joint Adam") {
  Rng rng(8);
  Tensor x({2, 3, 4, 4});
  rng.fill_normal(x, 1.0);
  const auto make = [&](Var& k, Var& mix) {
    Rng r(9);
    k = Var::leaf(Tensor({2, 3, 3, 3}));
    mix = Var::leaf(Tensor({1, 1, 1, 1}));
    r.fill_normal(k.mutable_value(), 0.3);
    r.fill_normal(mix.mutable_value(), 1.0);
  };
  Var k1, m1, k2, m2;
  make(k1, m1);
  make(k2, m2);
  const auto loss = [&](const Var& k, const Var& m) {
    return [&] { return sum_squares(relu(product(conv2d(Var::constant(x), k, {}, {1, 1, 1}), m))); };
  };
  Searcher split({k1}, {m1}, {.strategy = Strategy::synchronous});
  Adam joint({k2, m2});
  for (int i = 0; i < 10; ++i) {
    split.synchronous_step(loss(k1, m1), 1e-2, 1e-2);
    joint.zero_grad();
    Tape tape;
    tape.backward(loss(k2, m2)());
    joint.step(1e-2);
  }
  CHECK(same(k1.value(), k2.value()));
  CHECK(same(m1.value(), m2.value()));
}

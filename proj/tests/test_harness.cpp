#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <json.hpp>
#include <sstream>

#include "posefabric/core/errors.hpp"
#include "posefabric/core/rng.hpp"
#include "posefabric/harness/augment.hpp"
#include "posefabric/harness/cli.hpp"
#include "posefabric/harness/config.hpp"
#include "posefabric/harness/model.hpp"
#include "posefabric/harness/pck.hpp"
#include "posefabric/harness/runner.hpp"
#include "posefabric/harness/synthetic.hpp"
#include "posefabric/optim/search.hpp"
#include "posefabric/parts/heatmap.hpp"
#include "posefabric/parts/schema.hpp"
#include "posefabric/parts/squash.hpp"
#include "tiny_config.hpp"

using namespace posefabric;
using namespace posefabric::harness;
using posefabric::testing::scratch_dir;
using posefabric::testing::slurp;
using posefabric::testing::tiny_config;

namespace {

int cli(std::vector<std::string> args, std::string* out_text = nullptr) {
  args.insert(args.begin(), "posefabric");
  std::vector<const char*> argv;
  for (const auto& a : args) argv.push_back(a.c_str());
  std::ostringstream out, err;
  const int code = run_cli(static_cast<int>(argv.size()), argv.data(), out, err);
  if (out_text) *out_text = out.str();
  return code;
}

int nearest(real v) { return static_cast<int>(std::lround(v)); }

}  // namespace

TEST_CASE("synthetic data") {
  SyntheticPoseConfig cfg;
  cfg.noise = 0;
  const auto a = generate_dataset(cfg, 20);
  const auto b = generate_dataset(cfg, 10, 10);
  for (int i = 0; i < 10; ++i) {
    CHECK(std::ranges::equal(a[10 + i].image.data(), b[i].image.data()));
    CHECK(a[10 + i].keypoints[3].x == b[i].keypoints[3].x);
  }
  for (const auto& s : a) {
    CHECK(std::all_of(s.visible.begin(), s.visible.end(), [](bool v) { return v; }));
    // The figure is drawn through every joint; the background stays at or below 0.2.
    for (const auto& p : s.keypoints) {
      CHECK(p.x >= 0);
      CHECK(p.x <= cfg.image_size - 1);
      CHECK(s.image.at(0, 0, nearest(p.y), nearest(p.x)) >= 0.3);
    }
    // Left joints sit at larger x than their right partners.
    CHECK(s.keypoints[2].x > s.keypoints[1].x);
    CHECK(s.keypoints[3].x < s.keypoints[1].x);
  }
  cfg.seed = 1;
  CHECK_FALSE(std::ranges::equal(generate_sample(cfg, 0).image.data(), a[0].image.data()));

  SUBCASE("occlusion hides joints") {
    cfg.occlusion = 0.5;
    int hidden = 0;
    for (const auto& s : generate_dataset(cfg, 20))
      for (int k = 0; k < kSyntheticJoints; ++k)
        if (!s.visible[k]) {
          ++hidden;
          CHECK(s.image.at(0, 0, nearest(s.keypoints[k].y), nearest(s.keypoints[k].x)) <= 0.2);
        }
    CHECK(hidden > 20);
    CHECK(hidden < 100);
  }
  cfg.occlusion = 1.5;
  CHECK_THROWS_AS(cfg.validate(), ConfigError);
}

TEST_CASE("augmentation") {
  SyntheticPoseConfig cfg;
  const Sample s = generate_sample(cfg, 3);
  const auto perm = parts::synthetic6().flip_permutation();

  SUBCASE("identity") {
    const Sample t = apply_augment(s, {}, perm);
    CHECK(max_abs_diff(t.image, s.image) <= 1e-12);
    for (int k = 0; k < kSyntheticJoints; ++k) CHECK(std::hypot(t.keypoints[k].x - s.keypoints[k].x, t.keypoints[k].y - s.keypoints[k].y) <= 1e-12);
  }
  SUBCASE("flipping twice restores the sample") {
    const AugmentParams flip{0, 1, true};
    const Sample once = apply_augment(s, flip, perm);
    CHECK(once.keypoints[2].x == doctest::Approx(63 - s.keypoints[3].x));
    const Sample twice = apply_augment(once, flip, perm);
    CHECK(max_abs_diff(twice.image, s.image) <= 1e-12);
    for (int k = 0; k < kSyntheticJoints; ++k) CHECK(twice.keypoints[k].x == doctest::Approx(s.keypoints[k].x).epsilon(1e-12));
  }
  SUBCASE("rotation oracle") {
    const Point q = transform_point({41.5, 31.5}, {90, 1, false}, 64, 64);
    CHECK(q.x == doctest::Approx(31.5));
    CHECK(q.y == doctest::Approx(41.5));
    const Point r = transform_point({41.5, 31.5}, {0, 2, false}, 64, 64);
    CHECK(r.x == doctest::Approx(51.5));
  }
  SUBCASE("image and keypoints move together") {
    Rng rng(7);
    for (int trial = 0; trial < 20; ++trial) {
      Sample blob{Tensor({1, 1, 64, 64}), {{rng.uniform(20, 44), rng.uniform(20, 44)}}, {true}};
      parts::render_gaussian(blob.image.ptr(), 64, 64, blob.keypoints[0], 2.0);
      const AugmentParams a{rng.uniform(-45, 45), rng.uniform(0.8, 1.2), rng.bernoulli(0.5)};
      const Sample t = apply_augment(blob, a, {0});
      const auto& d = t.image.data();
      const auto at = static_cast<int>(std::max_element(d.begin(), d.end()) - d.begin());
      CHECK(std::hypot(at % 64 - t.keypoints[0].x, at / 64 - t.keypoints[0].y) <= 1.0);
    }
  }
  SUBCASE("keypoints leaving the frame turn invisible") {
    const Sample t = apply_augment(s, {0, 3, false}, perm);
    bool any_hidden = false;
    for (int k = 0; k < kSyntheticJoints; ++k) {
      const Point p = t.keypoints[k];
      const bool inside = p.x >= 0 && p.y >= 0 && p.x <= 63 && p.y <= 63;
      CHECK(t.visible[k] == inside);
      any_hidden = any_hidden || !inside;
    }
    CHECK(any_hidden);
  }
}

TEST_CASE("pck") {
  const std::vector<std::vector<Point>> truth{{{10, 10}, {20, 20}}, {{30, 30}, {40, 40}}};
  const std::vector<std::vector<bool>> vis{{true, true}, {true, false}};
  const auto perfect = evaluate_pck(truth, truth, vis, {0.05, 0.1}, 64, 64);
  CHECK(perfect.at(0.05) == 1.0);
  CHECK(perfect.visible_count == std::vector<int>{2, 1});

  // Offsets of 2, 5 and 10 pixels against radii 3.2, 6.4 and 12.8.
  const std::vector<std::vector<Point>> pred{{{12, 10}, {20, 25}}, {{30, 40}, {0, 0}}};
  const auto t = evaluate_pck(pred, truth, vis, {0.05, 0.1, 0.2}, 64, 64);
  CHECK(t.at(0.05) == doctest::Approx(1.0 / 3));
  CHECK(t.at(0.1) == doctest::Approx(2.0 / 3));
  CHECK(t.at(0.2) == 1.0);
  CHECK(t.per_keypoint[0][1] == 0.0);
  CHECK_THROWS_AS(t.at(0.3), UsageError);

  const std::vector<std::vector<Point>> corner{{{63, 63}, {63, 63}}, {{0, 0}, {0, 0}}};
  CHECK(evaluate_pck(corner, truth, vis, {0.1}, 64, 64).at(0.1) == 0.0);
  CHECK_THROWS_AS(evaluate_pck({}, {}, {}, {0.1}, 64, 64), UsageError);
  CHECK_THROWS_AS(evaluate_pck(pred, truth, {{true, true}}, {0.1}, 64, 64), UsageError);
}

TEST_CASE("config") {
  const RunConfig d;
  d.validate();
  CHECK(d.search.strategy == "synchronous");
  CHECK(d.parts.grouping == "P3");
  CHECK(d.train.epochs == 60);
  const RunConfig round = config_from_json(config_to_json(d));
  CHECK(config_to_json(round) == config_to_json(d));

  CHECK_THROWS_AS(config_from_json(R"({"train": {"epochz": 3}})"), ConfigError);
  CHECK_THROWS_AS(config_from_json(R"({"bogus": 1})"), ConfigError);
  CHECK(config_from_json(R"({"train": {"epochs": 3}})").train.epochs == 3);

  const RunConfig o = apply_overrides(d, {"train.epochs=5", "search.strategy=first_order_bilevel", "schedule.milestones=[2,4]"});
  CHECK(o.train.epochs == 5);
  CHECK(o.strategy() == optim::Strategy::first_order_bilevel);
  CHECK(o.schedule.milestones == std::vector<int>{2, 4});
  CHECK_THROWS_AS(apply_overrides(d, {"train.nope=1"}), ConfigError);
  CHECK_THROWS_AS(apply_overrides(d, {"novalue"}), ConfigError);

  RunConfig bad = d;
  bad.data.synth.image_size = 40;
  CHECK_THROWS_AS(bad.validate(), ConfigError);
  bad = d;
  bad.parts.grouping = "P4";
  CHECK_THROWS_AS(bad.validate(), ConfigError);
}

TEST_CASE("model") {
  const RunConfig c = tiny_config("unused");
  const PoseModel m = build_model(c, 5);
  CHECK(m.heads.size() == 3);
  Tensor images({2, 1, 32, 32});
  Rng rng(1);
  rng.fill_uniform(images, 0, 1);
  const auto out = m.forward(Var::constant(images));
  CHECK(out.scores.shape() == Shape{2, 6, 8, 8});
  for (real v : out.scores.value().data()) CHECK(v >= 0);

  SUBCASE("arch and weights json round trip") {
    const PoseModel other = build_model(c, 6);
    load_arch_json(other, arch_to_json(m));
    load_weights_json(other, weights_to_json(m));
    CHECK(max_abs_diff(other.predict_maps(images), m.predict_maps(images)) == 0);
  }
  SUBCASE("part losses stay in their own heads") {
    // Keypoints 3 and 5 form the third group; mask them out.
    const auto gt = parts::render_gt_maps(std::vector<Point>(6, {12, 12}), std::vector<bool>(6, true), 1.5, 8, 8);
    Tensor maps({2, 6, 8, 8}), mask({2, 6, 1, 1}, 1.0);
    for (int n = 0; n < 2; ++n) {
      std::copy(gt.maps.data().begin(), gt.maps.data().end(), maps.plane(n, 0));
      mask.at(n, 3, 0, 0) = 0;
      mask.at(n, 5, 0, 0) = 0;
    }
    for (const auto& p : m.parameters()) Var(p.var).zero_grad();
    Tape tape;
    tape.backward(parts::masked_heatmap_loss(m.forward(Var::constant(images)).scores, maps, mask));
    for (const Var& v : m.heads[2].arch_vars()) CHECK((!v.has_grad() || v.grad().max_abs() == 0));
    real head0 = 0, backbone = 0;
    for (const Var& v : m.heads[0].arch_vars()) head0 += v.has_grad() ? v.grad().max_abs() : 0;
    for (const Var& v : m.backbone.weight_vars()) backbone += v.has_grad() ? v.grad().max_abs() : 0;
    CHECK(head0 > 0);
    CHECK(backbone > 0);
  }
}

TEST_CASE("one step lowers the loss on its own batch") {
  const RunConfig c = tiny_config("unused");
  const auto data = generate_dataset(c.data.synth, 8);
  std::vector<const Sample*> ptrs;
  for (const auto& s : data) ptrs.push_back(&s);
  const Batch b = make_batch(ptrs, c);
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    const PoseModel m = build_model(c, seed);
    optim::Searcher searcher(m.weight_vars(), m.arch_vars(), {.strategy = optim::Strategy::synchronous});
    const auto loss = [&] { return parts::masked_heatmap_loss(m.forward(Var::constant(b.images)).scores, b.maps, b.mask); };
    const real before = searcher.synchronous_step(loss, 1e-3, 1e-3);
    real after = 0;
    {
      NoGradGuard no_grad;
      after = loss().value()[0];
    }
    INFO("seed " << seed);
    CHECK(after < before);
  }
}

TEST_CASE("tiny runs") {
  const auto dir = scratch_dir("runs");
  RunConfig c = tiny_config((dir / "a").string());
  const RunResult a = run_search(c);
  CHECK(a.epochs_completed == 2);
  for (const char* f : {"config.json", "metrics.csv", "checkpoint.bin", "arch_final.json", "arch/epoch_001.json",
                        "graph_backbone.dot", "graph_cnf0.json", "prune_report.json"})
    CHECK_MESSAGE(std::filesystem::exists(dir / "a" / f), f);
  const std::string metrics = slurp(dir / "a" / "metrics.csv");
  CHECK(metrics.rfind(kMetricsHeader, 0) == 0);

  SUBCASE("same seed, same bytes") {
    c.out_dir = (dir / "b").string();
    run_search(c);
    CHECK(slurp(dir / "b" / "metrics.csv") == metrics);
    CHECK(slurp(dir / "b" / "checkpoint.bin") == slurp(dir / "a" / "checkpoint.bin"));
  }
  SUBCASE("resume continues exactly") {
    c.out_dir = (dir / "r").string();
    run_search(c, {.stop_after_epoch = 0});
    CHECK_FALSE(std::filesystem::exists(dir / "r" / "arch_final.json"));
    run_search(c, {.resume = true});
    CHECK(slurp(dir / "r" / "metrics.csv") == metrics);
    CHECK(slurp(dir / "r" / "arch_final.json") == slurp(dir / "a" / "arch_final.json"));
  }
  SUBCASE("bilevel and random_sampled complete") {
    for (const char* s : {"first_order_bilevel", "random_sampled"}) {
      c.search.strategy = s;
      c.out_dir = (dir / s).string();
      CHECK(run_search(c).epochs_completed == 2);
    }
    CHECK(slurp(dir / "first_order_bilevel" / "metrics.csv").find(",arch_val,") != std::string::npos);
  }
  SUBCASE("command line") {
    std::string out;
    CHECK(cli({"eval", "--run", (dir / "a").string()}, &out) == kExitOk);
    CHECK(out.find("pck@0.1") != std::string::npos);
    CHECK(cli({"prune", "--run", (dir / "a").string(), "--tol", "1e-8", "--check"}, &out) == kExitOk);
    CHECK(nlohmann::json::parse(out).at("fabrics").at(0).at("removed_ops").empty());
    CHECK(cli({"export", "--run", (dir / "a").string(), "--fabric", "cnf1"}, &out) == kExitOk);
    CHECK(out.find("digraph") != std::string::npos);
    CHECK(cli({"train", "--arch", (dir / "a" / "arch_final.json").string(), "--out", (dir / "t").string(),
               "--config", (dir / "a" / "config.json").string(), "train.epochs=1"}) == kExitOk);
    CHECK(std::filesystem::exists(dir / "t" / "metrics.csv"));
  }
}

TEST_CASE("command line basics") {
  std::string out;
  CHECK(cli({"bogus"}) == kExitUsage);
  CHECK(cli({}) == kExitUsage);
  CHECK(cli({"--help"}) == kExitOk);
  CHECK(cli({"eval"}) == kExitUsage);
  CHECK(cli({"search", "--config", "/nonexistent/config.json"}) == kExitUsage);
  CHECK(cli({"search", "train.nope=3"}) == kExitUsage);
  CHECK(cli({"gradcheck"}, &out) == kExitOk);
  CHECK(out.find("fabric_beta") != std::string::npos);

  const auto dir = scratch_dir("gen");
  CHECK(cli({"gen-data", "--count", "3", "--out", dir.string()}) == kExitOk);
  CHECK(std::filesystem::exists(dir / "labels.json"));
  CHECK(nlohmann::json::parse(slurp(dir / "labels.json")).size() == 3);
}

#include <doctest.h>

#include <cmath>
#include <json.hpp>
#include <map>

#include "posefabric/core/errors.hpp"
#include "posefabric/core/ops.hpp"
#include "posefabric/core/rng.hpp"
#include "posefabric/parts/heatmap.hpp"
#include "posefabric/parts/schema.hpp"
#include "posefabric/parts/squash.hpp"

using namespace posefabric;
using namespace posefabric::parts;

namespace {

using Table = std::vector<std::vector<int>>;

std::vector<int> span_of(int a, int b) {
  std::vector<int> v;
  for (int i = a; i <= b; ++i) v.push_back(i);
  return v;
}

Table groups_of(const PartGrouping& g) {
  Table t;
  for (const auto& p : g.groups) t.push_back(p.keypoints);
  return t;
}

Tensor mirror(const Tensor& maps, const std::vector<int>& perm) {
  const Shape& s = maps.shape();
  Tensor out(s);
  for (int n = 0; n < s.n; ++n)
    for (int k = 0; k < s.c; ++k)
      for (int y = 0; y < s.h; ++y)
        for (int x = 0; x < s.w; ++x) out.at(n, perm[k], y, s.w - 1 - x) = maps.at(n, k, y, x);
  return out;
}

}  // namespace

TEST_CASE("body-part groupings") {
  const auto mpii = mpii16();
  const auto coco = coco17();
  // Expected groups, MPII then COCO.
  const std::map<std::string, std::pair<Table, Table>> expected{
      {"P1", {{span_of(0, 15)}, {span_of(0, 16)}}},
      {"P3", {{span_of(0, 2), span_of(3, 8), span_of(9, 15)}, {span_of(0, 4), span_of(5, 10), span_of(11, 16)}}},
      {"P5",
       {{span_of(0, 4), {5, 7}, {6, 8}, {9, 10, 15}, span_of(11, 14)},
        {span_of(0, 6), {7, 9}, {8, 10}, {11, 12}, span_of(13, 16)}}},
      {"P8",
       {{span_of(0, 4), {3, 5}, {5, 7}, {4, 6}, {6, 8}, {9, 10, 11, 12, 15}, {11, 13}, {12, 14}},
        {span_of(0, 6), {5, 7}, {7, 9}, {6, 8}, {8, 10}, span_of(11, 14), {13, 15}, {14, 16}}}},
  };
  for (const auto& [mode, tables] : expected) {
    INFO(mode);
    CHECK(groups_of(make_grouping(mode, mpii)) == tables.first);
    CHECK(groups_of(make_grouping(mode, coco)) == tables.second);
  }
  const auto p8 = make_grouping("P8", mpii);
  CHECK(p8.indicator(5, 1, 1));
  CHECK(p8.indicator(5, 2, 0));
  CHECK_FALSE(p8.indicator(5, 3, 0));
  CHECK_THROWS_AS(make_grouping("P4", mpii), UsageError);
  CHECK_THROWS_AS(schema_by_name("h36m"), UsageError);

  PartGrouping holes{{{"a", {0, 1}}}, 3};
  CHECK_THROWS_AS(holes.validate(), ConfigError);
  const auto round = grouping_from_json(grouping_to_json(p8), 16);
  CHECK(groups_of(round) == groups_of(p8));
}

TEST_CASE("flip permutations") {
  for (const auto& s : {mpii16(), coco17(), synthetic6()}) {
    const auto perm = s.flip_permutation();
    for (int k = 0; k < s.size(); ++k) CHECK(perm[perm[k]] == k);
  }
  CHECK(synthetic6().flip_permutation() == std::vector<int>{0, 1, 3, 2, 5, 4});
}

TEST_CASE("squash") {
  CHECK(squash_norm(1.0) == 0.5);
  CHECK(squash_norm(0.0) == 0.0);
  real last = -1;
  for (real r = 0; r < 50; r += 0.37) {
    const real c = squash_norm(r);
    CHECK(c >= 0);
    CHECK(c < 1);
    CHECK(c > last);
    last = c;
  }
  CHECK(inverse_squash(0.5) == doctest::Approx(1.0).epsilon(1e-15));
  CHECK(inverse_squash(0.0) == 0.0);
  for (int i = 0; i < 100; ++i) CHECK(std::abs(squash_norm(inverse_squash(i / 100.0)) - i / 100.0) <= 1e-9);
  CHECK_THROWS_AS(inverse_squash(1.0), DomainError);
  CHECK_THROWS_AS(inverse_squash(-0.1), DomainError);

  SUBCASE("vectors keep their direction") {
    Rng rng(1);
    const int d = 5;
    Tensor rep({1, 2 * d, 10, 10});
    rng.fill_normal(rep, 2.0);
    for (int p = 0; p < 10; ++p) rep.at(0, 0 * d + p % d, 0, p) = 0;  // some partial zeros
    for (int j = 0; j < d; ++j) rep.at(0, d + j, 3, 3) = 0;          // one exact zero vector
    const Tensor sq = squash_vectors(rep, d);
    for (int j = 0; j < 2; ++j)
      for (int y = 0; y < 10; ++y)
        for (int x = 0; x < 10; ++x) {
          real vv = 0, ss = 0, vs = 0;
          for (int i = 0; i < d; ++i) {
            const real v = rep.at(0, j * d + i, y, x), s = sq.at(0, j * d + i, y, x);
            vv += v * v;
            ss += s * s;
            vs += v * s;
          }
          if (vv == 0) {
            CHECK(ss == 0);
            continue;
          }
          CHECK(std::abs(vs / std::sqrt(vv * ss) - 1) <= 1e-12);
          CHECK(std::sqrt(ss) == doctest::Approx(squash_norm(std::sqrt(vv))).epsilon(1e-13));
        }
  }
  SUBCASE("zero vector has zero norm and zero gradient") {
    Var rep = Var::leaf(Tensor({1, 4, 1, 1}));
    Tape tape;
    const Var n = squash_field(rep, 4);
    CHECK(n.value()[0] == 0);
    tape.backward(sum(n));
    for (real g : rep.grad().data()) CHECK(g == 0);
  }
}

TEST_CASE("score aggregation") {
  const auto g3 = make_grouping("P3", mpii16());
  const auto g8 = make_grouping("P8", mpii16());
  Rng rng(2);
  const auto parts_for = [&](const PartGrouping& g) {
    std::vector<Var> out;
    for (const auto& p : g.groups) {
      Tensor t({1, static_cast<int>(p.keypoints.size()), 2, 2});
      rng.fill_uniform(t, 0, 1);
      out.push_back(Var::constant(t));
    }
    return out;
  };
  const auto p3 = parts_for(g3);
  const Var h3 = aggregate_scores(p3, g3);
  CHECK(h3.shape() == Shape{1, 16, 2, 2});
  // l_elbow is local entry 2 of the upper limb group.
  CHECK(h3.value().at(0, 5, 1, 0) == p3[1].value().at(0, 2, 1, 0));

  const auto p8 = parts_for(g8);
  const Var h8 = aggregate_scores(p8, g8);
  CHECK(h8.value().at(0, 5, 0, 1) == p8[1].value().at(0, 1, 0, 1) + p8[2].value().at(0, 0, 0, 1));

  SUBCASE("part order does not matter") {
    PartGrouping rev = g8;
    std::reverse(rev.groups.begin(), rev.groups.end());
    std::vector<Var> rp(p8.rbegin(), p8.rend());
    const Var hr = aggregate_scores(rp, rev);
    for (std::size_t i = 0; i < hr.value().size(); ++i) CHECK(hr.value()[i] == doctest::Approx(h8.value()[i]).epsilon(1e-15));
  }
  SUBCASE("zero parts give zero scores") {
    std::vector<Var> zeros;
    for (const auto& p : g3.groups) zeros.push_back(Var::constant(Tensor({1, static_cast<int>(p.keypoints.size()), 2, 2})));
    const Var h = aggregate_scores(zeros, g3);
    for (real v : h.value().data()) CHECK(v == 0);
  }
  CHECK_THROWS_AS(aggregate_scores(std::span<const Var>(p3.data(), 2), g3), ConfigError);
}

TEST_CASE("masked heatmap loss") {
  Tensor gt({1, 2, 3, 3});
  Tensor mask({1, 2, 1, 1}, 1.0);
  Tensor pred = gt;
  CHECK(masked_heatmap_loss(Var::constant(pred), gt, mask).value()[0] == 0);
  pred.at(0, 1, 2, 0) = 0.3;
  CHECK(masked_heatmap_loss(Var::constant(pred), gt, mask).value()[0] == doctest::Approx(0.09 / 2).epsilon(1e-15));

  SUBCASE("masked keypoints carry no gradient into their vectors") {
    const auto g = make_grouping("P3", synthetic6());
    Rng rng(3);
    const int d = 3;
    std::vector<Var> reps;
    for (const auto& p : g.groups) {
      Tensor t({2, static_cast<int>(p.keypoints.size()) * d, 4, 4});
      rng.fill_normal(t, 1.0);
      reps.push_back(Var::leaf(t));
    }
    Tensor target({2, 6, 4, 4});
    rng.fill_uniform(target, 0, 1);
    Tensor m({2, 6, 1, 1}, 1.0);
    m.at(0, 4, 0, 0) = 0;  // l_hand of sample 0: group 1, local entry 1
    m.at(1, 4, 0, 0) = 0;
    Tape tape;
    std::vector<Var> norms;
    for (const Var& r : reps) norms.push_back(squash_field(r, d));
    tape.backward(masked_heatmap_loss(aggregate_scores(norms, g), target, m));
    for (int n = 0; n < 2; ++n)
      for (int c = d; c < 2 * d; ++c)
        for (std::size_t p = 0; p < 16; ++p) CHECK(reps[1].grad().plane(n, c)[p] == 0);
    CHECK(reps[1].grad().at(0, 0, 1, 1) != 0);
  }
  SUBCASE("all masked") {
    Var p = Var::leaf(pred);
    Tape tape;
    const Var l = masked_heatmap_loss(p, gt, Tensor({1, 2, 1, 1}));
    CHECK(l.value()[0] == 0);
    tape.backward(l);
    for (real v : p.grad().data()) CHECK(v == 0);
  }
}

TEST_CASE("ground-truth rendering") {
  CHECK(map_to_image(image_to_map(13.25)) == doctest::Approx(13.25).epsilon(1e-15));
  CHECK(image_to_map(1.5) == 0.0);

  const real sigma = 1.5;
  const Point kp{map_to_image(6), map_to_image(5)};
  const auto gt = render_gt_maps({kp, {20, 20}}, {true, false}, sigma, 16, 16);
  CHECK(gt.maps.at(0, 0, 5, 6) == 1.0);
  CHECK(gt.maps.at(0, 0, 5, 6 + 0) == 1.0);
  CHECK(std::abs(gt.maps.at(0, 0, 5, 7) - std::exp(-1.0 / (2 * sigma * sigma))) <= 1e-15);
  Tensor plane({1, 1, 16, 16});
  render_gaussian(plane.ptr(), 16, 16, {6, 5}, 2.0);
  CHECK(std::abs(plane.at(0, 0, 5, 8) - std::exp(-0.5)) <= 1e-15);
  for (int y = 0; y < 16; ++y)
    for (int x = 0; x < 16; ++x) {
      const real r = std::hypot(x - 6.0, y - 5.0);
      if (r > 3 * sigma) CHECK(gt.maps.at(0, 0, y, x) == 0);
      CHECK(gt.maps.at(0, 1, y, x) == 0);
      CHECK(gt.maps.at(0, 0, y, x) >= 0);
      CHECK(gt.maps.at(0, 0, y, x) <= 1);
    }
  CHECK(gt.mask.at(0, 0, 0, 0) == 1);
  CHECK(gt.mask.at(0, 1, 0, 0) == 0);
}

TEST_CASE("keypoint decoding") {
  SUBCASE("on-grid symmetric peak is not shifted") {
    Tensor maps({1, 1, 24, 24});
    render_gaussian(maps.ptr(), 24, 24, {10, 12}, 2.0);
    const auto kp = decode_keypoints(maps);
    CHECK(kp[0].x == 10);
    CHECK(kp[0].y == 12);
    CHECK(kp[0].score == 1.0);
  }
  SUBCASE("half-pixel centre") {
    Tensor maps({1, 1, 24, 24});
    render_gaussian(maps.ptr(), 24, 24, {10.5, 12}, 2.0);
    const auto kp = decode_keypoints(maps);
    CHECK(std::abs(kp[0].x - 10.5) <= 0.3);
    CHECK(kp[0].y == 12);
  }
  SUBCASE("ties go to the lowest row-major index") {
    Tensor maps({1, 1, 4, 4}, 0.5);
    const auto kp = decode_keypoints(maps, 0, false);
    CHECK(kp[0].x == 0);
    CHECK(kp[0].y == 0);
  }
  SUBCASE("quarter offset reduces the error") {
    Rng rng(4);
    real with = 0, without = 0;
    for (int i = 0; i < 200; ++i) {
      const Point c{rng.uniform(4, 28), rng.uniform(4, 28)};
      Tensor maps({1, 1, 32, 32});
      render_gaussian(maps.ptr(), 32, 32, c, 2.0);
      const auto a = decode_keypoints(maps, 0, true)[0];
      const auto b = decode_keypoints(maps, 0, false)[0];
      with += (std::abs(a.x - c.x) + std::abs(a.y - c.y)) / 2;
      without += (std::abs(b.x - c.x) + std::abs(b.y - c.y)) / 2;
    }
    CHECK(with / 200 <= 0.3);
    CHECK(with < without);
  }
  SUBCASE("decoding is equivariant to mirroring") {
    Rng rng(5);
    const auto perm = synthetic6().flip_permutation();
    Tensor maps({2, 6, 16, 16});
    for (int n = 0; n < 2; ++n)
      for (int k = 0; k < 6; ++k) render_gaussian(maps.plane(n, k), 16, 16, {rng.uniform(2, 13), rng.uniform(2, 13)}, 1.5);
    const Tensor flipped = mirror(maps, perm);
    for (int n = 0; n < 2; ++n) {
      const auto a = decode_keypoints(maps, n);
      const auto b = decode_keypoints(flipped, n);
      for (int k = 0; k < 6; ++k) {
        CHECK(b[perm[k]].x == 15 - a[k].x);
        CHECK(b[perm[k]].y == a[k].y);
      }
    }
    CHECK(unflip_maps(flipped, perm).data()[37] == maps.data()[37]);
  }
  SUBCASE("flip averaging of a symmetric map changes nothing") {
    Tensor maps({1, 2, 16, 16});
    render_gaussian(maps.plane(0, 0), 16, 16, {7.5, 6.2}, 2.0);
    render_gaussian(maps.plane(0, 1), 16, 16, {7.5, 9.0}, 1.0);
    const std::vector<int> identity{0, 1};
    const auto a = decode_keypoints(maps);
    const auto b = decode_with_flip(maps, maps, identity);
    for (int k = 0; k < 2; ++k) {
      CHECK(a[k].x == b[k].x);
      CHECK(a[k].y == b[k].y);
    }
  }
  SUBCASE("image space and json") {
    Tensor maps({1, 1, 8, 8});
    maps.at(0, 0, 2, 3) = 1;
    const auto kp = to_image_space(decode_keypoints(maps));
    CHECK(kp[0].x == map_to_image(3));
    CHECK(kp[0].y == map_to_image(2));
    const auto j = nlohmann::json::parse(keypoints_to_json(kp));
    CHECK(j.at(0).at("keypoint") == 0);
    CHECK(j.at(0).at("score") == 1.0);
  }
  CHECK_THROWS_AS(decode_keypoints(Tensor()), UsageError);
}

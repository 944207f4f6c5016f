#include "posefabric/harness/synthetic.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

#include "posefabric/core/errors.hpp"
#include "posefabric/core/rng.hpp"

namespace posefabric::harness {

void SyntheticPoseConfig::validate() const {
  if (image_size < 32 || image_size % 32 != 0) throw ConfigError("image size must be a positive multiple of 32");
  if (!(thickness_min > 0 && thickness_min <= thickness_max)) throw ConfigError("bad bone thickness range");
  if (!(intensity_min > 0 && intensity_min <= intensity_max)) throw ConfigError("bad bone intensity range");
  if (!(noise >= 0)) throw ConfigError("noise level must be >= 0");
  if (!(occlusion >= 0 && occlusion <= 1)) throw ConfigError("occlusion probability must lie in [0, 1]");
}

std::vector<std::pair<int, int>> synthetic_skeleton() { return {{1, 0}, {1, 2}, {2, 4}, {1, 3}, {3, 5}}; }

namespace {

constexpr real kDeg = std::numbers::pi / 180.0;

Point step(Point from, real angle, real length) {
  return {from.x + length * std::cos(angle), from.y + length * std::sin(angle)};
}

real segment_distance(real px, real py, Point a, Point b) {
  const real vx = b.x - a.x, vy = b.y - a.y;
  const real len2 = vx * vx + vy * vy;
  real t = len2 > 0 ? ((px - a.x) * vx + (py - a.y) * vy) / len2 : 0.0;
  t = std::clamp(t, 0.0, 1.0);
  const real dx = px - (a.x + t * vx), dy = py - (a.y + t * vy);
  return std::sqrt(dx * dx + dy * dy);
}

// Coverage of a pixel by a stroke of the given half width, with a one-pixel ramp.
real coverage(real dist, real half_width) { return std::clamp(half_width + 0.5 - dist, 0.0, 1.0); }

}  // namespace

Sample generate_sample(const SyntheticPoseConfig& cfg, std::uint64_t index) {
  cfg.validate();
  Rng rng = Rng::derive(cfg.seed, index);
  const real s = cfg.image_size;
  const real c = (s - 1) / 2;
  const real lo = 2, hi = s - 3;

  std::vector<Point> kp(kSyntheticJoints);
  for (;;) {
    const Point neck{c + rng.uniform(-0.08, 0.08) * s, 0.45 * s + rng.uniform(-0.08, 0.08) * s};
    kp[1] = neck;
    kp[0] = step(neck, -90 * kDeg + rng.uniform(-30, 30) * kDeg, rng.uniform(0.14, 0.2) * s);
    const real left = rng.uniform(-70, 70) * kDeg;
    kp[2] = step(neck, left, rng.uniform(0.16, 0.24) * s);
    kp[4] = step(kp[2], left + rng.uniform(-90, 90) * kDeg, rng.uniform(0.14, 0.2) * s);
    const real right = std::numbers::pi - rng.uniform(-70, 70) * kDeg;
    kp[3] = step(neck, right, rng.uniform(0.16, 0.24) * s);
    kp[5] = step(kp[3], right + rng.uniform(-90, 90) * kDeg, rng.uniform(0.14, 0.2) * s);
    if (std::all_of(kp.begin(), kp.end(), [&](Point p) { return p.x >= lo && p.x <= hi && p.y >= lo && p.y <= hi; }))
      break;
  }

  const int n = cfg.image_size;
  Sample out{Tensor(Shape{1, 1, n, n}), kp, std::vector<bool>(kSyntheticJoints, true)};
  const real background = rng.uniform(0.0, 0.2);
  const real intensity = rng.uniform(cfg.intensity_min, cfg.intensity_max);
  const real half_width = 0.5 * rng.uniform(cfg.thickness_min, cfg.thickness_max) * s / 64.0;
  const real head_radius = 0.05 * s;
  const auto bones = synthetic_skeleton();
  for (int y = 0; y < n; ++y)
    for (int x = 0; x < n; ++x) {
      real v = 0;
      for (auto [a, b] : bones) v = std::max(v, coverage(segment_distance(x, y, kp[a], kp[b]), half_width));
      const real dh = std::hypot(x - kp[0].x, y - kp[0].y);
      v = std::max(v, coverage(dh - head_radius, 0.0));
      out.image.at(0, 0, y, x) = std::max(background, intensity * v);
    }

  const int patch = std::max(3, static_cast<int>(std::lround(0.12 * s)));
  for (int k = 0; k < kSyntheticJoints; ++k) {
    if (!rng.bernoulli(cfg.occlusion)) continue;
    out.visible[k] = false;
    const int x0 = static_cast<int>(std::lround(kp[k].x + rng.uniform(-1, 1))) - patch / 2;
    const int y0 = static_cast<int>(std::lround(kp[k].y + rng.uniform(-1, 1))) - patch / 2;
    for (int y = std::max(0, y0); y < std::min(n, y0 + patch); ++y)
      for (int x = std::max(0, x0); x < std::min(n, x0 + patch); ++x) out.image.at(0, 0, y, x) = background;
  }
  if (cfg.noise > 0)
    for (real& v : out.image.data()) v += cfg.noise * rng.normal();
  return out;
}

std::vector<Sample> generate_dataset(const SyntheticPoseConfig& config, int count, int first) {
  if (count < 1) throw ConfigError("dataset size must be >= 1");
  std::vector<Sample> out;
  out.reserve(static_cast<std::size_t>(count));
  for (int i = 0; i < count; ++i) out.push_back(generate_sample(config, static_cast<std::uint64_t>(first + i)));
  return out;
}

}  // namespace posefabric::harness

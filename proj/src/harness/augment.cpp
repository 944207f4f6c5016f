#include "posefabric/harness/augment.hpp"

#include <cmath>
#include <numbers>

namespace posefabric::harness {

AugmentParams draw_augment(Rng& rng, const AugmentRanges& r) {
  AugmentParams p;
  p.rotation_deg = rng.uniform(-r.max_rotation_deg, r.max_rotation_deg);
  p.scale = rng.uniform(r.min_scale, r.max_scale);
  p.flip = rng.bernoulli(r.flip_probability);
  return p;
}

Point transform_point(Point p, const AugmentParams& a, int width, int height) {
  const real cx = (width - 1) / 2.0, cy = (height - 1) / 2.0;
  const real t = a.rotation_deg * std::numbers::pi / 180.0;
  const real dx = p.x - cx, dy = p.y - cy;
  Point q{cx + a.scale * (std::cos(t) * dx - std::sin(t) * dy), cy + a.scale * (std::sin(t) * dx + std::cos(t) * dy)};
  if (a.flip) q.x = width - 1 - q.x;
  return q;
}

Sample apply_augment(const Sample& sample, const AugmentParams& a, const std::vector<int>& perm) {
  const Shape& s = sample.image.shape();
  const int w = s.w, h = s.h;
  const real cx = (w - 1) / 2.0, cy = (h - 1) / 2.0;
  const real t = a.rotation_deg * std::numbers::pi / 180.0;
  const real ct = std::cos(t), st = std::sin(t);

  Sample out{Tensor(s), {}, {}};
  for (int n = 0; n < s.n; ++n)
    for (int c = 0; c < s.c; ++c) {
      const real* src = sample.image.plane(n, c);
      real* dst = out.image.plane(n, c);
      for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) {
          // Inverse map: undo the mirror, then the scaled rotation.
          const real ux = (a.flip ? w - 1 - x : x) - cx;
          const real uy = y - cy;
          const real sx = cx + (ct * ux + st * uy) / a.scale;
          const real sy = cy + (-st * ux + ct * uy) / a.scale;
          const int x0 = static_cast<int>(std::floor(sx)), y0 = static_cast<int>(std::floor(sy));
          const real fx = sx - x0, fy = sy - y0;
          real v = 0;
          for (int dy = 0; dy < 2; ++dy)
            for (int dx = 0; dx < 2; ++dx) {
              const int xx = x0 + dx, yy = y0 + dy;
              if (xx < 0 || yy < 0 || xx >= w || yy >= h) continue;
              v += (dx ? fx : 1 - fx) * (dy ? fy : 1 - fy) * src[yy * w + xx];
            }
          dst[y * w + x] = v;
        }
    }

  const std::size_t k_count = sample.keypoints.size();
  out.keypoints.resize(k_count);
  out.visible.resize(k_count);
  for (std::size_t k = 0; k < k_count; ++k) {
    const std::size_t target = a.flip ? static_cast<std::size_t>(perm[k]) : k;
    const Point q = transform_point(sample.keypoints[k], a, w, h);
    out.keypoints[target] = q;
    out.visible[target] = sample.visible[k] && q.x >= 0 && q.y >= 0 && q.x <= w - 1 && q.y <= h - 1;
  }
  return out;
}

Sample augment(const Sample& sample, Rng& rng, const std::vector<int>& perm, const AugmentRanges& ranges) {
  return apply_augment(sample, draw_augment(rng, ranges), perm);
}

Tensor flip_images(const Tensor& images) {
  const Shape& s = images.shape();
  Tensor out(s);
  for (int n = 0; n < s.n; ++n)
    for (int c = 0; c < s.c; ++c)
      for (int y = 0; y < s.h; ++y)
        for (int x = 0; x < s.w; ++x) out.at(n, c, y, x) = images.at(n, c, y, s.w - 1 - x);
  return out;
}

}  // namespace posefabric::harness

#include "posefabric/parts/heatmap.hpp"

#include <cmath>
#include <json.hpp>

#include "posefabric/core/errors.hpp"

namespace posefabric::parts {

real image_to_map(real v) { return (v + 0.5) / kMapStride - 0.5; }
real map_to_image(real v) { return (v + 0.5) * kMapStride - 0.5; }

void render_gaussian(real* plane, int h, int w, Point center, real sigma) {
  const real cutoff = 3.0 * sigma;
  const real denom = 2.0 * sigma * sigma;
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      const real dx = x - center.x;
      const real dy = y - center.y;
      const real dist2 = dx * dx + dy * dy;
      plane[y * w + x] = dist2 > cutoff * cutoff ? 0.0 : std::exp(-dist2 / denom);
    }
}

GroundTruthMaps render_gt_maps(const std::vector<Point>& keypoints, const std::vector<bool>& visible, real sigma,
                               int map_h, int map_w) {
  if (keypoints.size() != visible.size()) throw ConfigError("render_gt_maps: keypoint/visibility size mismatch");
  const int k_count = static_cast<int>(keypoints.size());
  GroundTruthMaps gt{Tensor(Shape{1, k_count, map_h, map_w}), Tensor(Shape{1, k_count, 1, 1})};
  for (int k = 0; k < k_count; ++k) {
    if (!visible[k]) continue;
    gt.mask[k] = 1.0;
    render_gaussian(gt.maps.plane(0, k), map_h, map_w,
                    Point{image_to_map(keypoints[k].x), image_to_map(keypoints[k].y)}, sigma);
  }
  return gt;
}

std::vector<Keypoint> decode_keypoints(const Tensor& maps, int n, bool quarter_offset) {
  const Shape& s = maps.shape();
  if (maps.empty() || !s.valid()) throw UsageError("decode_keypoints: empty map");
  if (n < 0 || n >= s.n) throw UsageError("decode_keypoints: sample index out of range");
  std::vector<Keypoint> out;
  for (int k = 0; k < s.c; ++k) {
    const real* m = maps.plane(n, k);
    std::size_t best = 0;
    for (std::size_t i = 1; i < s.plane(); ++i)
      if (m[i] > m[best]) best = i;
    const int py = static_cast<int>(best) / s.w;
    const int px = static_cast<int>(best) % s.w;
    Keypoint kp{k, static_cast<real>(px), static_cast<real>(py), m[best]};
    if (quarter_offset) {
      if (px > 0 && px < s.w - 1) {
        const real l = m[best - 1], r = m[best + 1];
        if (r > l) kp.x += 0.25;
        if (l > r) kp.x -= 0.25;
      }
      if (py > 0 && py < s.h - 1) {
        const real u = m[best - s.w], d = m[best + s.w];
        if (d > u) kp.y += 0.25;
        if (u > d) kp.y -= 0.25;
      }
    }
    out.push_back(kp);
  }
  return out;
}

Tensor unflip_maps(const Tensor& flipped, const std::vector<int>& perm) {
  const Shape& s = flipped.shape();
  if (static_cast<int>(perm.size()) != s.c) throw ConfigError("unflip_maps: permutation size mismatch");
  Tensor out(s);
  for (int n = 0; n < s.n; ++n)
    for (int k = 0; k < s.c; ++k)
      for (int y = 0; y < s.h; ++y)
        for (int x = 0; x < s.w; ++x) out.at(n, perm[k], y, x) = flipped.at(n, k, y, s.w - 1 - x);
  return out;
}

std::vector<Keypoint> decode_with_flip(const Tensor& maps, const Tensor& flipped_maps, const std::vector<int>& perm,
                                       int n, bool quarter_offset) {
  if (maps.shape() != flipped_maps.shape()) throw ConfigError("decode_with_flip: map shapes differ");
  Tensor avg = unflip_maps(flipped_maps, perm);
  for (std::size_t i = 0; i < avg.size(); ++i) avg[i] = 0.5 * (avg[i] + maps[i]);
  return decode_keypoints(avg, n, quarter_offset);
}

std::vector<Keypoint> to_image_space(std::vector<Keypoint> keypoints) {
  for (Keypoint& k : keypoints) {
    k.x = map_to_image(k.x);
    k.y = map_to_image(k.y);
  }
  return keypoints;
}

std::string keypoints_to_json(const std::vector<Keypoint>& keypoints) {
  nlohmann::json arr = nlohmann::json::array();
  for (const Keypoint& k : keypoints) arr.push_back({{"keypoint", k.index}, {"x", k.x}, {"y", k.y}, {"score", k.score}});
  return arr.dump();
}

}  // namespace posefabric::parts

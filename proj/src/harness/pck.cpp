#include "posefabric/harness/pck.hpp"

#include <algorithm>
#include <cmath>

#include "posefabric/core/errors.hpp"

namespace posefabric::harness {

real PckTable::at(real radius) const {
  for (std::size_t i = 0; i < radii.size(); ++i)
    if (radii[i] == radius) return mean[i];
  throw UsageError("PCK table has no radius " + std::to_string(radius));
}

PckTable evaluate_pck(const std::vector<std::vector<Point>>& pred, const std::vector<std::vector<Point>>& truth,
                      const std::vector<std::vector<bool>>& visible, const std::vector<real>& radii, int height,
                      int width) {
  if (pred.empty()) throw UsageError("PCK over an empty sample set");
  if (pred.size() != truth.size() || pred.size() != visible.size())
    throw UsageError("PCK: prediction, truth and visibility counts differ");
  const std::size_t k_count = truth.front().size();
  const real norm = std::max(height, width);

  PckTable t;
  t.radii = radii;
  t.visible_count.assign(k_count, 0);
  std::vector<std::vector<int>> hits(radii.size(), std::vector<int>(k_count, 0));
  for (std::size_t i = 0; i < pred.size(); ++i) {
    if (pred[i].size() != k_count || truth[i].size() != k_count || visible[i].size() != k_count)
      throw UsageError("PCK: keypoint count differs between samples");
    for (std::size_t k = 0; k < k_count; ++k) {
      if (!visible[i][k]) continue;
      ++t.visible_count[k];
      const real d = std::hypot(pred[i][k].x - truth[i][k].x, pred[i][k].y - truth[i][k].y);
      for (std::size_t r = 0; r < radii.size(); ++r)
        if (d <= radii[r] * norm) ++hits[r][k];
    }
  }
  int total_visible = 0;
  for (int c : t.visible_count) total_visible += c;
  if (total_visible == 0) throw UsageError("PCK: no visible keypoints");
  for (std::size_t r = 0; r < radii.size(); ++r) {
    std::vector<real> row(k_count, 0.0);
    int total = 0;
    for (std::size_t k = 0; k < k_count; ++k) {
      if (t.visible_count[k] > 0) row[k] = static_cast<real>(hits[r][k]) / t.visible_count[k];
      total += hits[r][k];
    }
    t.per_keypoint.push_back(row);
    t.mean.push_back(static_cast<real>(total) / total_visible);
  }
  return t;
}

}  // namespace posefabric::harness

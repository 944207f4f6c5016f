#pragma once

#include <vector>

#include "posefabric/parts/heatmap.hpp"

namespace posefabric::harness {

using parts::Point;

struct PckTable {
  std::vector<real> radii;
  // [radius][keypoint]; keypoints never visible report 0 with count 0.
  std::vector<std::vector<real>> per_keypoint;
  std::vector<int> visible_count;
  // [radius], pooled over all visible keypoints.
  std::vector<real> mean;

  real at(real radius) const;
};

/// Fraction of visible keypoints whose prediction lies within
/// r * max(height, width) pixels of the ground truth. Throws UsageError on
/// an empty set or mismatched sizes.
PckTable evaluate_pck(const std::vector<std::vector<Point>>& predictions,
                      const std::vector<std::vector<Point>>& truth, const std::vector<std::vector<bool>>& visible,
                      const std::vector<real>& radii, int height, int width);

}  // namespace posefabric::harness

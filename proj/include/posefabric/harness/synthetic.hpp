#pragma once

#include <cstdint>
#include <utility>
#include <vector>

#include "posefabric/core/tensor.hpp"
#include "posefabric/parts/heatmap.hpp"

namespace posefabric::harness {

using parts::Point;

/// Stick figure: head, neck, two elbows, two hands. Bones (parent, child):
/// neck-head, neck-l_elbow, l_elbow-l_hand, neck-r_elbow, r_elbow-r_hand.
/// Left limbs extend toward +x so that a horizontal flip swaps the sides.
struct SyntheticPoseConfig {
  int image_size = 64;
  real thickness_min = 1.5;
  real thickness_max = 3.0;
  real intensity_min = 0.6;
  real intensity_max = 1.0;
  real noise = 0.05;
  real occlusion = 0.0;
  std::uint64_t seed = 0;

  void validate() const;
};

inline constexpr int kSyntheticJoints = 6;
std::vector<std::pair<int, int>> synthetic_skeleton();

struct Sample {
  Tensor image;  // (1, 1, S, S)
  std::vector<Point> keypoints;
  std::vector<bool> visible;
};

/// Sample i depends only on (seed, first + i).
std::vector<Sample> generate_dataset(const SyntheticPoseConfig& config, int count, int first = 0);

/// Draws one figure; exposed for the render-and-probe tests.
Sample generate_sample(const SyntheticPoseConfig& config, std::uint64_t index);

}  // namespace posefabric::harness

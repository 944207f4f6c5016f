#pragma once

#include <vector>

#include "posefabric/core/rng.hpp"
#include "posefabric/harness/synthetic.hpp"

namespace posefabric::harness {

struct AugmentParams {
  real rotation_deg = 0;
  real scale = 1;
  bool flip = false;
};

struct AugmentRanges {
  real max_rotation_deg = 45;
  real min_scale = 0.7;
  real max_scale = 1.3;
  real flip_probability = 0.5;
};

AugmentParams draw_augment(Rng& rng, const AugmentRanges& ranges = {});

/// Point under rotation/scale about the image centre followed by the
/// optional mirror x -> W - 1 - x.
Point transform_point(Point p, const AugmentParams& params, int width, int height);

/// Warps the image bilinearly (outside reads give 0), moves keypoints by
/// the same map, swaps flip partners when mirroring and marks keypoints
/// that leave the image invisible.
Sample apply_augment(const Sample& sample, const AugmentParams& params, const std::vector<int>& flip_permutation);

/// draw_augment + apply_augment.
Sample augment(const Sample& sample, Rng& rng, const std::vector<int>& flip_permutation,
               const AugmentRanges& ranges = {});

/// Mirrors an image batch horizontally.
Tensor flip_images(const Tensor& images);

}  // namespace posefabric::harness

#pragma once

#include <string>
#include <vector>

#include "posefabric/core/tensor.hpp"

namespace posefabric::parts {

struct Point {
  real x = 0;
  real y = 0;
};

/// Image pixel i covers map coordinate (i + 0.5) / stride - 0.5, so pixel
/// centres line up and a horizontal flip of the image is a flip of the map.
inline constexpr int kMapStride = 4;
real image_to_map(real v);
real map_to_image(real v);

struct GroundTruthMaps {
  Tensor maps;  // (1, K, h, w)
  Tensor mask;  // (1, K, 1, 1), 1 for visible keypoints
};

/// Unnormalised Gaussian of deviation `sigma` (map pixels) centred at
/// `center` (map coordinates), exactly 0 beyond 3 sigma.
void render_gaussian(real* plane, int h, int w, Point center, real sigma);

/// Keypoints in image coordinates; invisible keypoints get zero maps and a
/// zero mask entry.
GroundTruthMaps render_gt_maps(const std::vector<Point>& keypoints, const std::vector<bool>& visible, real sigma,
                               int map_h, int map_w);

struct Keypoint {
  int index = 0;
  real x = 0;
  real y = 0;
  real score = 0;
};

/// Per keypoint map of sample `n`: argmax (lowest row-major index on ties),
/// then a 0.25 px shift per axis toward the larger of the two neighbours
/// (none on ties or at the border). Coordinates are in map space.
std::vector<Keypoint> decode_keypoints(const Tensor& maps, int n = 0, bool quarter_offset = true);

/// Mirrors each map horizontally and swaps the channels of flipped pairs.
Tensor unflip_maps(const Tensor& flipped, const std::vector<int>& flip_permutation);

/// Averages the maps with the unflipped prediction for the mirrored image,
/// then decodes.
std::vector<Keypoint> decode_with_flip(const Tensor& maps, const Tensor& flipped_maps,
                                       const std::vector<int>& flip_permutation, int n = 0,
                                       bool quarter_offset = true);

std::vector<Keypoint> to_image_space(std::vector<Keypoint> keypoints);

/// [{"keypoint": k, "x": .., "y": .., "score": ..}, ...]
std::string keypoints_to_json(const std::vector<Keypoint>& keypoints);

}  // namespace posefabric::parts

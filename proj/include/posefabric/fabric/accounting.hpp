#pragma once

#include <cstdint>

#include "posefabric/fabric/fabric.hpp"

namespace posefabric::fabric {

enum class CountScope { all, weights, arch };

/// Elements over the live parameter registry (removed ops, empty cells and
/// unused transforms excluded).
std::uint64_t count_params(const Fabric& fabric, CountScope scope = CountScope::all);

/// Multiply-adds of one forward pass for a single image of the given size.
/// Convolutions count k*k*C_in/groups*C_out*H_out*W_out; norms, ReLUs and
/// bilinear resampling count one per output element; 3x3 pooling counts nine
/// per output element; each mixture term counts one per element. Softmax,
/// concat and skip are free.
std::uint64_t count_flops(const Fabric& fabric, int image_h, int image_w);

/// Spatial extent of scale index `scale` for an image of extent `image`
/// (stride-2 steps round up).
int scale_extent(int image, int scale);

}  // namespace posefabric::fabric

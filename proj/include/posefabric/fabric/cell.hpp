#pragma once

#include <array>
#include <optional>
#include <span>
#include <vector>

#include "posefabric/fabric/modules.hpp"

namespace posefabric::fabric {

/// Scale transform applied to a previous-layer output before it enters a
/// cell: from the next larger resolution (down), the same resolution
/// (identity) or the next smaller resolution (up).
enum class Transform { down, identity, up };

std::string_view transform_name(Transform t);

/// Transform taking a tensor at `input_scale` to `cell_scale`. Throws
/// ConfigError when the scales are not neighbours.
Transform transform_between(int cell_scale, int input_scale);

/// One of the three (tensor, beta) pairs feeding h0. Slot k pairs with
/// beta[k] in the order (2s, s, s/2). A boundary cell lacking a neighbour
/// duplicates another slot's transformed input (`alias`).
struct InputSlot {
  Transform transform = Transform::identity;
  int source_scale = -1;
  int alias = -1;
  bool removed = false;

  bool primary() const { return alias < 0; }
};

class Cell {
 public:
  /// `available` lists the scales present in the previous layer (or the
  /// pyramid / stem feeding the first layer).
  Cell(CellCoord coord, const FabricSpec& spec, std::span<const int> available, int out_channels,
       bool with_bias, Rng& rng);

  CellCoord coord;
  int channels = 0;
  int out_channels = 0;
  int hidden = 1;
  std::array<InputSlot, 3> slots;
  std::optional<ConvBnRelu> down;
  std::optional<Upsample> up;
  Var beta;
  std::vector<std::vector<CandidateOp>> edges;
  Var reduce_kernel;
  Var reduce_bias;
  bool empty = false;

  /// `previous[s]` is the previous layer's output at scale s (may be empty
  /// for scales this cell does not read). `alpha_weights` is softmax(alpha)
  /// of the owning fabric, shaped (edges, ops, 1, 1). `node_shape` is the
  /// (N, channels, h, w) extent of the cell's nodes.
  Var forward(std::span<const Var> previous, const Var& alpha_weights, const Shape& node_shape) const;

  /// Slot k is read by the forward pass (itself or through an alias).
  bool transform_needed(int slot) const;
  void collect(ParameterList& out, const std::string& prefix) const;
};

}  // namespace posefabric::fabric

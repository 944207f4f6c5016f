#pragma once

#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "posefabric/fabric/cell.hpp"

namespace posefabric::fabric {

enum class FabricRole { backbone, subnetwork };

std::string_view role_name(FabricRole role);

/// Two stride-2 Conv-BN-ReLU layers taking the image to scale 1/4:
/// in -> 2C -> 4C channels.
struct Stem {
  Stem(int in_channels, int channel_factor, Rng& rng);

  ConvBnRelu first;
  ConvBnRelu second;

  Var forward(const Var& image) const { return second.forward(first.forward(image)); }
  void collect(ParameterList& out, const std::string& prefix) const;
};

/// Handles onto one fabric's architecture parameters. The handles share
/// storage with the fabric: writing through them changes the fabric.
struct ArchParams {
  Var alpha;                       // (edges, ops, 1, 1); alpha(o, e) lives at e * ops + o
  std::map<CellCoord, Var> beta;   // (1, 3, 1, 1) per live cell: (2s, s, s/2)

  real alpha_at(int op, int edge) const;
  std::vector<Var> vars() const;
};

/// A woven grid of cells plus, for backbones, the stem. Copies share all
/// parameters and normalization statistics; only the pruning masks are
/// per-copy.
class Fabric {
 public:
  std::string name;
  FabricRole role = FabricRole::subnetwork;
  FabricSpec spec;
  int first_layer = 1;
  int last_layer = 0;
  std::optional<Stem> stem;
  std::vector<std::vector<Cell>> layers;
  Var alpha;
  std::vector<int> input_scales;
  std::vector<int> output_scales;
  int output_channels = 0;

  /// Backbone: {image} -> pyramid ordered by scale. Subnetwork: pyramid
  /// (one tensor per spec scale) -> {part representation}.
  std::vector<Var> forward(std::span<const Var> inputs) const;

  const Cell* find(CellCoord coord) const;
  Cell* find(CellCoord coord);
  std::size_t cell_count() const;
  std::vector<CellCoord> cell_coords() const;

  ArchParams arch() const;
  /// Live parameters in a stable order, arch parameters flagged.
  ParameterList parameters() const;
  std::vector<Var> weight_vars() const;
  std::vector<Var> arch_vars() const;

  /// Live batch-norm states (shared with every copy of this fabric).
  std::vector<std::shared_ptr<BatchNormState>> norm_states() const;
  /// Switches every batch-norm between batch statistics and running estimates.
  void set_training(bool training) const;
};

/// Stem followed by the first `reserved_layers` layers. Layer l covers scales
/// 0 .. min(l, num_scales) - 1; the pyramid is the last layer's outputs.
Fabric build_backbone(const FabricSpec& spec, int reserved_layers, int image_channels, Rng& rng,
                      std::string name = "backbone");

/// The last `reserved_layers` layers reading a full pyramid and ending in the
/// scale-1/4 cell of layer L, whose reduction conv emits `out_channels`
/// (with bias). Pooling ops are dropped from the candidate set. With `trim`,
/// cells without a path to that cell are dropped.
Fabric build_subnetwork(const FabricSpec& spec, int reserved_layers, int out_channels, Rng& rng,
                        std::string name = "cnf", bool trim = true);

/// Overwrites alpha and every beta with stddev * N(0, 1).
void init_arch_normal(const Fabric& fabric, real stddev, Rng& rng);

}  // namespace posefabric::fabric

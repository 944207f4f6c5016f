#pragma once

#include <compare>
#include <string>
#include <string_view>
#include <vector>

namespace posefabric::fabric {

enum class OpKind { zero, skip, sep_conv3x3, dil_conv3x3, avg_pool3x3, max_pool3x3 };

std::string_view op_name(OpKind kind);
OpKind parse_op(std::string_view name);

/// zero, skip, sep conv, dil conv, avg pool, max pool.
std::vector<OpKind> all_ops();
/// Pooling is excluded from subnetwork heads.
std::vector<OpKind> head_ops();

/// Hyperparameters of one fabric. Scale index i denotes resolution 1/(4 * 2^i);
/// the data nodes at scale index i carry channel_factor * 4 * 2^i channels.
struct FabricSpec {
  int layers = 6;
  int num_scales = 4;
  int hidden = 1;
  int channel_factor = 4;
  std::vector<OpKind> ops = all_ops();

  void validate() const;

  int channels_at(int scale) const { return channel_factor * (4 << scale); }
  int denominator(int scale) const { return 4 << scale; }
  int edge_count() const { return hidden * (hidden + 1) / 2; }
  int op_count() const { return static_cast<int>(ops.size()); }
  bool has_pooling() const;
};

/// Index of hidden-node edge i -> j (0 <= i < j <= H), ordered by j then i.
int edge_index(int from, int to);
std::pair<int, int> edge_endpoints(int index);

struct CellCoord {
  int scale = 0;  // index into FabricSpec scales
  int layer = 1;  // 1-based fabric layer

  auto operator<=>(const CellCoord&) const = default;
  std::string str() const;  // "(1/8,3)"
};

std::string scale_label(int scale);  // "1/8"
int parse_scale_label(std::string_view label);
CellCoord parse_coord(std::string_view text);

}  // namespace posefabric::fabric

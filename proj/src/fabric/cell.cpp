#include "posefabric/fabric/cell.hpp"

#include <algorithm>

#include "posefabric/core/errors.hpp"

namespace posefabric::fabric {

std::string_view transform_name(Transform t) {
  switch (t) {
    case Transform::down:
      return "down";
    case Transform::identity:
      return "identity";
    case Transform::up:
      return "up";
  }
  return "?";
}

Transform transform_between(int cell_scale, int input_scale) {
  if (input_scale == cell_scale - 1) return Transform::down;
  if (input_scale == cell_scale) return Transform::identity;
  if (input_scale == cell_scale + 1) return Transform::up;
  throw ConfigError("scale " + scale_label(input_scale) + " is not a neighbour of cell scale " +
                    scale_label(cell_scale));
}

Cell::Cell(CellCoord coord_, const FabricSpec& spec, std::span<const int> available,
           int out_channels_, bool with_bias, Rng& rng)
    : coord(coord_),
      channels(spec.channels_at(coord_.scale)),
      out_channels(out_channels_),
      hidden(spec.hidden) {
  const auto has = [&](int s) { return std::find(available.begin(), available.end(), s) != available.end(); };
  const int wanted[3] = {coord.scale - 1, coord.scale, coord.scale + 1};
  for (int k = 0; k < 3; ++k) {
    if (wanted[k] >= 0 && wanted[k] < spec.num_scales && has(wanted[k])) {
      slots[k].source_scale = wanted[k];
      slots[k].transform = transform_between(coord.scale, wanted[k]);
    }
  }
  // Missing neighbours copy an available slot, preferring the same scale.
  constexpr int preference[3] = {1, 0, 2};
  int fallback = -1;
  for (int k : preference)
    if (slots[k].source_scale >= 0) {
      fallback = k;
      break;
    }
  if (fallback < 0)
    throw ConfigError("cell " + coord.str() + " has no input at a neighbouring scale");
  for (int k = 0; k < 3; ++k)
    if (slots[k].source_scale < 0) {
      slots[k].alias = fallback;
      slots[k].source_scale = slots[fallback].source_scale;
      slots[k].transform = slots[fallback].transform;
    }

  for (const auto& s : slots) {
    if (!s.primary()) continue;
    if (s.transform == Transform::down && !down)
      down.emplace(spec.channels_at(coord.scale - 1), channels, 3, 2, rng);
    if (s.transform == Transform::up && !up) up.emplace(spec.channels_at(coord.scale + 1), channels, rng);
  }

  beta = Var::leaf(Tensor(Shape{1, 3, 1, 1}, 0.0));
  edges.resize(static_cast<std::size_t>(spec.edge_count()));
  for (auto& edge : edges)
    for (OpKind kind : spec.ops) edge.push_back(CandidateOp::make(kind, channels, rng));

  reduce_kernel = make_kernel(Shape{out_channels, channels * hidden, 1, 1}, rng);
  if (with_bias) reduce_bias = Var::leaf(Tensor(Shape{1, out_channels, 1, 1}, 0.0));
}

bool Cell::transform_needed(int slot) const {
  for (int k = 0; k < 3; ++k) {
    if (slots[k].removed) continue;
    const int owner = slots[k].primary() ? k : slots[k].alias;
    if (owner == slot) return true;
  }
  return false;
}

Var Cell::forward(std::span<const Var> previous, const Var& alpha_weights, const Shape& node_shape) const {
  if (empty) throw UsageError("forward through removed cell " + coord.str());
  std::array<Var, 3> transformed;
  for (int k = 0; k < 3; ++k) {
    const InputSlot& s = slots[k];
    if (!s.primary() || !transform_needed(k)) continue;
    if (s.source_scale >= static_cast<int>(previous.size()) || !previous[s.source_scale])
      throw ConfigError("cell " + coord.str() + " is missing its input at scale " + scale_label(s.source_scale));
    const Var& src = previous[s.source_scale];
    switch (s.transform) {
      case Transform::down:
        transformed[k] = down->forward(src);
        break;
      case Transform::identity:
        if (src.shape().c != channels)
          throw ConfigError("cell " + coord.str() + " expects " + std::to_string(channels) +
                            " channels at its own scale, got " + std::to_string(src.shape().c));
        transformed[k] = src;
        break;
      case Transform::up:
        transformed[k] = up->forward(src);
        break;
    }
    if (transformed[k].shape() != node_shape)
      throw ConfigError("cell " + coord.str() + ": " + std::string(transform_name(s.transform)) + " input has shape " +
                        transformed[k].shape().str() + ", expected " + node_shape.str());
  }

  std::array<Var, 3> terms;
  for (int k = 0; k < 3; ++k)
    if (!slots[k].removed) terms[k] = transformed[slots[k].primary() ? k : slots[k].alias];
  const Var beta_weights = softmax(beta);
  static constexpr int kSlotIndex[3] = {0, 1, 2};
  std::vector<Var> nodes{weighted_sum(terms, beta_weights, kSlotIndex, node_shape)};

  const int op_count = edges.empty() ? 0 : static_cast<int>(edges.front().size());
  for (int j = 1; j <= hidden; ++j) {
    std::vector<Var> mix;
    std::vector<int> index;
    for (int i = 0; i < j; ++i) {
      const int e = edge_index(i, j);
      for (int o = 0; o < op_count; ++o) {
        const CandidateOp& op = edges[e][o];
        if (op.removed || op.kind == OpKind::zero) continue;
        mix.push_back(op.forward(nodes[i]));
        index.push_back(e * op_count + o);
      }
    }
    nodes.push_back(weighted_sum(mix, alpha_weights, index, node_shape));
  }
  const Var hidden_cat =
      hidden == 1 ? nodes[1] : concat_channels(std::span<const Var>(nodes).subspan(1));
  return conv2d(hidden_cat, reduce_kernel, reduce_bias, ConvOptions{});
}

void Cell::collect(ParameterList& out, const std::string& prefix) const {
  if (empty) return;
  const std::string p = prefix + "/cell" + coord.str();
  out.push_back({p + "/beta", beta, ParamKind::arch});
  const auto used = [&](Transform t) {
    for (int k = 0; k < 3; ++k)
      if (slots[k].primary() && slots[k].transform == t && transform_needed(k)) return true;
    return false;
  };
  if (down && used(Transform::down)) down->collect(out, p + "/down");
  if (up && used(Transform::up)) up->collect(out, p + "/up");
  for (std::size_t e = 0; e < edges.size(); ++e) {
    const auto [from, to] = edge_endpoints(static_cast<int>(e));
    const std::string ep = p + "/edge(" + std::to_string(from) + "->" + std::to_string(to) + ")";
    for (const CandidateOp& op : edges[e])
      if (!op.removed) op.collect(out, ep);
  }
  out.push_back({p + "/reduce/conv", reduce_kernel});
  if (reduce_bias) out.push_back({p + "/reduce/bias", reduce_bias});
}

}  // namespace posefabric::fabric

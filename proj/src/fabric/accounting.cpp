#include "posefabric/fabric/accounting.hpp"

#include <tuple>

namespace posefabric::fabric {

namespace {

using u64 = std::uint64_t;

int half(int x) { return (x + 1) / 2; }

u64 conv_cost(int k, int cin_per_group, int cout, u64 out_plane) {
  return static_cast<u64>(k) * k * cin_per_group * cout * out_plane;
}

u64 op_cost(OpKind kind, int c, u64 plane) {
  const u64 numel = static_cast<u64>(c) * plane;
  switch (kind) {
    case OpKind::zero:
    case OpKind::skip:
      return 0;
    case OpKind::sep_conv3x3:
      return numel + conv_cost(3, 1, c, plane) + conv_cost(1, c, c, plane) + numel;
    case OpKind::dil_conv3x3:
      return numel + conv_cost(3, c, c, plane) + numel;
    case OpKind::avg_pool3x3:
    case OpKind::max_pool3x3:
      return 9 * numel;
  }
  return 0;
}

u64 cell_cost(const Cell& cell, const FabricSpec& spec, int h, int w) {
  const u64 plane = static_cast<u64>(h) * w;
  const u64 numel = static_cast<u64>(cell.channels) * plane;
  u64 total = 0;

  for (int k = 0; k < 3; ++k) {
    const InputSlot& s = cell.slots[k];
    if (!s.primary() || !cell.transform_needed(k)) continue;
    if (s.transform == Transform::down) {
      total += conv_cost(3, spec.channels_at(cell.coord.scale - 1), cell.channels, plane) + 2 * numel;
    } else if (s.transform == Transform::up) {
      const int cin = spec.channels_at(cell.coord.scale + 1);
      total += static_cast<u64>(cin) * plane + conv_cost(1, cin, cell.channels, plane);
    }
  }
  for (const InputSlot& s : cell.slots)
    if (!s.removed) total += numel;

  for (int j = 1; j <= cell.hidden; ++j) {
    u64 terms = 0;
    for (int i = 0; i < j; ++i)
      for (const CandidateOp& op : cell.edges[edge_index(i, j)]) {
        if (op.removed || op.kind == OpKind::zero) continue;
        total += op_cost(op.kind, cell.channels, plane);
        ++terms;
      }
    total += terms * numel;
  }
  total += conv_cost(1, cell.channels * cell.hidden, cell.out_channels, plane);
  return total;
}

}  // namespace

int scale_extent(int image, int scale) {
  int x = half(half(image));
  for (int s = 0; s < scale; ++s) x = half(x);
  return x;
}

u64 count_params(const Fabric& fabric, CountScope scope) {
  u64 total = 0;
  for (const Parameter& p : fabric.parameters()) {
    if (scope == CountScope::weights && p.kind != ParamKind::weight) continue;
    if (scope == CountScope::arch && p.kind != ParamKind::arch) continue;
    total += p.var.value().size();
  }
  return total;
}

u64 count_flops(const Fabric& fabric, int image_h, int image_w) {
  u64 total = 0;
  if (fabric.stem) {
    const int h1 = half(image_h), w1 = half(image_w);
    const int h2 = half(h1), w2 = half(w1);
    for (const auto& [layer, h, w] :
         {std::tuple{&fabric.stem->first, h1, w1}, std::tuple{&fabric.stem->second, h2, w2}}) {
      const Shape& k = layer->kernel.shape();
      const u64 plane = static_cast<u64>(h) * w;
      total += conv_cost(k.h, k.c, k.n, plane) + 2 * static_cast<u64>(k.n) * plane;
    }
  }
  for (const auto& layer : fabric.layers)
    for (const Cell& cell : layer)
      if (!cell.empty)
        total += cell_cost(cell, fabric.spec, scale_extent(image_h, cell.coord.scale),
                           scale_extent(image_w, cell.coord.scale));
  return total;
}

}  // namespace posefabric::fabric

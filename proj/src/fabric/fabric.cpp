#include "posefabric/fabric/fabric.hpp"

#include <algorithm>
#include <set>

#include "posefabric/core/errors.hpp"

namespace posefabric::fabric {

std::string_view role_name(FabricRole role) {
  return role == FabricRole::backbone ? "backbone" : "subnetwork";
}

Stem::Stem(int in_channels, int channel_factor, Rng& rng)
    : first(in_channels, 2 * channel_factor, 3, 2, rng),
      second(2 * channel_factor, 4 * channel_factor, 3, 2, rng) {}

void Stem::collect(ParameterList& out, const std::string& prefix) const {
  first.collect(out, prefix + "/stem/conv1");
  second.collect(out, prefix + "/stem/conv2");
}

real ArchParams::alpha_at(int op, int edge) const {
  const int ops = alpha.shape().c;
  return alpha.value()[static_cast<std::size_t>(edge) * ops + op];
}

std::vector<Var> ArchParams::vars() const {
  std::vector<Var> out{alpha};
  for (const auto& [coord, b] : beta) out.push_back(b);
  return out;
}

std::vector<Var> Fabric::forward(std::span<const Var> inputs) const {
  std::vector<Var> previous(static_cast<std::size_t>(spec.num_scales));
  if (role == FabricRole::backbone) {
    if (inputs.size() != 1) throw ConfigError(name + ": backbone expects a single image input");
    previous[0] = stem->forward(inputs[0]);
  } else {
    if (static_cast<int>(inputs.size()) != spec.num_scales)
      throw ConfigError(name + ": pyramid has " + std::to_string(inputs.size()) +
                        " scales, fabric expects " + std::to_string(spec.num_scales));
    for (int s = 0; s < spec.num_scales; ++s) {
      if (!inputs[s] || inputs[s].shape().c != spec.channels_at(s))
        throw ConfigError(name + ": pyramid level " + scale_label(s) + " must carry " +
                          std::to_string(spec.channels_at(s)) + " channels");
      previous[s] = inputs[s];
    }
  }

  // Node extents per scale: the pyramid's own, or stride-2 steps from the stem.
  std::vector<Shape> extent(static_cast<std::size_t>(spec.num_scales));
  for (int s = 0; s < spec.num_scales; ++s) {
    if (previous[s]) {
      extent[s] = previous[s].shape();
    } else {
      extent[s] = extent[s - 1];
      extent[s].h = (extent[s].h + 1) / 2;
      extent[s].w = (extent[s].w + 1) / 2;
    }
    extent[s].c = spec.channels_at(s);
  }

  const Var alpha_weights = softmax(alpha);
  for (const auto& layer : layers) {
    std::vector<Var> current(static_cast<std::size_t>(spec.num_scales));
    for (const Cell& cell : layer)
      if (!cell.empty) current[cell.coord.scale] = cell.forward(previous, alpha_weights, extent[cell.coord.scale]);
    previous = std::move(current);
  }

  std::vector<Var> out;
  for (int s : output_scales) out.push_back(previous[s]);
  return out;
}

const Cell* Fabric::find(CellCoord coord) const {
  const int k = coord.layer - first_layer;
  if (k < 0 || k >= static_cast<int>(layers.size())) return nullptr;
  for (const Cell& c : layers[k])
    if (c.coord == coord) return &c;
  return nullptr;
}

Cell* Fabric::find(CellCoord coord) {
  return const_cast<Cell*>(static_cast<const Fabric*>(this)->find(coord));
}

std::size_t Fabric::cell_count() const {
  std::size_t n = 0;
  for (const auto& layer : layers)
    for (const Cell& c : layer) n += c.empty ? 0 : 1;
  return n;
}

std::vector<CellCoord> Fabric::cell_coords() const {
  std::vector<CellCoord> out;
  for (const auto& layer : layers)
    for (const Cell& c : layer)
      if (!c.empty) out.push_back(c.coord);
  return out;
}

ArchParams Fabric::arch() const {
  ArchParams a{alpha, {}};
  for (const auto& layer : layers)
    for (const Cell& c : layer)
      if (!c.empty) a.beta.emplace(c.coord, c.beta);
  return a;
}

ParameterList Fabric::parameters() const {
  ParameterList out;
  out.push_back({name + "/alpha", alpha, ParamKind::arch});
  if (stem) stem->collect(out, name);
  for (const auto& layer : layers)
    for (const Cell& c : layer) c.collect(out, name);
  return out;
}

std::vector<Var> Fabric::weight_vars() const {
  std::vector<Var> out;
  for (const auto& p : parameters())
    if (p.kind == ParamKind::weight) out.push_back(p.var);
  return out;
}

std::vector<Var> Fabric::arch_vars() const {
  std::vector<Var> out;
  for (const auto& p : parameters())
    if (p.kind == ParamKind::arch) out.push_back(p.var);
  return out;
}

std::vector<std::shared_ptr<BatchNormState>> Fabric::norm_states() const {
  std::vector<std::shared_ptr<BatchNormState>> out;
  if (stem) {
    out.push_back(stem->first.norm.state);
    out.push_back(stem->second.norm.state);
  }
  for (const auto& layer : layers)
    for (const Cell& c : layer) {
      if (c.empty) continue;
      if (c.down) out.push_back(c.down->norm.state);
      for (const auto& edge : c.edges)
        for (const CandidateOp& op : edge) {
          if (op.removed) continue;
          if (const auto* s = std::get_if<SepConv3x3>(&op.impl)) out.push_back(s->norm.state);
          if (const auto* d = std::get_if<DilConv3x3>(&op.impl)) out.push_back(d->norm.state);
        }
    }
  return out;
}

void Fabric::set_training(bool training) const {
  for (const auto& state : norm_states()) state->training = training;
}

namespace {

Var make_alpha(const FabricSpec& spec, Rng& rng) {
  Tensor a(Shape{spec.edge_count(), spec.op_count(), 1, 1});
  rng.fill_normal(a, 1e-3);
  return Var::leaf(std::move(a));
}

}  // namespace

Fabric build_backbone(const FabricSpec& spec, int reserved_layers, int image_channels, Rng& rng,
                      std::string name) {
  spec.validate();
  if (reserved_layers < 0 || reserved_layers > spec.layers)
    throw ConfigError("backbone reserves " + std::to_string(reserved_layers) + " of " +
                      std::to_string(spec.layers) + " layers");
  if (image_channels < 1) throw ConfigError("image needs at least one channel");

  Fabric f;
  f.name = std::move(name);
  f.role = FabricRole::backbone;
  f.spec = spec;
  f.first_layer = 1;
  f.last_layer = reserved_layers;
  f.stem.emplace(image_channels, spec.channel_factor, rng);
  f.input_scales = {0};
  f.alpha = make_alpha(spec, rng);

  std::vector<int> available{0};
  for (int l = 1; l <= reserved_layers; ++l) {
    std::vector<Cell> layer;
    std::vector<int> scales;
    for (int s = 0; s < std::min(l, spec.num_scales); ++s) {
      layer.emplace_back(CellCoord{s, l}, spec, available, spec.channels_at(s), false, rng);
      scales.push_back(s);
    }
    f.layers.push_back(std::move(layer));
    available = std::move(scales);
  }
  f.output_scales = available;
  f.output_channels = spec.channels_at(0);
  return f;
}

Fabric build_subnetwork(const FabricSpec& base, int reserved_layers, int out_channels, Rng& rng,
                        std::string name, bool trim) {
  FabricSpec spec = base;
  std::erase_if(spec.ops, [](OpKind k) { return k == OpKind::avg_pool3x3 || k == OpKind::max_pool3x3; });
  spec.validate();
  if (reserved_layers < 1 || reserved_layers > spec.layers)
    throw ConfigError("subnetwork reserves " + std::to_string(reserved_layers) + " of " +
                      std::to_string(spec.layers) + " layers");
  if (out_channels < 1) throw ConfigError("subnetwork output needs at least one channel");

  Fabric f;
  f.name = std::move(name);
  f.role = FabricRole::subnetwork;
  f.spec = spec;
  f.first_layer = spec.layers - reserved_layers + 1;
  f.last_layer = spec.layers;
  f.alpha = make_alpha(spec, rng);
  for (int s = 0; s < spec.num_scales; ++s) f.input_scales.push_back(s);
  f.output_scales = {0};
  f.output_channels = out_channels;

  const CellCoord output{0, spec.layers};
  std::vector<int> available = f.input_scales;
  for (int l = f.first_layer; l <= f.last_layer; ++l) {
    std::vector<Cell> layer;
    for (int s = 0; s < spec.num_scales; ++s) {
      const bool is_output = CellCoord{s, l} == output;
      layer.emplace_back(CellCoord{s, l}, spec, available, is_output ? out_channels : spec.channels_at(s),
                         is_output, rng);
    }
    f.layers.push_back(std::move(layer));
  }

  if (trim) {
    // Keep only cells with a directed path to the output cell.
    std::set<int> needed{0};
    for (int k = static_cast<int>(f.layers.size()) - 1; k >= 0; --k) {
      std::set<int> sources;
      auto& layer = f.layers[k];
      std::erase_if(layer, [&](const Cell& c) { return !needed.count(c.coord.scale); });
      for (const Cell& c : layer)
        for (const InputSlot& slot : c.slots) sources.insert(slot.source_scale);
      needed = std::move(sources);
    }
  }
  return f;
}

void init_arch_normal(const Fabric& fabric, real stddev, Rng& rng) {
  for (Var v : fabric.arch().vars()) rng.fill_normal(v.mutable_value(), stddev);
}

}  // namespace posefabric::fabric

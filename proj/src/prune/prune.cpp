#include "posefabric/prune/prune.hpp"

#include <algorithm>
#include <cmath>
#include <json.hpp>
#include <limits>
#include <map>
#include <set>

#include "posefabric/core/errors.hpp"
#include "posefabric/fabric/accounting.hpp"
#include "posefabric/fabric/export.hpp"

namespace posefabric::prune {

using fabric::Cell;
using fabric::OpKind;

namespace {

constexpr const char* kSlotNames[3] = {"2s", "s", "s/2"};

std::vector<real> softmax_of(std::span<const real> v) {
  real top = -std::numeric_limits<real>::infinity();
  for (real x : v) top = std::max(top, x);
  std::vector<real> out;
  real total = 0;
  for (real x : v) {
    out.push_back(std::exp(x - top));
    total += out.back();
  }
  for (real& x : out) x /= total;
  return out;
}

bool is_output(const Fabric& f, CellCoord c) {
  if (c.layer != f.last_layer) return false;
  return std::find(f.output_scales.begin(), f.output_scales.end(), c.scale) != f.output_scales.end();
}

}  // namespace

std::string Candidate::str(const Fabric& f) const {
  const std::string cell_name = fabric::cell_id(cell);
  switch (kind) {
    case Kind::cell:
      return cell_name;
    case Kind::input:
      return cell_name + "/input(" + kSlotNames[slot] + ")";
    case Kind::op: {
      const auto [from, to] = fabric::edge_endpoints(edge);
      return cell_name + "/edge(" + std::to_string(from) + "->" + std::to_string(to) + ")/" +
             std::string(fabric::op_name(f.spec.ops[op]));
    }
  }
  return cell_name;
}

std::vector<Candidate> find_prunable(const Fabric& f, real tol, Threshold mode) {
  if (!(tol >= 0)) throw ConfigError("prune tolerance must be >= 0");
  const int op_count = f.spec.op_count();
  const auto quantity = [mode](std::span<const real> raw) {
    if (mode == Threshold::contribution) return softmax_of(raw);
    std::vector<real> out;
    for (real x : raw) out.push_back(std::abs(x));
    return out;
  };

  std::vector<std::vector<real>> alpha_q;
  for (int e = 0; e < f.spec.edge_count(); ++e)
    alpha_q.push_back(quantity(f.alpha.value().data().subspan(static_cast<std::size_t>(e) * op_count, op_count)));

  std::map<CellCoord, std::vector<real>> beta_q;
  std::set<std::pair<CellCoord, int>> dead_slots;
  for (const auto& layer : f.layers)
    for (const Cell& c : layer) {
      if (c.empty) continue;
      beta_q[c.coord] = quantity(c.beta.value().data());
      for (int k = 0; k < 3; ++k)
        if (!c.slots[k].removed && beta_q[c.coord][k] <= tol) dead_slots.insert({c.coord, k});
    }

  // Cells whose every reader is a prunable input or a dead cell, last layer first.
  std::set<CellCoord> dead_cells;
  for (int k = static_cast<int>(f.layers.size()) - 1; k >= 0; --k)
    for (const Cell& c : f.layers[k]) {
      if (c.empty || is_output(f, c.coord)) continue;
      bool read = false;
      if (k + 1 < static_cast<int>(f.layers.size()))
        for (const Cell& next : f.layers[k + 1]) {
          if (next.empty || dead_cells.count(next.coord)) continue;
          for (int s = 0; s < 3; ++s)
            if (!next.slots[s].removed && next.slots[s].source_scale == c.coord.scale &&
                !dead_slots.count({next.coord, s}))
              read = true;
        }
      if (!read) dead_cells.insert(c.coord);
    }

  std::vector<Candidate> out;
  for (const auto& layer : f.layers)
    for (const Cell& c : layer)
      if (dead_cells.count(c.coord)) out.push_back({Candidate::Kind::cell, c.coord, -1, -1, -1, 0});
  for (const auto& layer : f.layers)
    for (const Cell& c : layer) {
      if (c.empty || dead_cells.count(c.coord)) continue;
      for (int k = 0; k < 3; ++k)
        if (dead_slots.count({c.coord, k}))
          out.push_back({Candidate::Kind::input, c.coord, -1, -1, k, beta_q[c.coord][k]});
    }
  for (const auto& layer : f.layers)
    for (const Cell& c : layer) {
      if (c.empty || dead_cells.count(c.coord)) continue;
      for (std::size_t e = 0; e < c.edges.size(); ++e)
        for (int o = 0; o < op_count; ++o) {
          const auto& op = c.edges[e][o];
          if (op.removed || op.kind == OpKind::zero) continue;
          if (alpha_q[e][o] <= tol)
            out.push_back({Candidate::Kind::op, c.coord, static_cast<int>(e), o, -1, alpha_q[e][o]});
        }
    }
  return out;
}

namespace {

void check_connected(const Fabric& f) {
  std::set<CellCoord> reached;
  for (const auto& layer : f.layers)
    for (const Cell& c : layer) {
      if (c.empty) continue;
      for (const auto& slot : c.slots) {
        if (slot.removed) continue;
        const CellCoord src{slot.source_scale, c.coord.layer - 1};
        if (src.layer < f.first_layer || reached.count(src)) reached.insert(c.coord);
      }
    }
  for (int s : f.output_scales) {
    const CellCoord out{s, f.last_layer};
    if (f.last_layer >= f.first_layer && !reached.count(out))
      throw PruneRefused("pruning " + f.name + " would disconnect output " + fabric::cell_id(out) +
                         " from the fabric input; refusing");
  }
}

}  // namespace

PruneResult prune(const Fabric& fabric, real tol, int image_h, int image_w) {
  PruneResult r{fabric, {}};
  Fabric& p = r.pruned;
  PruneReport& rep = r.report;
  rep.fabric = fabric.name;
  rep.tolerance = tol;
  rep.params_before = fabric::count_params(fabric);
  rep.flops_before = fabric::count_flops(fabric, image_h, image_w);

  for (const Candidate& c : find_prunable(fabric, tol, Threshold::contribution)) {
    Cell* cell = p.find(c.cell);
    switch (c.kind) {
      case Candidate::Kind::cell:
        cell->empty = true;
        rep.removed_cells.push_back(c.str(fabric));
        break;
      case Candidate::Kind::input:
        cell->slots[c.slot].removed = true;
        rep.removed_inputs.push_back(c.str(fabric));
        break;
      case Candidate::Kind::op:
        cell->edges[c.edge][c.op].removed = true;
        rep.removed_ops.push_back(c.str(fabric));
        break;
    }
  }
  check_connected(p);

  rep.params_after = fabric::count_params(p);
  rep.flops_after = fabric::count_flops(p, image_h, image_w);
  if (!rep.removed_anything()) {
    rep.note = "no architecture weight at or below the tolerance; nothing removed";
  } else {
    const int channels = fabric.stem ? fabric.stem->first.kernel.shape().c : 1;
    rep.max_deviation = equivalence_check(fabric, p, 10, std::numeric_limits<real>::infinity(),
                                          ProbeSpec{image_h, image_w, channels, 2})
                            .max_deviation;
  }
  return r;
}

std::string PruneReport::to_json() const {
  const nlohmann::json doc = {{"fabric", fabric},
                              {"tolerance", tolerance},
                              {"removed_cells", removed_cells},
                              {"removed_inputs", removed_inputs},
                              {"removed_ops", removed_ops},
                              {"params_before", params_before},
                              {"params_after", params_after},
                              {"flops_before", flops_before},
                              {"flops_after", flops_after},
                              {"max_deviation", max_deviation},
                              {"note", note}};
  return doc.dump(2) + "\n";
}

std::vector<Var> make_probe(const Fabric& f, const ProbeSpec& probe, std::uint64_t seed) {
  Rng rng = Rng::derive(seed, 0x9b0be);
  std::vector<Var> in;
  if (f.role == fabric::FabricRole::backbone) {
    Tensor t(Shape{probe.batch, probe.image_channels, probe.image_h, probe.image_w});
    rng.fill_uniform(t, -1, 1);
    in.push_back(Var::constant(std::move(t)));
  } else {
    for (int s : f.input_scales) {
      Tensor t(Shape{probe.batch, f.spec.channels_at(s), fabric::scale_extent(probe.image_h, s),
                     fabric::scale_extent(probe.image_w, s)});
      rng.fill_uniform(t, -1, 1);
      in.push_back(Var::constant(std::move(t)));
    }
  }
  return in;
}

Equivalence equivalence_check(const Fabric& original, const Fabric& pruned, int probes, real bound,
                              const ProbeSpec& probe, std::uint64_t seed) {
  const auto states = original.norm_states();
  std::vector<bool> saved;
  for (const auto& s : states) {
    saved.push_back(s->training);
    s->training = false;
  }
  Equivalence eq;
  try {
    NoGradGuard no_grad;
    for (int i = 0; i < probes; ++i) {
      const std::uint64_t probe_seed = seed + static_cast<std::uint64_t>(i);
      const auto in = make_probe(original, probe, probe_seed);
      const auto a = original.forward(in);
      const auto b = pruned.forward(in);
      for (std::size_t k = 0; k < a.size(); ++k) {
        const real d = max_abs_diff(a[k].value(), b[k].value());
        if (d > eq.max_deviation) {
          eq.max_deviation = d;
          eq.worst_seed = probe_seed;
        }
      }
    }
  } catch (...) {
    for (std::size_t i = 0; i < states.size(); ++i) states[i]->training = saved[i];
    throw;
  }
  for (std::size_t i = 0; i < states.size(); ++i) states[i]->training = saved[i];
  if (eq.max_deviation > bound)
    throw NumericalError("pruned forward deviates by " + std::to_string(eq.max_deviation) + " (bound " +
                         std::to_string(bound) + ") on probe seed " + std::to_string(eq.worst_seed));
  return eq;
}

}  // namespace posefabric::prune

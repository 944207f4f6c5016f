#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#include "posefabric/fabric/fabric.hpp"

namespace posefabric::prune {

using fabric::CellCoord;
using fabric::Fabric;

/// Thrown when the requested removals would cut every path from the
/// fabric's sources to its output cell.
class PruneRefused : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

enum class Threshold {
  // softmax weight of the entry <= tol; what prune() acts on.
  contribution,
  // |raw alpha or beta value| <= tol; listed for inspection only.
  raw,
};

struct Candidate {
  enum class Kind { op, input, cell };
  Kind kind = Kind::op;
  CellCoord cell;
  int edge = -1;   // op
  int op = -1;     // op: index into the fabric's op list
  int slot = -1;   // input: 0 (2s), 1 (s), 2 (s/2)
  real value = 0;  // the thresholded quantity

  std::string str(const Fabric& f) const;
};

/// Entries at or below `tol` (a value of 1e-30 is not listed at tol = 0).
/// Zero ops never appear: they are not materialised. Already-removed
/// structure is skipped, so the list is empty after a prune.
std::vector<Candidate> find_prunable(const Fabric& fabric, real tol, Threshold mode = Threshold::contribution);

struct PruneReport {
  std::string fabric;
  real tolerance = 0;
  std::vector<std::string> removed_cells;
  std::vector<std::string> removed_ops;
  std::vector<std::string> removed_inputs;
  std::uint64_t params_before = 0;
  std::uint64_t params_after = 0;
  std::uint64_t flops_before = 0;
  std::uint64_t flops_after = 0;
  real max_deviation = 0;
  std::string note;

  bool removed_anything() const {
    return !removed_cells.empty() || !removed_ops.empty() || !removed_inputs.empty();
  }
  std::string to_json() const;
};

struct PruneResult {
  Fabric pruned;
  PruneReport report;
};

/// Copy of `fabric` (sharing all parameter storage) with every contribution
/// candidate removed and cells without live consumers cascaded away.
/// Surviving terms keep their original softmax weights. FLOPs are counted
/// for an image_h x image_w input.
PruneResult prune(const Fabric& fabric, real tol, int image_h, int image_w);

struct ProbeSpec {
  int image_h = 64;
  int image_w = 64;
  int image_channels = 1;
  int batch = 2;
};

struct Equivalence {
  real max_deviation = 0;
  std::uint64_t worst_seed = 0;
};

/// Max |original - pruned| over `probes` random inputs (eval-mode norms,
/// restored afterwards). Throws NumericalError naming the probe seed when
/// the deviation exceeds `bound`.
Equivalence equivalence_check(const Fabric& original, const Fabric& pruned, int probes, real bound,
                              const ProbeSpec& probe, std::uint64_t seed = 0);

/// Random input matching the fabric's role: an image batch for backbones,
/// a pyramid for subnetworks.
std::vector<Var> make_probe(const Fabric& fabric, const ProbeSpec& probe, std::uint64_t seed);

}  // namespace posefabric::prune

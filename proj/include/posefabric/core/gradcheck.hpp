#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "posefabric/core/autograd.hpp"

namespace posefabric {

struct GradCheckOptions {
  real epsilon = 1e-5;
  real tolerance = 1e-4;
  // Denominator floor for the relative error |a - n| / max(|a| + |n|, floor).
  real floor = 1e-6;
  // Elements probed per input; 0 probes every element.
  std::size_t max_probes_per_input = 0;
  std::uint64_t seed = 1;
};

struct GradCheckEntry {
  std::string name;
  std::size_t probed = 0;
  // Elements whose +/- epsilon stencil changed a ReLU sign or a max-pool winner.
  std::size_t skipped_nonsmooth = 0;
  real max_rel_error = 0;
  real max_abs_error = 0;
};

struct GradCheckReport {
  std::vector<GradCheckEntry> entries;
  real max_rel_error() const;
  bool passed(real tolerance) const { return max_rel_error() <= tolerance; }
  std::string str() const;
};

struct NamedInput {
  std::string name;
  Var var;
};

/// Compares reverse-mode gradients of the scalar `f` against central
/// differences with respect to every listed input. `f` is evaluated once on
/// a tape and twice per probed element without one.
GradCheckReport grad_check(const std::function<Var()>& f, const std::vector<NamedInput>& inputs,
                           const GradCheckOptions& options = {});

real relative_error(real analytic, real numeric, real floor);

}  // namespace posefabric

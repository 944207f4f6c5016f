#include "posefabric/core/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>
#include <sstream>

#include "posefabric/core/errors.hpp"

namespace posefabric {

real relative_error(real analytic, real numeric, real floor) {
  const real denom = std::max(std::abs(analytic) + std::abs(numeric), floor);
  return std::abs(analytic - numeric) / denom;
}

real GradCheckReport::max_rel_error() const {
  real m = 0;
  for (const auto& e : entries) m = std::max(m, e.max_rel_error);
  return m;
}

std::string GradCheckReport::str() const {
  std::ostringstream os;
  for (const auto& e : entries) {
    os << e.name << ": probed " << e.probed << ", skipped " << e.skipped_nonsmooth
       << ", max rel err " << e.max_rel_error << ", max abs err " << e.max_abs_error << "\n";
  }
  return os.str();
}

namespace {

struct Evaluation {
  real value;
  std::uint64_t signature;
};

Evaluation evaluate(const std::function<Var()>& f) {
  NoGradGuard no_grad;
  branch_signature::reset();
  const Var out = f();
  if (out.value().size() != 1) throw UsageError("grad_check: f must return a scalar");
  return {out.value()[0], branch_signature::value()};
}

}  // namespace

GradCheckReport grad_check(const std::function<Var()>& f, const std::vector<NamedInput>& inputs,
                           const GradCheckOptions& options) {
  const bool was_enabled = branch_signature::enabled();
  branch_signature::set_enabled(true);

  for (const auto& in : inputs) {
    if (!in.var.requires_grad()) throw UsageError("grad_check: input '" + in.name + "' has no grad");
    Var v = in.var;
    v.zero_grad();
  }
  std::uint64_t base_signature = 0;
  {
    Tape tape;
    branch_signature::reset();
    const Var out = f();
    base_signature = branch_signature::value();
    tape.backward(out);
  }

  std::mt19937_64 rng(options.seed);
  GradCheckReport report;
  for (const auto& in : inputs) {
    Var v = in.var;
    const Tensor analytic = v.has_grad() ? v.grad() : Tensor(v.shape());
    const std::size_t count = v.value().size();
    std::vector<std::size_t> order(count);
    std::iota(order.begin(), order.end(), std::size_t{0});
    if (options.max_probes_per_input > 0 && count > options.max_probes_per_input) {
      std::shuffle(order.begin(), order.end(), rng);
      order.resize(options.max_probes_per_input);
      std::sort(order.begin(), order.end());
    }

    GradCheckEntry entry{in.name};
    for (std::size_t idx : order) {
      real& slot = v.mutable_value()[idx];
      const real saved = slot;
      slot = saved + options.epsilon;
      const Evaluation plus = evaluate(f);
      slot = saved - options.epsilon;
      const Evaluation minus = evaluate(f);
      slot = saved;
      if (plus.signature != base_signature || minus.signature != base_signature) {
        ++entry.skipped_nonsmooth;
        continue;
      }
      const real numeric = (plus.value - minus.value) / (2 * options.epsilon);
      const real a = analytic[idx];
      ++entry.probed;
      entry.max_abs_error = std::max(entry.max_abs_error, std::abs(a - numeric));
      entry.max_rel_error = std::max(entry.max_rel_error, relative_error(a, numeric, options.floor));
    }
    report.entries.push_back(entry);
  }
  branch_signature::set_enabled(was_enabled);
  return report;
}

}  // namespace posefabric

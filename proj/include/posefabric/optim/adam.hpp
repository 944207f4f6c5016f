#pragma once

#include <cstdint>
#include <vector>

#include "posefabric/core/autograd.hpp"

namespace posefabric::optim {

struct AdamOptions {
  real beta1 = 0.9;
  real beta2 = 0.999;
  real eps = 1e-8;
  // Coupled L2: the gradient gets weight_decay * param added before the moments.
  real weight_decay = 0.0;
};

struct AdamState {
  std::int64_t step = 0;
  std::vector<Tensor> m;
  std::vector<Tensor> v;
};

/// Bias-corrected Adam over a fixed parameter list. Parameters without a
/// gradient are treated as having a zero gradient.
class Adam {
 public:
  Adam() = default;
  Adam(std::vector<Var> params, AdamOptions options = {});

  /// Throws UsageError when lr <= 0.
  void step(real lr);
  void zero_grad();

  const std::vector<Var>& params() const { return params_; }
  const AdamOptions& options() const { return options_; }
  const AdamState& state() const { return state_; }
  /// Restores moments saved from an optimizer over the same parameter shapes.
  void load_state(AdamState state);

 private:
  std::vector<Var> params_;
  AdamOptions options_;
  AdamState state_;
};

/// Stops gradient tracking on the given leaves.
void freeze(const std::vector<Var>& params);

}  // namespace posefabric::optim

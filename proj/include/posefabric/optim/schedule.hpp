#pragma once

#include <vector>

#include "posefabric/core/tensor.hpp"

namespace posefabric::optim {

enum class ParamKind { weight, arch };

/// Step decay: base * factor^(milestones passed). Architecture parameters
/// start from arch_base_lr and skip the decay when arch_decay is false.
struct LrSchedule {
  real base_lr = 1e-3;
  real arch_base_lr = 1e-3;
  std::vector<int> milestones{27, 36, 45};
  real factor = 0.25;
  bool arch_decay = true;

  void validate() const;
  real lr_at(int epoch, ParamKind kind) const;
};

/// Milestones of a reference schedule rescaled to `epochs`, rounded.
std::vector<int> scale_milestones(const std::vector<int>& reference, int reference_epochs, int epochs);

}  // namespace posefabric::optim

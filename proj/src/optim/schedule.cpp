#include "posefabric/optim/schedule.hpp"

#include <cmath>

#include "posefabric/core/errors.hpp"

namespace posefabric::optim {

void LrSchedule::validate() const {
  if (!(base_lr > 0) || !(arch_base_lr > 0)) throw ConfigError("learning rates must be > 0");
  if (!(factor > 0 && factor < 1)) throw ConfigError("lr decay factor must lie in (0, 1)");
  for (std::size_t i = 1; i < milestones.size(); ++i)
    if (milestones[i] <= milestones[i - 1]) throw ConfigError("lr milestones must be strictly increasing");
}

real LrSchedule::lr_at(int epoch, ParamKind kind) const {
  if (epoch < 0) throw UsageError("epoch must be >= 0");
  const real base = kind == ParamKind::weight ? base_lr : arch_base_lr;
  if (kind == ParamKind::arch && !arch_decay) return base;
  int passed = 0;
  for (int m : milestones) passed += epoch >= m ? 1 : 0;
  return base * std::pow(factor, passed);
}

std::vector<int> scale_milestones(const std::vector<int>& reference, int reference_epochs, int epochs) {
  std::vector<int> out;
  for (int m : reference) out.push_back(static_cast<int>(std::lround(static_cast<double>(m) * epochs / reference_epochs)));
  return out;
}

}  // namespace posefabric::optim

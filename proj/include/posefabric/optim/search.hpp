#pragma once

#include <cstdint>
#include <functional>
#include <string_view>
#include <utility>
#include <vector>

#include "posefabric/optim/adam.hpp"
#include "posefabric/optim/schedule.hpp"

namespace posefabric::optim {

enum class Strategy { random_sampled, synchronous, first_order_bilevel };

std::string_view strategy_name(Strategy s);
Strategy parse_strategy(std::string_view text);

/// Draws every architecture entry from N(0, 1) with `seed` and freezes them.
void random_init_arch(const std::vector<Var>& arch, std::uint64_t seed);

struct SearchOptions {
  Strategy strategy = Strategy::synchronous;
  // Bilevel architecture optimizer.
  real arch_weight_decay = 1e-3;
};

/// Scalar loss evaluated on the active tape.
using LossFn = std::function<Var()>;

/// Owns the optimizers for one model and applies one update per call.
/// Weights and architecture parameters use separate Adam instances; Adam is
/// elementwise, so this equals one Adam over the concatenation when the
/// learning rates agree.
class Searcher {
 public:
  Searcher(std::vector<Var> weights, std::vector<Var> arch, SearchOptions options);

  Strategy strategy() const { return options_.strategy; }

  /// One forward, one backward, one joint update of w (and of alpha/beta
  /// unless they are frozen). Valid for synchronous and random_sampled.
  real synchronous_step(const LossFn& train_loss, real lr_w, real lr_arch);

  /// Arch update from the validation loss with weights fixed, then weight
  /// update from the training loss with the architecture fixed. Throws
  /// ConfigError when no validation loss is supplied.
  std::pair<real, real> bilevel_step(const LossFn& train_loss, const LossFn& val_loss, real lr_w, real lr_arch);

  Adam& weight_optimizer() { return weights_; }
  Adam& arch_optimizer() { return arch_; }

 private:
  real backward(const LossFn& loss);
  void zero_all();

  SearchOptions options_;
  Adam weights_;
  Adam arch_;
};

}  // namespace posefabric::optim

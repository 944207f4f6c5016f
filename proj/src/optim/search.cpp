#include "posefabric/optim/search.hpp"

#include <cmath>

#include "posefabric/core/errors.hpp"
#include "posefabric/core/rng.hpp"

namespace posefabric::optim {

std::string_view strategy_name(Strategy s) {
  switch (s) {
    case Strategy::random_sampled:
      return "random_sampled";
    case Strategy::synchronous:
      return "synchronous";
    case Strategy::first_order_bilevel:
      return "first_order_bilevel";
  }
  return "?";
}

Strategy parse_strategy(std::string_view text) {
  for (Strategy s : {Strategy::random_sampled, Strategy::synchronous, Strategy::first_order_bilevel})
    if (strategy_name(s) == text) return s;
  if (text == "bilevel") return Strategy::first_order_bilevel;
  throw ConfigError("unknown search strategy '" + std::string(text) + "'");
}

void random_init_arch(const std::vector<Var>& arch, std::uint64_t seed) {
  Rng rng(seed);
  for (Var v : arch) rng.fill_normal(v.mutable_value(), 1.0);
  freeze(arch);
}

Searcher::Searcher(std::vector<Var> weights, std::vector<Var> arch, SearchOptions options)
    : options_(options),
      weights_(std::move(weights)),
      arch_(std::move(arch), AdamOptions{.weight_decay = options.strategy == Strategy::first_order_bilevel
                                                             ? options.arch_weight_decay
                                                             : 0.0}) {
  if (options_.strategy == Strategy::random_sampled) freeze(arch_.params());
}

void Searcher::zero_all() {
  weights_.zero_grad();
  arch_.zero_grad();
}

real Searcher::backward(const LossFn& loss) {
  zero_all();
  Tape tape;
  const Var l = loss();
  const real value = l.value()[0];
  if (!std::isfinite(value)) throw NumericalError("non-finite loss " + std::to_string(value));
  tape.backward(l);
  return value;
}

real Searcher::synchronous_step(const LossFn& train_loss, real lr_w, real lr_arch) {
  if (options_.strategy == Strategy::first_order_bilevel)
    throw UsageError("synchronous_step called on a bilevel searcher");
  const real loss = backward(train_loss);
  weights_.step(lr_w);
  if (options_.strategy == Strategy::synchronous) arch_.step(lr_arch);
  return loss;
}

std::pair<real, real> Searcher::bilevel_step(const LossFn& train_loss, const LossFn& val_loss, real lr_w,
                                             real lr_arch) {
  if (options_.strategy != Strategy::first_order_bilevel)
    throw UsageError("bilevel_step called on a " + std::string(strategy_name(options_.strategy)) + " searcher");
  if (!val_loss) throw ConfigError("bilevel search needs a validation split");
  const real val = backward(val_loss);
  arch_.step(lr_arch);
  const real train = backward(train_loss);
  weights_.step(lr_w);
  zero_all();
  return {train, val};
}

}  // namespace posefabric::optim

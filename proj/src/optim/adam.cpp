#include "posefabric/optim/adam.hpp"

#include <cmath>

#include "posefabric/core/errors.hpp"

namespace posefabric::optim {

Adam::Adam(std::vector<Var> params, AdamOptions options) : params_(std::move(params)), options_(options) {
  for (const Var& p : params_) {
    state_.m.emplace_back(p.shape());
    state_.v.emplace_back(p.shape());
  }
}

void Adam::step(real lr) {
  if (!(lr > 0.0)) throw UsageError("Adam learning rate must be > 0, got " + std::to_string(lr));
  ++state_.step;
  const real b1 = options_.beta1, b2 = options_.beta2;
  const real c1 = 1.0 - std::pow(b1, static_cast<real>(state_.step));
  const real c2 = 1.0 - std::pow(b2, static_cast<real>(state_.step));
  for (std::size_t i = 0; i < params_.size(); ++i) {
    Var& p = params_[i];
    if (!p.requires_grad()) continue;
    Tensor& value = p.mutable_value();
    const bool has = p.has_grad();
    real* m = state_.m[i].ptr();
    real* v = state_.v[i].ptr();
    for (std::size_t k = 0; k < value.size(); ++k) {
      const real g = (has ? p.grad()[k] : 0.0) + options_.weight_decay * value[k];
      m[k] = b1 * m[k] + (1.0 - b1) * g;
      v[k] = b2 * v[k] + (1.0 - b2) * g * g;
      value[k] -= lr * (m[k] / c1) / (std::sqrt(v[k] / c2) + options_.eps);
    }
  }
}

void Adam::zero_grad() {
  for (Var& p : params_) p.zero_grad();
}

void Adam::load_state(AdamState state) {
  if (state.m.size() != params_.size() || state.v.size() != params_.size())
    throw ConfigError("optimizer state covers " + std::to_string(state.m.size()) + " tensors, expected " +
                      std::to_string(params_.size()));
  for (std::size_t i = 0; i < params_.size(); ++i)
    if (state.m[i].shape() != params_[i].shape() || state.v[i].shape() != params_[i].shape())
      throw ConfigError("optimizer state shape mismatch at tensor " + std::to_string(i));
  state_ = std::move(state);
}

void freeze(const std::vector<Var>& params) {
  for (const Var& p : params) p.node()->requires_grad = false;
}

}  // namespace posefabric::optim

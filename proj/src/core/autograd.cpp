#include "posefabric/core/autograd.hpp"

#include "posefabric/core/errors.hpp"
#include "posefabric/kernels/kernels.hpp"

namespace posefabric {

namespace {
thread_local Tape* g_active_tape = nullptr;
thread_local std::uint64_t g_signature = 0;
thread_local bool g_signature_on = false;
}  // namespace

Tensor& Node::ensure_grad() {
  if (grad.empty()) grad = Tensor(value.shape());
  return grad;
}

Var Var::constant(Tensor value) {
  auto node = std::make_shared<Node>();
  node->value = std::move(value);
  return Var(std::move(node));
}

Var Var::leaf(Tensor value, bool requires_grad) {
  auto node = std::make_shared<Node>();
  node->value = std::move(value);
  node->requires_grad = requires_grad;
  return Var(std::move(node));
}

void Var::zero_grad() {
  if (node_ && !node_->grad.empty()) node_->grad.zero();
}

Tape::Tape() : previous_(g_active_tape) { g_active_tape = this; }

Tape::~Tape() { g_active_tape = previous_; }

Tape* Tape::active() { return g_active_tape; }

void Tape::backward(const Var& loss, real seed) {
  if (!loss) throw UsageError("backward on an empty value");
  if (loss.value().size() != 1)
    throw UsageError("backward requires a scalar loss, got shape " + loss.shape().str());
  Node& root = *loss.node();
  if (!root.requires_grad) return;
  root.ensure_grad()[0] += seed;

  for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it) {
    Node& node = **it;
    if (node.grad.empty() || !node.backward) continue;
    node.backward(node);
  }
  for (auto& node : nodes_) {
    if (node->requires_grad) node->ensure_grad();
    for (auto& in : node->inputs)
      if (in->requires_grad) in->ensure_grad();
  }
}

NoGradGuard::NoGradGuard() : saved_(g_active_tape) { g_active_tape = nullptr; }

NoGradGuard::~NoGradGuard() { g_active_tape = saved_; }

Var make_result(Tensor value, std::span<const Var> inputs, BackwardFn backward) {
  auto node = std::make_shared<Node>();
  node->value = std::move(value);
  Tape* tape = g_active_tape;
  if (tape != nullptr) {
    bool any = false;
    for (const Var& in : inputs) any = any || in.requires_grad();
    if (any) {
      node->requires_grad = true;
      node->inputs.reserve(inputs.size());
      for (const Var& in : inputs) node->inputs.push_back(in.ptr());
      node->backward = std::move(backward);
      tape->record(node);
    }
  }
  return Var(std::move(node));
}

Var make_result(Tensor value, std::initializer_list<Var> inputs, BackwardFn backward) {
  return make_result(std::move(value), std::span<const Var>(inputs.begin(), inputs.size()),
                     std::move(backward));
}

void accumulate_grad(Node& node, std::span<const real> g) {
  if (!node.requires_grad) return;
  Tensor& acc = node.ensure_grad();
  kernels::active().axpy(g.size(), 1.0, g.data(), acc.ptr());
}

namespace branch_signature {
void reset() { g_signature = 0; }
std::uint64_t value() { return g_signature; }
void mix(std::uint64_t bits) {
  // splitmix-style mixing keeps the signature order-sensitive.
  std::uint64_t z = g_signature + 0x9e3779b97f4a7c15ULL + bits;
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  g_signature = z ^ (z >> 31);
}
bool enabled() { return g_signature_on; }
void set_enabled(bool on) { g_signature_on = on; }
}  // namespace branch_signature

}  // namespace posefabric

#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <vector>

#include "posefabric/core/tensor.hpp"

namespace posefabric {

struct Node;
using NodePtr = std::shared_ptr<Node>;

/// One value in the differentiation graph. Leaves (parameters, inputs) have no
/// backward function; results of recorded ops keep their inputs alive and a
/// closure that pushes this node's grad into the inputs' grads.
struct Node {
  Tensor value;
  Tensor grad;
  bool requires_grad = false;
  std::vector<NodePtr> inputs;
  std::function<void(Node&)> backward;

  Tensor& ensure_grad();
};

/// Handle to a graph node. Copies share the node.
class Var {
 public:
  Var() = default;
  explicit Var(NodePtr node) : node_(std::move(node)) {}

  static Var constant(Tensor value);
  static Var leaf(Tensor value, bool requires_grad = true);

  explicit operator bool() const { return node_ != nullptr; }

  const Tensor& value() const { return node_->value; }
  Tensor& mutable_value() { return node_->value; }
  const Tensor& grad() const { return node_->grad; }
  Tensor& mutable_grad() { return node_->ensure_grad(); }
  bool has_grad() const { return !node_->grad.empty(); }
  void zero_grad();

  const Shape& shape() const { return node_->value.shape(); }
  bool requires_grad() const { return node_ && node_->requires_grad; }
  Node* node() const { return node_.get(); }
  const NodePtr& ptr() const { return node_; }

 private:
  NodePtr node_;
};

/// Ordered record of the ops executed while the tape is active on this
/// thread. Creation order is a topological order, so reverse accumulation is
/// a single reverse sweep. Tapes nest; destruction restores the previous one.
class Tape {
 public:
  Tape();
  ~Tape();
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  void record(NodePtr node) { nodes_.push_back(std::move(node)); }

  /// Reverse accumulation from a scalar. `seed` scales the initial gradient.
  void backward(const Var& loss, real seed = 1.0);

  std::size_t size() const { return nodes_.size(); }
  void clear() { nodes_.clear(); }

  static Tape* active();

 private:
  std::vector<NodePtr> nodes_;
  Tape* previous_;
};

/// Suspends recording on this thread for its lifetime.
class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  Tape* saved_;
};

using BackwardFn = std::function<void(Node&)>;

/// Creates the result of an op. The backward closure is kept only when a tape
/// is active and some input requires grad; otherwise the result is a constant.
Var make_result(Tensor value, std::span<const Var> inputs, BackwardFn backward);
Var make_result(Tensor value, std::initializer_list<Var> inputs, BackwardFn backward);

/// Adds `g` into `node`'s gradient accumulator when the node wants one.
void accumulate_grad(Node& node, std::span<const real> g);

/// Signature of the non-smooth branches taken by the current thread's forward
/// passes (ReLU signs, max-pool winners). The gradient checker compares it at
/// perturbed points to skip elements whose stencil straddles a kink.
namespace branch_signature {
void reset();
std::uint64_t value();
void mix(std::uint64_t bits);
bool enabled();
void set_enabled(bool on);
}  // namespace branch_signature

}  // namespace posefabric

#pragma once

#include <span>

#include "posefabric/core/autograd.hpp"
#include "posefabric/parts/schema.hpp"

namespace posefabric::parts {

/// |v|^2 / (1 + |v|^2) for a vector of norm `norm`.
real squash_norm(real norm);
/// Norm whose squash equals c; throws DomainError unless 0 <= c < 1.
real inverse_squash(real c);

/// Squashed vectors of a (N, J*d, h, w) representation: per pixel and
/// keypoint, v * |v| / (1 + |v|^2), with 0 at v = 0.
Tensor squash_vectors(const Tensor& representation, int d);

/// Differentiable norm map (N, J, h, w) of a (N, J*d, h, w) representation.
Var squash_field(const Var& representation, int d);

/// H_k = sum over (p, i) with indicator(k, p, i) of norms[p] channel i.
/// Output is (N, K, h, w).
Var aggregate_scores(std::span<const Var> part_norms, const PartGrouping& grouping);

/// (1 / (N K)) * sum_{n,k} mask[n,k] * sum_{x,y} (pred - target)^2.
/// `mask` is (N, K, 1, 1) with entries in {0, 1}.
Var masked_heatmap_loss(const Var& pred, const Tensor& target, const Tensor& mask);

}  // namespace posefabric::parts

#include "posefabric/parts/squash.hpp"

#include <cmath>

#include "posefabric/core/errors.hpp"
#include "posefabric/kernels/kernels.hpp"

namespace posefabric::parts {

real squash_norm(real norm) {
  const real r = norm * norm;
  return r / (1.0 + r);
}

real inverse_squash(real c) {
  if (!(c >= 0.0 && c < 1.0)) throw DomainError("inverse_squash needs 0 <= c < 1, got " + std::to_string(c));
  return std::sqrt(1.0 / (1.0 - c) - 1.0);
}

namespace {

void check_representation(const Shape& s, int d) {
  if (d < 1) throw ConfigError("vector dimension must be >= 1");
  if (s.c % d != 0)
    throw ConfigError("representation has " + std::to_string(s.c) + " channels, not a multiple of d=" +
                      std::to_string(d));
}

}  // namespace

Tensor squash_vectors(const Tensor& rep, int d) {
  const Shape& s = rep.shape();
  check_representation(s, d);
  const int joints = s.c / d;
  const std::size_t plane = s.plane();
  Tensor out(s);
  std::vector<real> r(plane);
  for (int n = 0; n < s.n; ++n)
    for (int j = 0; j < joints; ++j) {
      kernels::active().sum_squares_planes(plane, d, rep.plane(n, j * d), r.data());
      for (int c = 0; c < d; ++c) {
        const real* v = rep.plane(n, j * d + c);
        real* o = out.plane(n, j * d + c);
        for (std::size_t p = 0; p < plane; ++p)
          o[p] = r[p] > 0 ? v[p] * std::sqrt(r[p]) / (1.0 + r[p]) : 0.0;
      }
    }
  return out;
}

Var squash_field(const Var& rep, int d) {
  const Shape& s = rep.shape();
  check_representation(s, d);
  const int joints = s.c / d;
  const std::size_t plane = s.plane();
  Tensor out(Shape{s.n, joints, s.h, s.w});
  for (int n = 0; n < s.n; ++n)
    for (int j = 0; j < joints; ++j) {
      real* o = out.plane(n, j);
      kernels::active().sum_squares_planes(plane, d, rep.value().plane(n, j * d), o);
      for (std::size_t p = 0; p < plane; ++p) o[p] = o[p] / (1.0 + o[p]);
    }
  return make_result(std::move(out), {rep}, [d, joints](Node& self) {
    Node& xn = *self.inputs[0];
    if (!xn.requires_grad) return;
    const Shape& s = xn.value.shape();
    const std::size_t plane = s.plane();
    Tensor& gx = xn.ensure_grad();
    for (int n = 0; n < s.n; ++n)
      for (int j = 0; j < joints; ++j) {
        const real* f = self.value.plane(n, j);
        const real* g = self.grad.plane(n, j);
        for (int c = 0; c < d; ++c) {
          const real* v = xn.value.plane(n, j * d + c);
          real* gv = gx.plane(n, j * d + c);
          // d/dr r/(1+r) = (1-f)^2, dr/dv = 2v.
          for (std::size_t p = 0; p < plane; ++p) gv[p] += g[p] * 2.0 * v[p] * (1.0 - f[p]) * (1.0 - f[p]);
        }
      }
  });
}

Var aggregate_scores(std::span<const Var> part_norms, const PartGrouping& grouping) {
  if (static_cast<int>(part_norms.size()) != grouping.size())
    throw ConfigError("aggregate_scores: " + std::to_string(part_norms.size()) + " parts for " +
                      std::to_string(grouping.size()) + " groups");
  grouping.validate();
  const Shape& first = part_norms.front().shape();
  for (int p = 0; p < grouping.size(); ++p) {
    const Shape& s = part_norms[p].shape();
    if (s.n != first.n || s.h != first.h || s.w != first.w)
      throw ConfigError("aggregate_scores: parts differ in batch or spatial size");
    if (s.c != static_cast<int>(grouping.groups[p].keypoints.size()))
      throw ConfigError("aggregate_scores: part " + std::to_string(p) + " has " + std::to_string(s.c) +
                        " maps, group lists " + std::to_string(grouping.groups[p].keypoints.size()));
  }
  Tensor out(Shape{first.n, grouping.num_keypoints, first.h, first.w});
  const std::size_t plane = first.plane();
  const auto& kt = kernels::active();
  for (int p = 0; p < grouping.size(); ++p)
    for (int n = 0; n < first.n; ++n)
      for (std::size_t i = 0; i < grouping.groups[p].keypoints.size(); ++i)
        kt.axpy(plane, 1.0, part_norms[p].value().plane(n, static_cast<int>(i)),
                out.plane(n, grouping.groups[p].keypoints[i]));

  std::vector<std::vector<int>> members;
  for (const PartGroup& g : grouping.groups) members.push_back(g.keypoints);
  return make_result(std::move(out), part_norms, [members](Node& self) {
    const auto& kt = kernels::active();
    const std::size_t plane = self.value.shape().plane();
    for (std::size_t p = 0; p < members.size(); ++p) {
      Node& xn = *self.inputs[p];
      if (!xn.requires_grad) continue;
      Tensor& gx = xn.ensure_grad();
      for (int n = 0; n < self.value.shape().n; ++n)
        for (std::size_t i = 0; i < members[p].size(); ++i)
          kt.axpy(plane, 1.0, self.grad.plane(n, members[p][i]), gx.plane(n, static_cast<int>(i)));
    }
  });
}

Var masked_heatmap_loss(const Var& pred, const Tensor& target, const Tensor& mask) {
  const Shape& s = pred.shape();
  if (target.shape() != s) throw ConfigError("loss: prediction " + s.str() + " vs target " + target.shape().str());
  if (mask.shape() != Shape{s.n, s.c, 1, 1}) throw ConfigError("loss: mask must be (N, K, 1, 1)");
  const std::size_t plane = s.plane();
  const real scale = 1.0 / (static_cast<real>(s.n) * s.c);
  real total = 0;
  for (int n = 0; n < s.n; ++n)
    for (int k = 0; k < s.c; ++k) {
      if (mask.at(n, k, 0, 0) == 0.0) continue;
      const real* a = pred.value().plane(n, k);
      const real* b = target.plane(n, k);
      for (std::size_t p = 0; p < plane; ++p) total += (a[p] - b[p]) * (a[p] - b[p]);
    }
  return make_result(Tensor(Shape{1, 1, 1, 1}, total * scale), {pred}, [target, mask, scale](Node& self) {
    Node& xn = *self.inputs[0];
    if (!xn.requires_grad) return;
    const Shape& s = xn.value.shape();
    const std::size_t plane = s.plane();
    const real g = self.grad[0] * 2.0 * scale;
    Tensor& gx = xn.ensure_grad();
    for (int n = 0; n < s.n; ++n)
      for (int k = 0; k < s.c; ++k) {
        if (mask.at(n, k, 0, 0) == 0.0) continue;
        const real* a = xn.value.plane(n, k);
        const real* b = target.plane(n, k);
        real* o = gx.plane(n, k);
        for (std::size_t p = 0; p < plane; ++p) o[p] += g * (a[p] - b[p]);
      }
  });
}

}  // namespace posefabric::parts

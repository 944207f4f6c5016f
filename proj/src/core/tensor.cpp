#include "posefabric/core/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "posefabric/core/errors.hpp"

namespace posefabric {

std::string Shape::str() const {
  return "(" + std::to_string(n) + "," + std::to_string(c) + "," + std::to_string(h) + "," +
         std::to_string(w) + ")";
}

Tensor::Tensor(Shape shape, real fill) : shape_(shape) {
  if (!shape.valid()) throw ConfigError("tensor shape must be positive, got " + shape.str());
  data_.assign(shape.numel(), fill);
}

Tensor::Tensor(Shape shape, std::vector<real> values) : shape_(shape), data_(std::move(values)) {
  if (!shape.valid()) throw ConfigError("tensor shape must be positive, got " + shape.str());
  if (data_.size() != shape.numel())
    throw ConfigError("tensor value count " + std::to_string(data_.size()) +
                      " does not match shape " + shape.str());
}

void Tensor::fill(real v) { std::fill(data_.begin(), data_.end(), v); }

real Tensor::sum() const { return std::accumulate(data_.begin(), data_.end(), real{0}); }

real Tensor::max_abs() const {
  real m = 0;
  for (real v : data_) m = std::max(m, std::abs(v));
  return m;
}

real max_abs_diff(const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape())
    throw ConfigError("shape mismatch " + a.shape().str() + " vs " + b.shape().str());
  real m = 0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

}  // namespace posefabric

#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <vector>

namespace posefabric {

using real = double;

/// Dense NCHW extent. A default-constructed Shape is the "null" shape used
/// by empty tensors; every constructed tensor has all four extents >= 1.
struct Shape {
  int n = 0;
  int c = 0;
  int h = 0;
  int w = 0;

  std::size_t numel() const {
    return static_cast<std::size_t>(n) * static_cast<std::size_t>(c) *
           static_cast<std::size_t>(h) * static_cast<std::size_t>(w);
  }
  std::size_t plane() const { return static_cast<std::size_t>(h) * static_cast<std::size_t>(w); }
  bool valid() const { return n >= 1 && c >= 1 && h >= 1 && w >= 1; }
  bool operator==(const Shape&) const = default;
  std::string str() const;
};

/// Rank-4 real array, row-major in (n, c, h, w).
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(Shape shape, real fill = 0.0);
  Tensor(Shape shape, std::vector<real> values);

  const Shape& shape() const { return shape_; }
  std::size_t size() const { return data_.size(); }
  bool empty() const { return data_.empty(); }

  std::span<real> data() { return data_; }
  std::span<const real> data() const { return data_; }
  real* ptr() { return data_.data(); }
  const real* ptr() const { return data_.data(); }

  real& operator[](std::size_t i) { return data_[i]; }
  real operator[](std::size_t i) const { return data_[i]; }

  real& at(int n, int c, int h, int w) { return data_[offset(n, c, h, w)]; }
  real at(int n, int c, int h, int w) const { return data_[offset(n, c, h, w)]; }

  real* plane(int n, int c) { return data_.data() + offset(n, c, 0, 0); }
  const real* plane(int n, int c) const { return data_.data() + offset(n, c, 0, 0); }

  void fill(real v);
  void zero() { fill(0.0); }
  real sum() const;
  real max_abs() const;

  static Tensor zeros_like(const Tensor& t) { return Tensor(t.shape()); }

 private:
  std::size_t offset(int n, int c, int h, int w) const {
    return ((static_cast<std::size_t>(n) * shape_.c + c) * shape_.h + h) * shape_.w + w;
  }

  Shape shape_{};
  std::vector<real> data_;
};

/// Max |a - b| over identical shapes.
real max_abs_diff(const Tensor& a, const Tensor& b);

}  // namespace posefabric

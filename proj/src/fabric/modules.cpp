#include "posefabric/fabric/modules.hpp"

#include <cmath>

namespace posefabric::fabric {

Var make_kernel(const Shape& shape, Rng& rng) {
  Tensor t(shape);
  const real fan_in = static_cast<real>(shape.c) * shape.h * shape.w;
  rng.fill_normal(t, std::sqrt(2.0 / fan_in));
  return Var::leaf(std::move(t));
}

BatchNorm::BatchNorm(int channels)
    : gamma(Var::leaf(Tensor(Shape{1, channels, 1, 1}, 1.0))),
      shift(Var::leaf(Tensor(Shape{1, channels, 1, 1}, 0.0))),
      state(std::make_shared<BatchNormState>(channels)) {}

void BatchNorm::collect(ParameterList& out, const std::string& prefix) const {
  out.push_back({prefix + "/gamma", gamma});
  out.push_back({prefix + "/shift", shift});
}

SepConv3x3::SepConv3x3(int channels, Rng& rng)
    : depthwise(make_kernel(Shape{channels, 1, 3, 3}, rng)),
      pointwise(make_kernel(Shape{channels, channels, 1, 1}, rng)),
      norm(channels) {}

Var SepConv3x3::forward(const Var& x) const {
  Var y = relu(x);
  y = conv2d(y, depthwise, Var{}, ConvOptions{1, 1, x.shape().c});
  y = conv2d(y, pointwise, Var{}, ConvOptions{});
  return norm.forward(y);
}

void SepConv3x3::collect(ParameterList& out, const std::string& prefix) const {
  out.push_back({prefix + "/depthwise", depthwise});
  out.push_back({prefix + "/pointwise", pointwise});
  norm.collect(out, prefix + "/bn");
}

DilConv3x3::DilConv3x3(int channels, Rng& rng)
    : kernel(make_kernel(Shape{channels, channels, 3, 3}, rng)), norm(channels) {}

Var DilConv3x3::forward(const Var& x) const {
  return norm.forward(conv2d(relu(x), kernel, Var{}, ConvOptions{1, 2, 1}));
}

void DilConv3x3::collect(ParameterList& out, const std::string& prefix) const {
  out.push_back({prefix + "/conv", kernel});
  norm.collect(out, prefix + "/bn");
}

ConvBnRelu::ConvBnRelu(int in_channels, int out_channels, int kernel_size, int stride_, Rng& rng)
    : kernel(make_kernel(Shape{out_channels, in_channels, kernel_size, kernel_size}, rng)),
      norm(out_channels),
      stride(stride_) {}

Var ConvBnRelu::forward(const Var& x) const {
  return relu(norm.forward(conv2d(x, kernel, Var{}, ConvOptions{stride, 1, 1})));
}

void ConvBnRelu::collect(ParameterList& out, const std::string& prefix) const {
  out.push_back({prefix + "/conv", kernel});
  norm.collect(out, prefix + "/bn");
}

Upsample::Upsample(int in_channels, int out_channels, Rng& rng)
    : kernel(make_kernel(Shape{out_channels, in_channels, 1, 1}, rng)) {}

Var Upsample::forward(const Var& x) const {
  return conv2d(bilinear_up2x(x), kernel, Var{}, ConvOptions{});
}

void Upsample::collect(ParameterList& out, const std::string& prefix) const {
  out.push_back({prefix + "/conv", kernel});
}

CandidateOp CandidateOp::make(OpKind kind, int channels, Rng& rng) {
  CandidateOp op{kind, std::monostate{}};
  if (kind == OpKind::sep_conv3x3) op.impl = SepConv3x3(channels, rng);
  if (kind == OpKind::dil_conv3x3) op.impl = DilConv3x3(channels, rng);
  return op;
}

Var CandidateOp::forward(const Var& x) const {
  switch (kind) {
    case OpKind::zero:
      return Var{};
    case OpKind::skip:
      return skip_op(x);
    case OpKind::sep_conv3x3:
      return std::get<SepConv3x3>(impl).forward(x);
    case OpKind::dil_conv3x3:
      return std::get<DilConv3x3>(impl).forward(x);
    case OpKind::avg_pool3x3:
      return pool3x3(x, PoolKind::avg);
    case OpKind::max_pool3x3:
      return pool3x3(x, PoolKind::max);
  }
  return Var{};
}

void CandidateOp::collect(ParameterList& out, const std::string& prefix) const {
  const std::string p = prefix + "/" + std::string(op_name(kind));
  if (const auto* s = std::get_if<SepConv3x3>(&impl)) s->collect(out, p);
  if (const auto* d = std::get_if<DilConv3x3>(&impl)) d->collect(out, p);
}

}  // namespace posefabric::fabric

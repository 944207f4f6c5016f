#pragma once

#include <memory>
#include <string>
#include <variant>
#include <vector>

#include "posefabric/core/ops.hpp"
#include "posefabric/core/rng.hpp"
#include "posefabric/fabric/spec.hpp"

namespace posefabric::fabric {

enum class ParamKind { weight, arch };

/// Named learnable tensor. Names are '/'-separated paths unique within a model.
struct Parameter {
  std::string name;
  Var var;
  ParamKind kind = ParamKind::weight;
};

using ParameterList = std::vector<Parameter>;

/// He-normal initialised leaf of the given kernel shape.
Var make_kernel(const Shape& shape, Rng& rng);

struct BatchNorm {
  BatchNorm() = default;
  explicit BatchNorm(int channels);

  Var gamma;
  Var shift;
  std::shared_ptr<BatchNormState> state;

  Var forward(const Var& x) const { return batch_norm(x, gamma, shift, *state); }
  void collect(ParameterList& out, const std::string& prefix) const;
  int channels() const { return gamma.shape().c; }
};

/// ReLU -> 3x3 depthwise -> 1x1 pointwise -> BN.
struct SepConv3x3 {
  SepConv3x3(int channels, Rng& rng);

  Var depthwise;
  Var pointwise;
  BatchNorm norm;

  Var forward(const Var& x) const;
  void collect(ParameterList& out, const std::string& prefix) const;
};

/// ReLU -> 3x3 conv with dilation 2 -> BN.
struct DilConv3x3 {
  DilConv3x3(int channels, Rng& rng);

  Var kernel;
  BatchNorm norm;

  Var forward(const Var& x) const;
  void collect(ParameterList& out, const std::string& prefix) const;
};

/// Conv -> BN -> ReLU. Used by the stem and by the downsampling transform.
struct ConvBnRelu {
  ConvBnRelu(int in_channels, int out_channels, int kernel_size, int stride, Rng& rng);

  Var kernel;
  BatchNorm norm;
  int stride = 1;

  Var forward(const Var& x) const;
  void collect(ParameterList& out, const std::string& prefix) const;
};

/// Bilinear x2 followed by a 1x1 channel-reducing conv.
struct Upsample {
  Upsample(int in_channels, int out_channels, Rng& rng);

  Var kernel;

  Var forward(const Var& x) const;
  void collect(ParameterList& out, const std::string& prefix) const;
};

/// One candidate operation on a cell edge. Pooling, skip and zero carry no
/// parameters.
struct CandidateOp {
  OpKind kind;
  std::variant<std::monostate, SepConv3x3, DilConv3x3> impl;
  bool removed = false;

  static CandidateOp make(OpKind kind, int channels, Rng& rng);
  /// Empty Var for the zero op: its term is skipped by the mixture.
  Var forward(const Var& x) const;
  void collect(ParameterList& out, const std::string& prefix) const;
};

}  // namespace posefabric::fabric

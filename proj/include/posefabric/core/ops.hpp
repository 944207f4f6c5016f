#pragma once

#include <span>
#include <vector>

#include "posefabric/core/autograd.hpp"

namespace posefabric {

struct ConvOptions {
  int stride = 1;
  int dilation = 1;
  int groups = 1;
};

/// "Same" padding (dilation * (k - 1) / 2): stride 1 preserves H x W,
/// stride 2 yields ceil(H / 2) x ceil(W / 2).
Shape conv_output_shape(const Shape& input, const Shape& kernel, const ConvOptions& options);

/// Grouped 2-D convolution. `kernel` is (C_out, C_in / groups, k, k) with odd
/// k; `bias`, when non-empty, is (1, C_out, 1, 1).
Var conv2d(const Var& x, const Var& kernel, const Var& bias, const ConvOptions& options);

Var relu(const Var& x);
Var add(const Var& a, const Var& b);
Var scale(const Var& x, real factor);

/// out = sum_k weights[index[k]] * terms[k]. Empty terms contribute nothing
/// (and cost nothing); when every term is empty the result is zeros of
/// `fallback` shape. A Var may appear in several terms.
Var weighted_sum(std::span<const Var> terms, const Var& weights, std::span<const int> index,
                 const Shape& fallback = {});

Var concat_channels(std::span<const Var> parts);

struct BatchNormState {
  explicit BatchNormState(int channels = 1);

  Tensor running_mean;
  Tensor running_var;
  bool training = true;
  real momentum = 0.9;
  real eps = 1e-5;
};

/// Per-channel normalization with learnable scale `gamma` and `shift`, both
/// (1, C, 1, 1). Training mode normalizes with batch statistics and folds
/// them into the running estimates; eval mode reads the running estimates
/// only.
Var batch_norm(const Var& x, const Var& gamma, const Var& shift, BatchNormState& state);

enum class PoolKind { avg, max };

/// 3x3, stride 1, padding 1. Average excludes padding from the divisor; max
/// routes the gradient to the first (lowest linear index) maximal element.
Var pool3x3(const Var& x, PoolKind kind);

/// Bilinear x2 upsampling, half-pixel (align-corners = false) sampling.
Var bilinear_up2x(const Var& x);

/// Softmax across the channel axis, independently per (n, h, w).
Var softmax(const Var& x);

Var zero_op(const Var& x);
Var skip_op(const Var& x);

/// Mean of squared differences over all elements.
Var mse(const Var& a, const Var& b);
Var sum_squares(const Var& x);
Var sum(const Var& x);

}  // namespace posefabric

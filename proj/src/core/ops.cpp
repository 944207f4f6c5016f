#include "posefabric/core/ops.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "posefabric/core/errors.hpp"
#include "posefabric/core/flops.hpp"
#include "posefabric/kernels/kernels.hpp"

namespace posefabric {

namespace {

void require_same_shape(const Var& a, const Var& b, const char* op) {
  if (a.shape() != b.shape())
    throw ConfigError(std::string(op) + ": shape mismatch " + a.shape().str() + " vs " +
                      b.shape().str());
}

void require_value(const Var& x, const char* op) {
  if (!x || x.value().empty()) throw ConfigError(std::string(op) + ": empty input");
}

struct ConvGeometry {
  int n, cin, h, w;
  int cout, k, cin_g, cout_g, groups;
  int stride, dilation, pad;
  int ho, wo;

  int col_rows() const { return cin_g * k * k; }
  int col_cols() const { return ho * wo; }
  bool direct() const { return k == 1 && stride == 1; }
};

ConvGeometry conv_geometry(const Shape& in, const Shape& kernel, const ConvOptions& o) {
  if (!in.valid()) throw ConfigError("conv2d: zero-size input " + in.str());
  if (o.groups < 1 || o.stride < 1 || o.dilation < 1)
    throw ConfigError("conv2d: stride, dilation and groups must be >= 1");
  if (kernel.h != kernel.w || kernel.h % 2 == 0)
    throw ConfigError("conv2d: kernel must be square with odd size, got " + kernel.str());
  if (in.c % o.groups != 0 || kernel.n % o.groups != 0)
    throw ConfigError("conv2d: channels " + std::to_string(in.c) + "->" + std::to_string(kernel.n) +
                      " not divisible by groups " + std::to_string(o.groups));
  if (kernel.c != in.c / o.groups)
    throw ConfigError("conv2d: kernel expects " + std::to_string(kernel.c * o.groups) +
                      " input channels, got " + std::to_string(in.c));
  ConvGeometry g{};
  g.n = in.n;
  g.cin = in.c;
  g.h = in.h;
  g.w = in.w;
  g.cout = kernel.n;
  g.k = kernel.h;
  g.groups = o.groups;
  g.cin_g = in.c / o.groups;
  g.cout_g = kernel.n / o.groups;
  g.stride = o.stride;
  g.dilation = o.dilation;
  g.pad = o.dilation * (g.k - 1) / 2;
  g.ho = (g.h + 2 * g.pad - g.dilation * (g.k - 1) - 1) / g.stride + 1;
  g.wo = (g.w + 2 * g.pad - g.dilation * (g.k - 1) - 1) / g.stride + 1;
  return g;
}

void im2col(const ConvGeometry& g, const real* x, real* col) {
  const int cols = g.col_cols();
  for (int c = 0; c < g.cin_g; ++c) {
    const real* xc = x + static_cast<std::size_t>(c) * g.h * g.w;
    for (int ky = 0; ky < g.k; ++ky) {
      for (int kx = 0; kx < g.k; ++kx) {
        real* row = col + static_cast<std::size_t>((c * g.k + ky) * g.k + kx) * cols;
        for (int oy = 0; oy < g.ho; ++oy) {
          const int iy = oy * g.stride + ky * g.dilation - g.pad;
          real* dst = row + static_cast<std::size_t>(oy) * g.wo;
          if (iy < 0 || iy >= g.h) {
            std::fill(dst, dst + g.wo, 0.0);
            continue;
          }
          const real* src = xc + static_cast<std::size_t>(iy) * g.w;
          for (int ox = 0; ox < g.wo; ++ox) {
            const int ix = ox * g.stride + kx * g.dilation - g.pad;
            dst[ox] = (ix >= 0 && ix < g.w) ? src[ix] : 0.0;
          }
        }
      }
    }
  }
}

void col2im(const ConvGeometry& g, const real* col, real* x) {
  const int cols = g.col_cols();
  for (int c = 0; c < g.cin_g; ++c) {
    real* xc = x + static_cast<std::size_t>(c) * g.h * g.w;
    for (int ky = 0; ky < g.k; ++ky) {
      for (int kx = 0; kx < g.k; ++kx) {
        const real* row = col + static_cast<std::size_t>((c * g.k + ky) * g.k + kx) * cols;
        for (int oy = 0; oy < g.ho; ++oy) {
          const int iy = oy * g.stride + ky * g.dilation - g.pad;
          if (iy < 0 || iy >= g.h) continue;
          const real* src = row + static_cast<std::size_t>(oy) * g.wo;
          real* dst = xc + static_cast<std::size_t>(iy) * g.w;
          for (int ox = 0; ox < g.wo; ++ox) {
            const int ix = ox * g.stride + kx * g.dilation - g.pad;
            if (ix >= 0 && ix < g.w) dst[ix] += src[ox];
          }
        }
      }
    }
  }
}

}  // namespace

Shape conv_output_shape(const Shape& input, const Shape& kernel, const ConvOptions& options) {
  const ConvGeometry g = conv_geometry(input, kernel, options);
  return Shape{g.n, g.cout, g.ho, g.wo};
}

Var conv2d(const Var& x, const Var& kernel, const Var& bias, const ConvOptions& options) {
  require_value(x, "conv2d");
  const ConvGeometry g = conv_geometry(x.shape(), kernel.shape(), options);
  if (bias && (bias.shape() != Shape{1, g.cout, 1, 1}))
    throw ConfigError("conv2d: bias must be (1," + std::to_string(g.cout) + ",1,1)");

  const auto& kt = kernels::active();
  Tensor out(Shape{g.n, g.cout, g.ho, g.wo});
  const int rows = g.col_rows();
  const int cols = g.col_cols();
  std::vector<real> col(g.direct() ? 0 : static_cast<std::size_t>(rows) * cols);
  const real* wptr = kernel.value().ptr();

  for (int n = 0; n < g.n; ++n) {
    for (int grp = 0; grp < g.groups; ++grp) {
      const real* xg = x.value().plane(n, grp * g.cin_g);
      const real* cptr = xg;
      if (!g.direct()) {
        im2col(g, xg, col.data());
        cptr = col.data();
      }
      kt.gemm_nn(g.cout_g, cols, rows, wptr + static_cast<std::size_t>(grp) * g.cout_g * rows, rows,
                 cptr, cols, out.plane(n, grp * g.cout_g), cols);
    }
    if (bias) {
      for (int c = 0; c < g.cout; ++c) {
        const real b = bias.value()[c];
        real* o = out.plane(n, c);
        for (int i = 0; i < cols; ++i) o[i] += b;
      }
    }
  }
  flops::add(static_cast<std::uint64_t>(g.k) * g.k * g.cin_g * g.cout * g.ho * g.wo * g.n);

  std::vector<Var> inputs{x, kernel};
  if (bias) inputs.push_back(bias);
  return make_result(std::move(out), inputs, [g](Node& self) {
    const auto& kt = kernels::active();
    Node& xn = *self.inputs[0];
    Node& kn = *self.inputs[1];
    const int rows = g.col_rows();
    const int cols = g.col_cols();
    std::vector<real> col(g.direct() ? 0 : static_cast<std::size_t>(rows) * cols);
    std::vector<real> dcol(static_cast<std::size_t>(rows) * cols);
    const real* wptr = kn.value.ptr();

    for (int n = 0; n < g.n; ++n) {
      for (int grp = 0; grp < g.groups; ++grp) {
        const real* dout = self.grad.plane(n, grp * g.cout_g);
        const real* wg = wptr + static_cast<std::size_t>(grp) * g.cout_g * rows;
        if (kn.requires_grad) {
          const real* xg = xn.value.plane(n, grp * g.cin_g);
          const real* cptr = xg;
          if (!g.direct()) {
            im2col(g, xg, col.data());
            cptr = col.data();
          }
          kt.gemm_nt(g.cout_g, rows, cols, dout, cols, cptr, cols,
                     kn.ensure_grad().ptr() + static_cast<std::size_t>(grp) * g.cout_g * rows, rows);
        }
        if (xn.requires_grad) {
          real* dx = xn.ensure_grad().plane(n, grp * g.cin_g);
          if (g.direct()) {
            kt.gemm_tn(rows, cols, g.cout_g, wg, rows, dout, cols, dx, cols);
          } else {
            std::fill(dcol.begin(), dcol.end(), 0.0);
            kt.gemm_tn(rows, cols, g.cout_g, wg, rows, dout, cols, dcol.data(), cols);
            col2im(g, dcol.data(), dx);
          }
        }
      }
    }
    if (self.inputs.size() > 2 && self.inputs[2]->requires_grad) {
      Tensor& db = self.inputs[2]->ensure_grad();
      for (int n = 0; n < g.n; ++n)
        for (int c = 0; c < g.cout; ++c) {
          const real* d = self.grad.plane(n, c);
          real s = 0;
          for (int i = 0; i < cols; ++i) s += d[i];
          db[c] += s;
        }
    }
  });
}

Var relu(const Var& x) {
  require_value(x, "relu");
  const auto& kt = kernels::active();
  Tensor out(x.shape());
  kt.relu_forward(out.size(), x.value().ptr(), out.ptr());
  flops::add(out.size());
  if (branch_signature::enabled()) {
    std::uint64_t bits = 0;
    const auto v = x.value().data();
    for (std::size_t i = 0; i < v.size(); ++i) {
      bits = bits * 31 + (v[i] > 0 ? 1 : 0);
      if (i % 60 == 59) {
        branch_signature::mix(bits);
        bits = 0;
      }
    }
    branch_signature::mix(bits);
  }
  return make_result(std::move(out), {x}, [](Node& self) {
    Node& xn = *self.inputs[0];
    if (!xn.requires_grad) return;
    kernels::active().relu_backward(self.value.size(), xn.value.ptr(), self.grad.ptr(),
                                    xn.ensure_grad().ptr());
  });
}

Var add(const Var& a, const Var& b) {
  require_same_shape(a, b, "add");
  Tensor out = a.value();
  kernels::active().axpy(out.size(), 1.0, b.value().ptr(), out.ptr());
  return make_result(std::move(out), {a, b}, [](Node& self) {
    accumulate_grad(*self.inputs[0], self.grad.data());
    accumulate_grad(*self.inputs[1], self.grad.data());
  });
}

Var scale(const Var& x, real factor) {
  Tensor out = x.value();
  for (real& v : out.data()) v *= factor;
  return make_result(std::move(out), {x}, [factor](Node& self) {
    Node& xn = *self.inputs[0];
    if (!xn.requires_grad) return;
    kernels::active().axpy(self.grad.size(), factor, self.grad.ptr(), xn.ensure_grad().ptr());
  });
}

Var weighted_sum(std::span<const Var> terms, const Var& weights, std::span<const int> index,
                 const Shape& fallback) {
  if (terms.size() != index.size())
    throw ConfigError("weighted_sum: term and index counts differ");
  Shape shape = fallback;
  for (const Var& t : terms)
    if (t) {
      shape = t.shape();
      break;
    }
  if (!shape.valid()) throw ConfigError("weighted_sum: no non-empty term and no fallback shape");

  const auto& kt = kernels::active();
  Tensor out(shape);
  std::vector<Var> inputs{weights};
  std::vector<int> used_index;
  for (std::size_t k = 0; k < terms.size(); ++k) {
    if (!terms[k]) continue;
    if (terms[k].shape() != shape) throw ConfigError("weighted_sum: term shape mismatch");
    if (index[k] < 0 || static_cast<std::size_t>(index[k]) >= weights.value().size())
      throw ConfigError("weighted_sum: weight index out of range");
    kt.axpy(out.size(), weights.value()[index[k]], terms[k].value().ptr(), out.ptr());
    inputs.push_back(terms[k]);
    used_index.push_back(index[k]);
  }
  flops::add(static_cast<std::uint64_t>(out.size()) * used_index.size());

  return make_result(std::move(out), inputs, [used_index](Node& self) {
    const auto& kt = kernels::active();
    Node& wn = *self.inputs[0];
    for (std::size_t k = 0; k < used_index.size(); ++k) {
      Node& tn = *self.inputs[k + 1];
      if (tn.requires_grad)
        kt.axpy(self.grad.size(), wn.value[used_index[k]], self.grad.ptr(), tn.ensure_grad().ptr());
      if (wn.requires_grad)
        wn.ensure_grad()[used_index[k]] += kt.dot(self.grad.size(), self.grad.ptr(), tn.value.ptr());
    }
  });
}

Var concat_channels(std::span<const Var> parts) {
  if (parts.empty()) throw ConfigError("concat_channels: nothing to concatenate");
  Shape shape = parts.front().shape();
  int channels = 0;
  for (const Var& p : parts) {
    const Shape& s = p.shape();
    if (s.n != shape.n || s.h != shape.h || s.w != shape.w)
      throw ConfigError("concat_channels: spatial/batch mismatch " + s.str() + " vs " + shape.str());
    channels += s.c;
  }
  shape.c = channels;
  Tensor out(shape);
  for (int n = 0; n < shape.n; ++n) {
    int offset = 0;
    for (const Var& p : parts) {
      const std::size_t count = static_cast<std::size_t>(p.shape().c) * shape.plane();
      std::copy_n(p.value().plane(n, 0), count, out.plane(n, offset));
      offset += p.shape().c;
    }
  }
  return make_result(std::move(out), parts, [](Node& self) {
    const Shape& s = self.value.shape();
    for (int n = 0; n < s.n; ++n) {
      int offset = 0;
      for (auto& in : self.inputs) {
        const int c = in->value.shape().c;
        if (in->requires_grad) {
          const std::size_t count = static_cast<std::size_t>(c) * s.plane();
          kernels::active().axpy(count, 1.0, self.grad.plane(n, offset), in->ensure_grad().plane(n, 0));
        }
        offset += c;
      }
    }
  });
}

BatchNormState::BatchNormState(int channels)
    : running_mean(Shape{1, channels, 1, 1}, 0.0), running_var(Shape{1, channels, 1, 1}, 1.0) {}

Var batch_norm(const Var& x, const Var& gamma, const Var& shift, BatchNormState& state) {
  require_value(x, "batch_norm");
  const Shape s = x.shape();
  const Shape ps{1, s.c, 1, 1};
  if (gamma.shape() != ps || shift.shape() != ps || state.running_mean.shape() != ps)
    throw ConfigError("batch_norm: parameter shape must be " + ps.str());

  const std::size_t plane = s.plane();
  const std::size_t m = static_cast<std::size_t>(s.n) * plane;
  std::vector<real> mean(s.c), inv_std(s.c);

  if (state.training) {
    for (int c = 0; c < s.c; ++c) {
      real acc = 0;
      for (int n = 0; n < s.n; ++n) {
        const real* p = x.value().plane(n, c);
        for (std::size_t i = 0; i < plane; ++i) acc += p[i];
      }
      const real mu = acc / static_cast<real>(m);
      real var = 0;
      for (int n = 0; n < s.n; ++n) {
        const real* p = x.value().plane(n, c);
        for (std::size_t i = 0; i < plane; ++i) var += (p[i] - mu) * (p[i] - mu);
      }
      var /= static_cast<real>(m);
      mean[c] = mu;
      inv_std[c] = 1.0 / std::sqrt(var + state.eps);
      const real unbiased = m > 1 ? var * static_cast<real>(m) / static_cast<real>(m - 1) : var;
      state.running_mean[c] = state.momentum * state.running_mean[c] + (1 - state.momentum) * mu;
      state.running_var[c] = state.momentum * state.running_var[c] + (1 - state.momentum) * unbiased;
    }
  } else {
    for (int c = 0; c < s.c; ++c) {
      mean[c] = state.running_mean[c];
      inv_std[c] = 1.0 / std::sqrt(state.running_var[c] + state.eps);
    }
  }

  Tensor out(s);
  for (int n = 0; n < s.n; ++n)
    for (int c = 0; c < s.c; ++c) {
      const real* p = x.value().plane(n, c);
      real* o = out.plane(n, c);
      const real a = gamma.value()[c] * inv_std[c];
      const real b = shift.value()[c] - a * mean[c];
      for (std::size_t i = 0; i < plane; ++i) o[i] = a * p[i] + b;
    }
  flops::add(out.size());

  const bool batch_stats = state.training;
  return make_result(std::move(out), {x, gamma, shift},
                     [mean, inv_std, batch_stats](Node& self) {
    Node& xn = *self.inputs[0];
    Node& gn = *self.inputs[1];
    Node& bn = *self.inputs[2];
    const Shape s = xn.value.shape();
    const std::size_t plane = s.plane();
    const real m = static_cast<real>(static_cast<std::size_t>(s.n) * plane);
    for (int c = 0; c < s.c; ++c) {
      real sum_dy = 0, sum_dy_xhat = 0;
      for (int n = 0; n < s.n; ++n) {
        const real* x = xn.value.plane(n, c);
        const real* dy = self.grad.plane(n, c);
        for (std::size_t i = 0; i < plane; ++i) {
          sum_dy += dy[i];
          sum_dy_xhat += dy[i] * (x[i] - mean[c]) * inv_std[c];
        }
      }
      if (gn.requires_grad) gn.ensure_grad()[c] += sum_dy_xhat;
      if (bn.requires_grad) bn.ensure_grad()[c] += sum_dy;
      if (!xn.requires_grad) continue;
      const real g = gn.value[c] * inv_std[c];
      for (int n = 0; n < s.n; ++n) {
        const real* x = xn.value.plane(n, c);
        const real* dy = self.grad.plane(n, c);
        real* dx = xn.ensure_grad().plane(n, c);
        if (batch_stats) {
          for (std::size_t i = 0; i < plane; ++i) {
            const real xhat = (x[i] - mean[c]) * inv_std[c];
            dx[i] += g * (dy[i] - sum_dy / m - xhat * sum_dy_xhat / m);
          }
        } else {
          for (std::size_t i = 0; i < plane; ++i) dx[i] += g * dy[i];
        }
      }
    }
  });
}

Var pool3x3(const Var& x, PoolKind kind) {
  require_value(x, "pool3x3");
  const Shape s = x.shape();
  Tensor out(s);
  std::vector<int> winners;
  if (kind == PoolKind::max) winners.resize(out.size());

  for (int n = 0; n < s.n; ++n)
    for (int c = 0; c < s.c; ++c) {
      const real* p = x.value().plane(n, c);
      real* o = out.plane(n, c);
      const std::size_t base = (static_cast<std::size_t>(n) * s.c + c) * s.plane();
      for (int y = 0; y < s.h; ++y)
        for (int xx = 0; xx < s.w; ++xx) {
          const int y0 = std::max(0, y - 1), y1 = std::min(s.h - 1, y + 1);
          const int x0 = std::max(0, xx - 1), x1 = std::min(s.w - 1, xx + 1);
          const std::size_t oi = static_cast<std::size_t>(y) * s.w + xx;
          if (kind == PoolKind::avg) {
            real acc = 0;
            for (int yy = y0; yy <= y1; ++yy)
              for (int xi = x0; xi <= x1; ++xi) acc += p[yy * s.w + xi];
            o[oi] = acc / static_cast<real>((y1 - y0 + 1) * (x1 - x0 + 1));
          } else {
            real best = -std::numeric_limits<real>::infinity();
            int arg = y0 * s.w + x0;
            for (int yy = y0; yy <= y1; ++yy)
              for (int xi = x0; xi <= x1; ++xi)
                if (p[yy * s.w + xi] > best) {
                  best = p[yy * s.w + xi];
                  arg = yy * s.w + xi;
                }
            o[oi] = best;
            winners[base + oi] = arg;
          }
        }
    }
  flops::add(9 * static_cast<std::uint64_t>(out.size()));
  if (kind == PoolKind::max && branch_signature::enabled()) {
    std::uint64_t acc = 0;
    for (std::size_t i = 0; i < winners.size(); ++i) {
      acc = acc * 1315423911ULL + static_cast<std::uint64_t>(winners[i]);
      if (i % 16 == 15) {
        branch_signature::mix(acc);
        acc = 0;
      }
    }
    branch_signature::mix(acc);
  }

  return make_result(std::move(out), {x}, [kind, winners = std::move(winners)](Node& self) {
    Node& xn = *self.inputs[0];
    if (!xn.requires_grad) return;
    const Shape s = xn.value.shape();
    for (int n = 0; n < s.n; ++n)
      for (int c = 0; c < s.c; ++c) {
        const real* g = self.grad.plane(n, c);
        real* dx = xn.ensure_grad().plane(n, c);
        const std::size_t base = (static_cast<std::size_t>(n) * s.c + c) * s.plane();
        for (int y = 0; y < s.h; ++y)
          for (int xx = 0; xx < s.w; ++xx) {
            const std::size_t oi = static_cast<std::size_t>(y) * s.w + xx;
            if (kind == PoolKind::max) {
              dx[winners[base + oi]] += g[oi];
              continue;
            }
            const int y0 = std::max(0, y - 1), y1 = std::min(s.h - 1, y + 1);
            const int x0 = std::max(0, xx - 1), x1 = std::min(s.w - 1, xx + 1);
            const real share = g[oi] / static_cast<real>((y1 - y0 + 1) * (x1 - x0 + 1));
            for (int yy = y0; yy <= y1; ++yy)
              for (int xi = x0; xi <= x1; ++xi) dx[yy * s.w + xi] += share;
          }
      }
  });
}

namespace {

struct Tap {
  int lo, hi;
  real w_lo, w_hi;
};

std::vector<Tap> upsample_taps(int in_size) {
  std::vector<Tap> taps(2 * static_cast<std::size_t>(in_size));
  for (int o = 0; o < 2 * in_size; ++o) {
    real src = (o + 0.5) / 2.0 - 0.5;
    if (src < 0) src = 0;
    const int lo = std::min(static_cast<int>(src), in_size - 1);
    const int hi = std::min(lo + 1, in_size - 1);
    const real frac = src - lo;
    taps[o] = Tap{lo, hi, 1.0 - frac, frac};
  }
  return taps;
}

}  // namespace

Var bilinear_up2x(const Var& x) {
  require_value(x, "bilinear_up2x");
  const Shape s = x.shape();
  const Shape os{s.n, s.c, 2 * s.h, 2 * s.w};
  const auto ty = upsample_taps(s.h);
  const auto tx = upsample_taps(s.w);
  Tensor out(os);
  for (int n = 0; n < s.n; ++n)
    for (int c = 0; c < s.c; ++c) {
      const real* p = x.value().plane(n, c);
      real* o = out.plane(n, c);
      for (int y = 0; y < os.h; ++y) {
        const Tap& a = ty[y];
        for (int xx = 0; xx < os.w; ++xx) {
          const Tap& b = tx[xx];
          o[y * os.w + xx] = a.w_lo * (b.w_lo * p[a.lo * s.w + b.lo] + b.w_hi * p[a.lo * s.w + b.hi]) +
                             a.w_hi * (b.w_lo * p[a.hi * s.w + b.lo] + b.w_hi * p[a.hi * s.w + b.hi]);
        }
      }
    }
  flops::add(out.size());
  return make_result(std::move(out), {x}, [ty, tx](Node& self) {
    Node& xn = *self.inputs[0];
    if (!xn.requires_grad) return;
    const Shape s = xn.value.shape();
    const Shape os = self.value.shape();
    for (int n = 0; n < s.n; ++n)
      for (int c = 0; c < s.c; ++c) {
        const real* g = self.grad.plane(n, c);
        real* dx = xn.ensure_grad().plane(n, c);
        for (int y = 0; y < os.h; ++y) {
          const Tap& a = ty[y];
          for (int xx = 0; xx < os.w; ++xx) {
            const Tap& b = tx[xx];
            const real v = g[y * os.w + xx];
            dx[a.lo * s.w + b.lo] += a.w_lo * b.w_lo * v;
            dx[a.lo * s.w + b.hi] += a.w_lo * b.w_hi * v;
            dx[a.hi * s.w + b.lo] += a.w_hi * b.w_lo * v;
            dx[a.hi * s.w + b.hi] += a.w_hi * b.w_hi * v;
          }
        }
      }
  });
}

Var softmax(const Var& x) {
  require_value(x, "softmax");
  const Shape s = x.shape();
  const std::size_t plane = s.plane();
  Tensor out(s);
  for (int n = 0; n < s.n; ++n)
    for (std::size_t p = 0; p < plane; ++p) {
      real mx = -std::numeric_limits<real>::infinity();
      for (int c = 0; c < s.c; ++c) mx = std::max(mx, x.value().plane(n, c)[p]);
      real z = 0;
      for (int c = 0; c < s.c; ++c) {
        const real e = std::exp(x.value().plane(n, c)[p] - mx);
        out.plane(n, c)[p] = e;
        z += e;
      }
      for (int c = 0; c < s.c; ++c) out.plane(n, c)[p] /= z;
    }
  return make_result(std::move(out), {x}, [](Node& self) {
    Node& xn = *self.inputs[0];
    if (!xn.requires_grad) return;
    const Shape s = self.value.shape();
    const std::size_t plane = s.plane();
    Tensor& dx = xn.ensure_grad();
    for (int n = 0; n < s.n; ++n)
      for (std::size_t p = 0; p < plane; ++p) {
        real inner = 0;
        for (int c = 0; c < s.c; ++c) inner += self.grad.plane(n, c)[p] * self.value.plane(n, c)[p];
        for (int c = 0; c < s.c; ++c)
          dx.plane(n, c)[p] += self.value.plane(n, c)[p] * (self.grad.plane(n, c)[p] - inner);
      }
  });
}

Var zero_op(const Var& x) {
  require_value(x, "zero_op");
  // No backward: the input receives an exactly-zero gradient.
  return make_result(Tensor(x.shape()), {x}, [](Node&) {});
}

Var skip_op(const Var& x) { return x; }

Var mse(const Var& a, const Var& b) {
  require_same_shape(a, b, "mse");
  const std::size_t count = a.value().size();
  real acc = 0;
  for (std::size_t i = 0; i < count; ++i) {
    const real d = a.value()[i] - b.value()[i];
    acc += d * d;
  }
  return make_result(Tensor(Shape{1, 1, 1, 1}, acc / static_cast<real>(count)), {a, b},
                     [count](Node& self) {
    Node& an = *self.inputs[0];
    Node& bn = *self.inputs[1];
    const real g = self.grad[0] * 2.0 / static_cast<real>(count);
    for (std::size_t i = 0; i < count; ++i) {
      const real d = g * (an.value[i] - bn.value[i]);
      if (an.requires_grad) an.ensure_grad()[i] += d;
      if (bn.requires_grad) bn.ensure_grad()[i] -= d;
    }
  });
}

Var sum_squares(const Var& x) {
  require_value(x, "sum_squares");
  const real acc = kernels::active().dot(x.value().size(), x.value().ptr(), x.value().ptr());
  return make_result(Tensor(Shape{1, 1, 1, 1}, acc), {x}, [](Node& self) {
    Node& xn = *self.inputs[0];
    if (!xn.requires_grad) return;
    kernels::active().axpy(xn.value.size(), 2.0 * self.grad[0], xn.value.ptr(), xn.ensure_grad().ptr());
  });
}

Var sum(const Var& x) {
  require_value(x, "sum");
  return make_result(Tensor(Shape{1, 1, 1, 1}, x.value().sum()), {x}, [](Node& self) {
    Node& xn = *self.inputs[0];
    if (!xn.requires_grad) return;
    Tensor& dx = xn.ensure_grad();
    for (real& v : dx.data()) v += self.grad[0];
  });
}

}  // namespace posefabric

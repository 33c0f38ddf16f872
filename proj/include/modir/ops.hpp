#pragma once

#include <algorithm>
#include <cmath>
#include <vector>

#include <Eigen/Core>

#include "modir/tensor.hpp"

// Differentiable ops over Tensor. Every op computes its forward value eagerly
// and, when the tape is recording and an input requires a gradient, appends a
// closure that accumulates into the inputs' gradients.
namespace modir::ops {

namespace detail {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapMat = Eigen::Map<RowMat>;
using ConstMapMat = Eigen::Map<const RowMat>;
using Data = std::shared_ptr<modir::detail::TensorData>;

inline void require_rank(const Tensor& t, std::size_t rank, const char* op) {
  if (t.rank() != rank)
    throw ShapeError(std::string(op) + ": expected rank " + std::to_string(rank) + ", got " +
                     shape_str(t.shape()));
}

inline void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (a.shape() != b.shape())
    throw ShapeError(std::string(op) + ": shape mismatch " + shape_str(a.shape()) + " vs " +
                     shape_str(b.shape()));
}

// Shared implementation for elementwise unary ops with a pointwise derivative.
template <class F, class DF>
Tensor unary(Tape& tape, OpKind kind, const Tensor& x, F f, DF df) {
  std::vector<double> out(x.numel());
  auto xv = x.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = f(xv[i]);
  Tensor y = Tensor::from(x.shape(), std::move(out), tape.wants({&x}));
  if (y.requires_grad()) {
    Data xd = x.impl(), yd = y.impl();
    tape.record(kind, {&x}, y, [xd, yd, df] {
      if (!xd->requires_grad) return;
      for (std::size_t i = 0; i < xd->value.size(); ++i)
        xd->grad[i] += yd->grad[i] * df(xd->value[i]);
    });
  }
  return y;
}

struct AxisLayout {
  std::size_t outer, n, inner;
};

inline AxisLayout axis_layout(const Shape& s, std::size_t axis) {
  AxisLayout l{1, s[axis], 1};
  for (std::size_t i = 0; i < axis; ++i) l.outer *= s[i];
  for (std::size_t i = axis + 1; i < s.size(); ++i) l.inner *= s[i];
  return l;
}

// Bilinear sample tables for align-corners-false upsampling along one axis.
struct Interp1d {
  std::vector<std::size_t> i0, i1;
  std::vector<double> frac;
};

inline Interp1d upsample_table(std::size_t in, std::size_t factor) {
  Interp1d t;
  const std::size_t out = in * factor;
  t.i0.resize(out);
  t.i1.resize(out);
  t.frac.resize(out);
  for (std::size_t o = 0; o < out; ++o) {
    double src = (static_cast<double>(o) + 0.5) / static_cast<double>(factor) - 0.5;
    if (src < 0.0) src = 0.0;
    auto lo = static_cast<std::size_t>(std::floor(src));
    lo = std::min(lo, in - 1);
    t.i0[o] = lo;
    t.i1[o] = std::min(lo + 1, in - 1);
    t.frac[o] = src - static_cast<double>(lo);
  }
  return t;
}

// Zero-padded sliding window sum of odd width along one axis of a plane stack.
inline void box_pass(const double* in, double* out, std::size_t planes, std::size_t h,
                     std::size_t w, std::size_t window, bool along_w) {
  const std::ptrdiff_t r = static_cast<std::ptrdiff_t>(window / 2);
  const std::size_t len = along_w ? w : h;
  const std::size_t lines = along_w ? h : w;
  const std::size_t stride = along_w ? 1 : w;
  std::vector<double> prefix(len + 1);
  for (std::size_t p = 0; p < planes; ++p) {
    const double* ip = in + p * h * w;
    double* op = out + p * h * w;
    for (std::size_t line = 0; line < lines; ++line) {
      const std::size_t base = along_w ? line * w : line;
      prefix[0] = 0.0;
      for (std::size_t i = 0; i < len; ++i) prefix[i + 1] = prefix[i] + ip[base + i * stride];
      for (std::size_t i = 0; i < len; ++i) {
        const std::ptrdiff_t lo = std::max<std::ptrdiff_t>(0, static_cast<std::ptrdiff_t>(i) - r);
        const std::ptrdiff_t hi =
            std::min<std::ptrdiff_t>(static_cast<std::ptrdiff_t>(len), static_cast<std::ptrdiff_t>(i) + r + 1);
        op[base + i * stride] = prefix[hi] - prefix[lo];
      }
    }
  }
}

inline std::vector<double> box_sum_values(std::span<const double> x, const Shape& s, std::size_t window) {
  const std::size_t h = s[2], w = s[3], planes = s[0] * s[1];
  std::vector<double> tmp(x.size()), out(x.size());
  box_pass(x.data(), tmp.data(), planes, h, w, window, true);
  box_pass(tmp.data(), out.data(), planes, h, w, window, false);
  return out;
}

}  // namespace detail

/// 2D cross-correlation. input [N,C,H,W], kernel [F,C,kh,kw] -> [N,F,H',W'].
inline Tensor conv2d(Tape& tape, const Tensor& input, const Tensor& kernel, std::size_t stride,
                     std::size_t padding) {
  using namespace detail;
  require_rank(input, 4, "conv2d");
  require_rank(kernel, 4, "conv2d");
  const std::size_t n = input.dim(0), c = input.dim(1), h = input.dim(2), w = input.dim(3);
  const std::size_t f = kernel.dim(0), kh = kernel.dim(2), kw = kernel.dim(3);
  if (kernel.dim(1) != c)
    throw ShapeError("conv2d: input has " + std::to_string(c) + " channels, kernel expects " +
                     std::to_string(kernel.dim(1)));
  if (kh % 2 == 0 || kw % 2 == 0) throw ShapeError("conv2d: kernel extents must be odd");
  if (stride == 0) throw ShapeError("conv2d: stride must be positive");
  if (h + 2 * padding < kh || w + 2 * padding < kw) throw ShapeError("conv2d: kernel larger than padded input");
  const std::size_t ho = (h + 2 * padding - kh) / stride + 1;
  const std::size_t wo = (w + 2 * padding - kw) / stride + 1;
  const std::size_t ckk = c * kh * kw, hw_out = ho * wo;

  auto cols = std::make_shared<std::vector<RowMat>>(n, RowMat(ckk, hw_out));
  auto xv = input.data();
  for (std::size_t b = 0; b < n; ++b) {
    RowMat& col = (*cols)[b];
    for (std::size_t ch = 0; ch < c; ++ch)
      for (std::size_t i = 0; i < kh; ++i)
        for (std::size_t j = 0; j < kw; ++j) {
          double* row = col.data() + ((ch * kh + i) * kw + j) * hw_out;
          const double* plane = xv.data() + (b * c + ch) * h * w;
          for (std::size_t oy = 0; oy < ho; ++oy) {
            const std::ptrdiff_t iy = static_cast<std::ptrdiff_t>(oy * stride + i) - static_cast<std::ptrdiff_t>(padding);
            for (std::size_t ox = 0; ox < wo; ++ox) {
              const std::ptrdiff_t ix = static_cast<std::ptrdiff_t>(ox * stride + j) - static_cast<std::ptrdiff_t>(padding);
              const bool inside = iy >= 0 && ix >= 0 && iy < static_cast<std::ptrdiff_t>(h) &&
                                  ix < static_cast<std::ptrdiff_t>(w);
              row[oy * wo + ox] = inside ? plane[iy * static_cast<std::ptrdiff_t>(w) + ix] : 0.0;
            }
          }
        }
  }

  std::vector<double> out(n * f * hw_out);
  ConstMapMat k(kernel.data().data(), f, ckk);
  for (std::size_t b = 0; b < n; ++b) MapMat(out.data() + b * f * hw_out, f, hw_out).noalias() = k * (*cols)[b];
  Tensor y = Tensor::from({n, f, ho, wo}, std::move(out), tape.wants({&input, &kernel}));

  if (y.requires_grad()) {
    Data xd = input.impl(), kd = kernel.impl(), yd = y.impl();
    tape.record(OpKind::Conv2d, {&input, &kernel}, y,
                [=] {
                  ConstMapMat kmat(kd->value.data(), f, ckk);
                  for (std::size_t b = 0; b < n; ++b) {
                    ConstMapMat gy(yd->grad.data() + b * f * hw_out, f, hw_out);
                    if (kd->requires_grad) MapMat(kd->grad.data(), f, ckk).noalias() += gy * (*cols)[b].transpose();
                    if (!xd->requires_grad) continue;
                    RowMat gcol = kmat.transpose() * gy;
                    for (std::size_t ch = 0; ch < c; ++ch)
                      for (std::size_t i = 0; i < kh; ++i)
                        for (std::size_t j = 0; j < kw; ++j) {
                          const double* row = gcol.data() + ((ch * kh + i) * kw + j) * hw_out;
                          double* plane = xd->grad.data() + (b * c + ch) * h * w;
                          for (std::size_t oy = 0; oy < ho; ++oy) {
                            const std::ptrdiff_t iy = static_cast<std::ptrdiff_t>(oy * stride + i) - static_cast<std::ptrdiff_t>(padding);
                            if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(h)) continue;
                            for (std::size_t ox = 0; ox < wo; ++ox) {
                              const std::ptrdiff_t ix = static_cast<std::ptrdiff_t>(ox * stride + j) - static_cast<std::ptrdiff_t>(padding);
                              if (ix < 0 || ix >= static_cast<std::ptrdiff_t>(w)) continue;
                              plane[iy * static_cast<std::ptrdiff_t>(w) + ix] += row[oy * wo + ox];
                            }
                          }
                        }
                  }
                });
  }
  return y;
}

/// Adds bias[f] to every element of channel f. input [N,F,H,W], bias [F].
inline Tensor channel_bias(Tape& tape, const Tensor& input, const Tensor& bias) {
  using namespace detail;
  require_rank(input, 4, "channel_bias");
  require_rank(bias, 1, "channel_bias");
  const std::size_t n = input.dim(0), f = input.dim(1), hw = input.dim(2) * input.dim(3);
  if (bias.dim(0) != f) throw ShapeError("channel_bias: bias length does not match channels");
  std::vector<double> out(input.data().begin(), input.data().end());
  for (std::size_t b = 0; b < n; ++b)
    for (std::size_t ch = 0; ch < f; ++ch)
      for (std::size_t i = 0; i < hw; ++i) out[(b * f + ch) * hw + i] += bias[ch];
  Tensor y = Tensor::from(input.shape(), std::move(out), tape.wants({&input, &bias}));
  if (y.requires_grad()) {
    Data xd = input.impl(), bd = bias.impl(), yd = y.impl();
    tape.record(OpKind::ChannelBias, {&input, &bias}, y, [=] {
      for (std::size_t b = 0; b < n; ++b)
        for (std::size_t ch = 0; ch < f; ++ch)
          for (std::size_t i = 0; i < hw; ++i) {
            const std::size_t k = (b * f + ch) * hw + i;
            if (xd->requires_grad) xd->grad[k] += yd->grad[k];
            if (bd->requires_grad) bd->grad[ch] += yd->grad[k];
          }
    });
  }
  return y;
}

inline Tensor leaky_relu(Tape& tape, const Tensor& x, double slope) {
  if (!(slope >= 0.0 && slope < 1.0)) throw ContractError("leaky_relu: slope must lie in [0,1)");
  return detail::unary(
      tape, OpKind::LeakyRelu, x, [slope](double v) { return v > 0.0 ? v : slope * v; },
      [slope](double v) { return v > 0.0 ? 1.0 : slope; });
}

/// Bilinear upsampling by an integer factor, sample centres at (i+0.5)/f-0.5.
inline Tensor upsample_bilinear(Tape& tape, const Tensor& input, std::size_t factor) {
  using namespace detail;
  require_rank(input, 4, "upsample_bilinear");
  if (factor < 1) throw ContractError("upsample_bilinear: factor must be >= 1");
  const std::size_t n = input.dim(0), c = input.dim(1), h = input.dim(2), w = input.dim(3);
  const std::size_t oh = h * factor, ow = w * factor;
  auto ty = std::make_shared<Interp1d>(upsample_table(h, factor));
  auto tx = std::make_shared<Interp1d>(upsample_table(w, factor));
  std::vector<double> out(n * c * oh * ow);
  auto xv = input.data();
  for (std::size_t p = 0; p < n * c; ++p) {
    const double* ip = xv.data() + p * h * w;
    double* op = out.data() + p * oh * ow;
    for (std::size_t oy = 0; oy < oh; ++oy) {
      const double fy = ty->frac[oy];
      const double* r0 = ip + ty->i0[oy] * w;
      const double* r1 = ip + ty->i1[oy] * w;
      for (std::size_t ox = 0; ox < ow; ++ox) {
        const double fx = tx->frac[ox];
        const std::size_t x0 = tx->i0[ox], x1 = tx->i1[ox];
        op[oy * ow + ox] = (1 - fy) * ((1 - fx) * r0[x0] + fx * r0[x1]) + fy * ((1 - fx) * r1[x0] + fx * r1[x1]);
      }
    }
  }
  Tensor y = Tensor::from({n, c, oh, ow}, std::move(out), tape.wants({&input}));
  if (y.requires_grad()) {
    Data xd = input.impl(), yd = y.impl();
    tape.record(OpKind::UpsampleBilinear, {&input}, y, [=] {
      for (std::size_t p = 0; p < n * c; ++p) {
        double* gp = xd->grad.data() + p * h * w;
        const double* gy = yd->grad.data() + p * oh * ow;
        for (std::size_t oy = 0; oy < oh; ++oy) {
          const double fy = ty->frac[oy];
          double* r0 = gp + ty->i0[oy] * w;
          double* r1 = gp + ty->i1[oy] * w;
          for (std::size_t ox = 0; ox < ow; ++ox) {
            const double g = gy[oy * ow + ox], fx = tx->frac[ox];
            const std::size_t x0 = tx->i0[ox], x1 = tx->i1[ox];
            r0[x0] += g * (1 - fy) * (1 - fx);
            r0[x1] += g * (1 - fy) * fx;
            r1[x0] += g * fy * (1 - fx);
            r1[x1] += g * fy * fx;
          }
        }
      }
    });
  }
  return y;
}

/// Bilinear sampling of input [N,C,H,W] at absolute voxel coordinates
/// coords [N,Ho,Wo,2] (x along W, y along H). Out-of-range samples take the
/// nearest border value. Differentiable with respect to input and coords.
inline Tensor grid_sample(Tape& tape, const Tensor& input, const Tensor& coords) {
  using namespace detail;
  require_rank(input, 4, "grid_sample");
  require_rank(coords, 4, "grid_sample");
  const std::size_t n = input.dim(0), c = input.dim(1), h = input.dim(2), w = input.dim(3);
  if (coords.dim(0) != n || coords.dim(3) != 2)
    throw ShapeError("grid_sample: coords must be [N,H,W,2], got " + shape_str(coords.shape()));
  const std::size_t oh = coords.dim(1), ow = coords.dim(2);

  struct Site {
    std::size_t xa, xb, ya, yb;
    double fx, fy;
  };
  auto sites = std::make_shared<std::vector<Site>>(n * oh * ow);
  auto cv = coords.data();
  const auto clampi = [](double v, std::size_t hi) {
    if (v <= 0.0) return std::size_t{0};
    if (v >= static_cast<double>(hi)) return hi;
    return static_cast<std::size_t>(v);
  };
  for (std::size_t k = 0; k < sites->size(); ++k) {
    const double x = cv[2 * k], y = cv[2 * k + 1];
    const double x0 = std::floor(x), y0 = std::floor(y);
    (*sites)[k] = Site{clampi(x0, w - 1), clampi(x0 + 1, w - 1), clampi(y0, h - 1), clampi(y0 + 1, h - 1),
                       x - x0, y - y0};
  }

  std::vector<double> out(n * c * oh * ow);
  auto xv = input.data();
  for (std::size_t b = 0; b < n; ++b)
    for (std::size_t ch = 0; ch < c; ++ch) {
      const double* ip = xv.data() + (b * c + ch) * h * w;
      double* op = out.data() + (b * c + ch) * oh * ow;
      for (std::size_t k = 0; k < oh * ow; ++k) {
        const Site& s = (*sites)[b * oh * ow + k];
        op[k] = (1 - s.fy) * ((1 - s.fx) * ip[s.ya * w + s.xa] + s.fx * ip[s.ya * w + s.xb]) +
                s.fy * ((1 - s.fx) * ip[s.yb * w + s.xa] + s.fx * ip[s.yb * w + s.xb]);
      }
    }
  Tensor y = Tensor::from({n, c, oh, ow}, std::move(out), tape.wants({&input, &coords}));
  if (y.requires_grad()) {
    Data xd = input.impl(), cd = coords.impl(), yd = y.impl();
    tape.record(OpKind::GridSample, {&input, &coords}, y, [=] {
      for (std::size_t b = 0; b < n; ++b)
        for (std::size_t ch = 0; ch < c; ++ch) {
          const double* ip = xd->value.data() + (b * c + ch) * h * w;
          const double* gy = yd->grad.data() + (b * c + ch) * oh * ow;
          for (std::size_t k = 0; k < oh * ow; ++k) {
            const std::size_t site = b * oh * ow + k;
            const Site& s = (*sites)[site];
            const double g = gy[k];
            if (xd->requires_grad) {
              double* gp = xd->grad.data() + (b * c + ch) * h * w;
              gp[s.ya * w + s.xa] += g * (1 - s.fy) * (1 - s.fx);
              gp[s.ya * w + s.xb] += g * (1 - s.fy) * s.fx;
              gp[s.yb * w + s.xa] += g * s.fy * (1 - s.fx);
              gp[s.yb * w + s.xb] += g * s.fy * s.fx;
            }
            if (cd->requires_grad) {
              const double v00 = ip[s.ya * w + s.xa], v01 = ip[s.ya * w + s.xb];
              const double v10 = ip[s.yb * w + s.xa], v11 = ip[s.yb * w + s.xb];
              cd->grad[2 * site] += g * ((1 - s.fy) * (v01 - v00) + s.fy * (v11 - v10));
              cd->grad[2 * site + 1] += g * ((1 - s.fx) * (v10 - v00) + s.fx * (v11 - v01));
            }
          }
        }
    });
  }
  return y;
}

/// Concatenates [N,Ca,H,W] and [N,Cb,H,W] along channels.
inline Tensor concat_channels(Tape& tape, const Tensor& a, const Tensor& b) {
  using namespace detail;
  require_rank(a, 4, "concat_channels");
  require_rank(b, 4, "concat_channels");
  if (a.dim(0) != b.dim(0) || a.dim(2) != b.dim(2) || a.dim(3) != b.dim(3))
    throw ShapeError("concat_channels: " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
  const std::size_t n = a.dim(0), ca = a.dim(1), cb = b.dim(1), hw = a.dim(2) * a.dim(3);
  std::vector<double> out;
  out.reserve(n * (ca + cb) * hw);
  for (std::size_t i = 0; i < n; ++i) {
    auto av = a.data().subspan(i * ca * hw, ca * hw);
    auto bv = b.data().subspan(i * cb * hw, cb * hw);
    out.insert(out.end(), av.begin(), av.end());
    out.insert(out.end(), bv.begin(), bv.end());
  }
  Tensor y = Tensor::from({n, ca + cb, a.dim(2), a.dim(3)}, std::move(out), tape.wants({&a, &b}));
  if (y.requires_grad()) {
    Data ad = a.impl(), bd = b.impl(), yd = y.impl();
    tape.record(OpKind::ConcatChannels, {&a, &b}, y, [=] {
      for (std::size_t i = 0; i < n; ++i) {
        const double* g = yd->grad.data() + i * (ca + cb) * hw;
        if (ad->requires_grad)
          for (std::size_t k = 0; k < ca * hw; ++k) ad->grad[i * ca * hw + k] += g[k];
        if (bd->requires_grad)
          for (std::size_t k = 0; k < cb * hw; ++k) bd->grad[i * cb * hw + k] += g[ca * hw + k];
      }
    });
  }
  return y;
}

/// Displacement field [N,2,H,W] (x then y, voxel units) to sampling
/// coordinates [N,H,W,2] = identity grid + displacement.
inline Tensor displacement_to_coords(Tape& tape, const Tensor& dvf) {
  using namespace detail;
  require_rank(dvf, 4, "displacement_to_coords");
  if (dvf.dim(1) != 2) throw ShapeError("displacement_to_coords: expected 2 components");
  const std::size_t n = dvf.dim(0), h = dvf.dim(2), w = dvf.dim(3), hw = h * w;
  std::vector<double> out(n * hw * 2);
  auto u = dvf.data();
  for (std::size_t b = 0; b < n; ++b)
    for (std::size_t y = 0; y < h; ++y)
      for (std::size_t x = 0; x < w; ++x) {
        const std::size_t k = y * w + x;
        out[2 * (b * hw + k)] = static_cast<double>(x) + u[(b * 2) * hw + k];
        out[2 * (b * hw + k) + 1] = static_cast<double>(y) + u[(b * 2 + 1) * hw + k];
      }
  Tensor coords = Tensor::from({n, h, w, 2}, std::move(out), tape.wants({&dvf}));
  if (coords.requires_grad()) {
    Data ud = dvf.impl(), cd = coords.impl();
    tape.record(OpKind::DisplacementToCoords, {&dvf}, coords, [=] {
      for (std::size_t b = 0; b < n; ++b)
        for (std::size_t k = 0; k < hw; ++k) {
          ud->grad[(b * 2) * hw + k] += cd->grad[2 * (b * hw + k)];
          ud->grad[(b * 2 + 1) * hw + k] += cd->grad[2 * (b * hw + k) + 1];
        }
    });
  }
  return coords;
}

/// Zero-padded window sum over the spatial axes of [N,C,H,W]; window is odd.
inline Tensor box_sum(Tape& tape, const Tensor& x, std::size_t window) {
  using namespace detail;
  require_rank(x, 4, "box_sum");
  if (window % 2 == 0) throw ShapeError("box_sum: window must be odd");
  Tensor y = Tensor::from(x.shape(), box_sum_values(x.data(), x.shape(), window), tape.wants({&x}));
  if (y.requires_grad()) {
    Data xd = x.impl(), yd = y.impl();
    const Shape s = x.shape();
    tape.record(OpKind::BoxSum, {&x}, y, [=] {
      // The symmetric zero-padded window is its own adjoint.
      auto g = box_sum_values(yd->grad, s, window);
      for (std::size_t i = 0; i < g.size(); ++i) xd->grad[i] += g[i];
    });
  }
  return y;
}

inline Tensor add(Tape& tape, const Tensor& a, const Tensor& b) {
  using namespace detail;
  require_same_shape(a, b, "add");
  std::vector<double> out(a.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a[i] + b[i];
  Tensor y = Tensor::from(a.shape(), std::move(out), tape.wants({&a, &b}));
  if (y.requires_grad()) {
    Data ad = a.impl(), bd = b.impl(), yd = y.impl();
    tape.record(OpKind::Add, {&a, &b}, y, [=] {
      for (std::size_t i = 0; i < yd->grad.size(); ++i) {
        if (ad->requires_grad) ad->grad[i] += yd->grad[i];
        if (bd->requires_grad) bd->grad[i] += yd->grad[i];
      }
    });
  }
  return y;
}

inline Tensor sub(Tape& tape, const Tensor& a, const Tensor& b) {
  using namespace detail;
  require_same_shape(a, b, "sub");
  std::vector<double> out(a.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a[i] - b[i];
  Tensor y = Tensor::from(a.shape(), std::move(out), tape.wants({&a, &b}));
  if (y.requires_grad()) {
    Data ad = a.impl(), bd = b.impl(), yd = y.impl();
    tape.record(OpKind::Sub, {&a, &b}, y, [=] {
      for (std::size_t i = 0; i < yd->grad.size(); ++i) {
        if (ad->requires_grad) ad->grad[i] += yd->grad[i];
        if (bd->requires_grad) bd->grad[i] -= yd->grad[i];
      }
    });
  }
  return y;
}

inline Tensor mul(Tape& tape, const Tensor& a, const Tensor& b) {
  using namespace detail;
  require_same_shape(a, b, "mul");
  std::vector<double> out(a.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a[i] * b[i];
  Tensor y = Tensor::from(a.shape(), std::move(out), tape.wants({&a, &b}));
  if (y.requires_grad()) {
    Data ad = a.impl(), bd = b.impl(), yd = y.impl();
    tape.record(OpKind::Mul, {&a, &b}, y, [=] {
      for (std::size_t i = 0; i < yd->grad.size(); ++i) {
        if (ad->requires_grad) ad->grad[i] += yd->grad[i] * bd->value[i];
        if (bd->requires_grad) bd->grad[i] += yd->grad[i] * ad->value[i];
      }
    });
  }
  return y;
}

/// Elementwise a / b. Division by zero yields inf/nan, reported by
/// Tape::unhealthy_ops.
inline Tensor div(Tape& tape, const Tensor& a, const Tensor& b) {
  using namespace detail;
  require_same_shape(a, b, "div");
  std::vector<double> out(a.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a[i] / b[i];
  Tensor y = Tensor::from(a.shape(), std::move(out), tape.wants({&a, &b}));
  if (y.requires_grad()) {
    Data ad = a.impl(), bd = b.impl(), yd = y.impl();
    tape.record(OpKind::Div, {&a, &b}, y, [=] {
      for (std::size_t i = 0; i < yd->grad.size(); ++i) {
        const double bv = bd->value[i];
        if (ad->requires_grad) ad->grad[i] += yd->grad[i] / bv;
        if (bd->requires_grad) bd->grad[i] -= yd->grad[i] * ad->value[i] / (bv * bv);
      }
    });
  }
  return y;
}

inline Tensor square(Tape& tape, const Tensor& x) {
  return detail::unary(
      tape, OpKind::Square, x, [](double v) { return v * v; }, [](double v) { return 2.0 * v; });
}

inline Tensor scale(Tape& tape, const Tensor& x, double factor) {
  return detail::unary(
      tape, OpKind::Scale, x, [factor](double v) { return factor * v; }, [factor](double) { return factor; });
}

inline Tensor add_scalar(Tape& tape, const Tensor& x, double c) {
  return detail::unary(
      tape, OpKind::AddScalar, x, [c](double v) { return v + c; }, [](double) { return 1.0; });
}

/// Forward difference along an axis: out[i] = x[i+1] - x[i]; that axis
/// shrinks by one.
inline Tensor diff(Tape& tape, const Tensor& x, std::size_t axis) {
  using namespace detail;
  if (axis >= x.rank()) throw ShapeError("diff: axis out of range for " + shape_str(x.shape()));
  if (x.dim(axis) < 2) throw ShapeError("diff: axis needs at least two entries");
  const AxisLayout l = axis_layout(x.shape(), axis);
  Shape os = x.shape();
  os[axis] -= 1;
  std::vector<double> out(shape_numel(os));
  for (std::size_t o = 0; o < l.outer; ++o)
    for (std::size_t i = 0; i + 1 < l.n; ++i)
      for (std::size_t k = 0; k < l.inner; ++k)
        out[(o * (l.n - 1) + i) * l.inner + k] = x[(o * l.n + i + 1) * l.inner + k] - x[(o * l.n + i) * l.inner + k];
  Tensor y = Tensor::from(std::move(os), std::move(out), tape.wants({&x}));
  if (y.requires_grad()) {
    Data xd = x.impl(), yd = y.impl();
    tape.record(OpKind::Diff, {&x}, y, [=] {
      for (std::size_t o = 0; o < l.outer; ++o)
        for (std::size_t i = 0; i + 1 < l.n; ++i)
          for (std::size_t k = 0; k < l.inner; ++k) {
            const double g = yd->grad[(o * (l.n - 1) + i) * l.inner + k];
            xd->grad[(o * l.n + i + 1) * l.inner + k] += g;
            xd->grad[(o * l.n + i) * l.inner + k] -= g;
          }
    });
  }
  return y;
}

inline Tensor reduce_sum(Tape& tape, const Tensor& x) {
  using namespace detail;
  double s = 0.0;
  for (double v : x.data()) s += v;
  Tensor y = Tensor::from({}, {s}, tape.wants({&x}));
  if (y.requires_grad()) {
    Data xd = x.impl(), yd = y.impl();
    tape.record(OpKind::ReduceSum, {&x}, y, [=] {
      for (double& g : xd->grad) g += yd->grad[0];
    });
  }
  return y;
}

inline Tensor reduce_mean(Tape& tape, const Tensor& x) {
  using namespace detail;
  double s = 0.0;
  for (double v : x.data()) s += v;
  const double inv = 1.0 / static_cast<double>(x.numel());
  Tensor y = Tensor::from({}, {s * inv}, tape.wants({&x}));
  if (y.requires_grad()) {
    Data xd = x.impl(), yd = y.impl();
    tape.record(OpKind::ReduceMean, {&x}, y, [=] {
      for (double& g : xd->grad) g += yd->grad[0] * inv;
    });
  }
  return y;
}

/// Per-channel sum over H and W: [N,C,H,W] -> [N,C].
inline Tensor sum_spatial(Tape& tape, const Tensor& x) {
  using namespace detail;
  require_rank(x, 4, "sum_spatial");
  const std::size_t nc = x.dim(0) * x.dim(1), hw = x.dim(2) * x.dim(3);
  std::vector<double> out(nc, 0.0);
  for (std::size_t p = 0; p < nc; ++p)
    for (std::size_t k = 0; k < hw; ++k) out[p] += x[p * hw + k];
  Tensor y = Tensor::from({x.dim(0), x.dim(1)}, std::move(out), tape.wants({&x}));
  if (y.requires_grad()) {
    Data xd = x.impl(), yd = y.impl();
    tape.record(OpKind::SumSpatial, {&x}, y, [=] {
      for (std::size_t p = 0; p < nc; ++p)
        for (std::size_t k = 0; k < hw; ++k) xd->grad[p * hw + k] += yd->grad[p];
    });
  }
  return y;
}

}  // namespace modir::ops

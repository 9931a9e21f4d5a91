#pragma once

// Spatial primitives on [channels, height, width] feature maps.

#include <algorithm>
#include <cmath>
#include <memory>
#include <string>
#include <vector>

#include "iron/numerics/ops.hpp"

namespace iron {

namespace detail {
inline void require_odd_kernel(std::size_t k, const char* what) {
  if (k % 2 == 0) throw ShapeError(std::string(what) + ": kernel size must be odd, got " + std::to_string(k));
}
}  // namespace detail

namespace detail {
// Visits every in-image (column row, output pixel, input pixel) triple of an
// im2col layout with zero padding k/2; rows run over (c, ky, kx).
template <typename Fn>
void for_each_im2col_span(std::size_t cin, std::size_t h, std::size_t w, std::size_t k, std::size_t stride,
                          std::size_t oh, std::size_t ow, Fn&& fn) {
  const long pad = static_cast<long>(k / 2), H = static_cast<long>(h), W = static_cast<long>(w);
  const long S = static_cast<long>(stride);
  for (std::size_t c = 0; c < cin; ++c)
    for (std::size_t ky = 0; ky < k; ++ky)
      for (std::size_t kx = 0; kx < k; ++kx) {
        const std::size_t row = (c * k + ky) * k + kx;
        // Output columns whose tap lands inside the image: 0 <= ox*S + kx - pad < W.
        const long off = static_cast<long>(kx) - pad;
        const long lo = off >= 0 ? 0 : (-off + S - 1) / S;
        const long hi = std::min(static_cast<long>(ow), (W - off + S - 1) / S);
        if (lo >= hi) continue;
        for (std::size_t oy = 0; oy < oh; ++oy) {
          const long sy = static_cast<long>(oy) * S + static_cast<long>(ky) - pad;
          if (sy < 0 || sy >= H) continue;
          fn(row * oh * ow + oy * ow + std::size_t(lo), (c * h + std::size_t(sy)) * w + std::size_t(lo * S + off),
             std::size_t(hi - lo));
        }
      }
}
}  // namespace detail

/// Dense 2D convolution with zero padding k/2 ("same" at stride 1). weight is
/// [c_out, c_in, k, k]; the output is [c_out, ceil(h/stride), ceil(w/stride)].
template <typename T>
Var<T> conv2d(const Var<T>& x, const Var<T>& weight, std::size_t stride = 1) {
  expect_rank(x.shape(), 3, "conv2d input");
  expect_rank(weight.shape(), 4, "conv2d weight");
  const std::size_t cin = x.dim(0), h = x.dim(1), w = x.dim(2);
  const std::size_t cout = weight.dim(0), k = weight.dim(2);
  if (weight.dim(1) != cin) throw ShapeError("conv2d: channel mismatch");
  if (weight.dim(3) != k) throw ShapeError("conv2d: kernel must be square");
  if (stride == 0) throw ShapeError("conv2d: stride must be positive");
  detail::require_odd_kernel(k, "conv2d");
  const std::size_t oh = (h + stride - 1) / stride, ow = (w + stride - 1) / stride;
  const std::size_t ohw = oh * ow, ckk = cin * k * k;

  auto cols = std::make_shared<std::vector<T>>(ckk * ohw, T(0));
  const T* in = x.value().data();
  detail::for_each_im2col_span(cin, h, w, k, stride, oh, ow, [&](std::size_t dst, std::size_t src, std::size_t n) {
    T* d = cols->data() + dst;
    if (stride == 1)
      std::copy(in + src, in + src + n, d);
    else
      for (std::size_t i = 0; i < n; ++i) d[i] = in[src + i * stride];
  });
  Tensor<T> out({cout, oh, ow});
  blas::gemm<T>(false, false, int(cout), int(ohw), int(ckk), T(1), weight.value().data(), int(ckk), cols->data(),
                int(ohw), T(0), out.data(), int(ohw));
  return record(std::move(out), {x, weight}, [=](Node<T>& self) {
    auto& px = *self.parents[0];
    auto& pw = *self.parents[1];
    if (pw.requires_grad)
      blas::gemm<T>(false, true, int(cout), int(ckk), int(ohw), T(1), self.grad.data(), int(ohw), cols->data(),
                    int(ohw), T(1), pw.grad_buffer().data(), int(ckk));
    if (px.requires_grad) {
      std::vector<T> dcols(ckk * ohw);
      blas::gemm<T>(true, false, int(ckk), int(ohw), int(cout), T(1), pw.value.data(), int(ckk), self.grad.data(),
                    int(ohw), T(0), dcols.data(), int(ohw));
      T* g = px.grad_buffer().data();
      detail::for_each_im2col_span(cin, h, w, k, stride, oh, ow, [&](std::size_t src, std::size_t dst, std::size_t n) {
        const T* r = dcols.data() + src;
        for (std::size_t i = 0; i < n; ++i) g[dst + i * stride] += r[i];
      });
    }
  });
}

/// Normalizes each channel of a [c, h, w] map over its own spatial extent, then
/// applies a per-channel scale gamma[c] and shift beta[c].
template <typename T>
Var<T> instance_norm(const Var<T>& x, const Var<T>& gamma, const Var<T>& beta, T eps = T(1e-5)) {
  expect_rank(x.shape(), 3, "instance_norm input");
  const std::size_t c = x.dim(0), n = x.dim(1) * x.dim(2);
  if (gamma.numel() != c || beta.numel() != c) throw ShapeError("instance_norm: affine size mismatch");
  auto xhat = std::make_shared<std::vector<T>>(x.numel());
  auto rstd = std::make_shared<std::vector<T>>(c);
  Tensor<T> out(x.shape());
  for (std::size_t ch = 0; ch < c; ++ch) {
    const T* in = x.value().data() + ch * n;
    T mu = T(0);
    for (std::size_t j = 0; j < n; ++j) mu += in[j];
    mu /= static_cast<T>(n);
    T var = T(0);
    for (std::size_t j = 0; j < n; ++j) var += (in[j] - mu) * (in[j] - mu);
    var /= static_cast<T>(n);
    const T rs = T(1) / std::sqrt(var + eps), g = gamma.value()[ch], b = beta.value()[ch];
    (*rstd)[ch] = rs;
    T* xh = xhat->data() + ch * n;
    T* o = out.data() + ch * n;
    for (std::size_t j = 0; j < n; ++j) {
      xh[j] = (in[j] - mu) * rs;
      o[j] = xh[j] * g + b;
    }
  }
  return record(std::move(out), {x, gamma, beta}, [=](Node<T>& self) {
    auto& px = *self.parents[0];
    auto& pg = *self.parents[1];
    auto& pb = *self.parents[2];
    for (std::size_t ch = 0; ch < c; ++ch) {
      const T* dy = self.grad.data() + ch * n;
      const T* xh = xhat->data() + ch * n;
      T sum_dy = T(0), sum_dy_xh = T(0);
      for (std::size_t j = 0; j < n; ++j) {
        sum_dy += dy[j];
        sum_dy_xh += dy[j] * xh[j];
      }
      if (pg.requires_grad) pg.grad_buffer()[ch] += sum_dy_xh;
      if (pb.requires_grad) pb.grad_buffer()[ch] += sum_dy;
      if (px.requires_grad) {
        const T k = pg.value[ch] * (*rstd)[ch];
        const T m1 = sum_dy / static_cast<T>(n), m2 = sum_dy_xh / static_cast<T>(n);
        T* g = px.grad_buffer().data() + ch * n;
        for (std::size_t j = 0; j < n; ++j) g[j] += k * (dy[j] - m1 - xh[j] * m2);
      }
    }
  });
}

/// 1x1 convolution with weight [c_out, c_in].
template <typename T>
Var<T> conv1x1(const Var<T>& x, const Var<T>& weight) {
  expect_rank(x.shape(), 3, "conv1x1 input");
  expect_rank(weight.shape(), 2, "conv1x1 weight");
  if (weight.dim(1) != x.dim(0))
    throw ShapeError("conv1x1: channel mismatch, weight " + to_string(weight.shape()) + " input " +
                     to_string(x.shape()));
  const std::size_t h = x.dim(1), w = x.dim(2);
  auto flat = reshape(x, {x.dim(0), h * w});
  return reshape(matmul(weight, flat), {weight.dim(0), h, w});
}

/// Per-channel 2D convolution, stride 1, zero "same" padding. kernel is [c, k, k].
template <typename T>
Var<T> depthwise_conv2d(const Var<T>& x, const Var<T>& kernel) {
  expect_rank(x.shape(), 3, "depthwise_conv2d input");
  expect_rank(kernel.shape(), 3, "depthwise_conv2d kernel");
  const std::size_t c = x.dim(0), h = x.dim(1), w = x.dim(2), k = kernel.dim(1);
  if (kernel.dim(0) != c)
    throw ShapeError("depthwise_conv2d: channel mismatch, kernel " + to_string(kernel.shape()) + " input " +
                     to_string(x.shape()));
  if (kernel.dim(2) != k) throw ShapeError("depthwise_conv2d: kernel must be square");
  detail::require_odd_kernel(k, "depthwise_conv2d");
  const long pad = static_cast<long>(k / 2);
  const long H = static_cast<long>(h), W = static_cast<long>(w);

  // Visits every (output, input, tap) triple inside the image.
  auto for_each_tap = [=](auto&& fn) {
    for (std::size_t ch = 0; ch < c; ++ch)
      for (long y = 0; y < H; ++y)
        for (std::size_t ky = 0; ky < k; ++ky) {
          const long sy = y + static_cast<long>(ky) - pad;
          if (sy < 0 || sy >= H) continue;
          for (std::size_t kx = 0; kx < k; ++kx) {
            const long lo = std::max(0L, pad - static_cast<long>(kx));
            const long hi = std::min(W, W + pad - static_cast<long>(kx));
            const std::size_t tap = (ch * k + ky) * k + kx;
            for (long xx = lo; xx < hi; ++xx) {
              const long sx = xx + static_cast<long>(kx) - pad;
              fn((ch * h + std::size_t(y)) * w + std::size_t(xx), (ch * h + std::size_t(sy)) * w + std::size_t(sx),
                 tap);
            }
          }
        }
  };

  Tensor<T> out({c, h, w});
  const T* in = x.value().data();
  const T* ker = kernel.value().data();
  for_each_tap([&](std::size_t o, std::size_t i, std::size_t t) { out[o] += ker[t] * in[i]; });
  return record(std::move(out), {x, kernel}, [for_each_tap](Node<T>& self) {
    auto& px = *self.parents[0];
    auto& pk = *self.parents[1];
    const T* dy = self.grad.data();
    if (px.requires_grad) {
      T* gx = px.grad_buffer().data();
      const T* kv = pk.value.data();
      for_each_tap([&](std::size_t o, std::size_t i, std::size_t t) { gx[i] += kv[t] * dy[o]; });
    }
    if (pk.requires_grad) {
      T* gk = pk.grad_buffer().data();
      const T* xv = px.value.data();
      for_each_tap([&](std::size_t o, std::size_t i, std::size_t t) { gk[t] += xv[i] * dy[o]; });
    }
  });
}

/// Per-channel spatial convolution followed by 1x1 pointwise mixing.
/// dw_kernel is [c_in, k, k], pw_kernel is [c_out, c_in].
template <typename T>
Var<T> depthwise_separable_conv(const Var<T>& x, const Var<T>& dw_kernel, const Var<T>& pw_kernel) {
  return conv1x1(depthwise_conv2d(x, dw_kernel), pw_kernel);
}

/// Transposed convolution with kernel 2 and stride 2; weight is [c_in, c_out, 2, 2].
/// Output is [c_out, 2h, 2w].
template <typename T>
Var<T> conv_transpose2x2(const Var<T>& x, const Var<T>& weight) {
  expect_rank(x.shape(), 3, "conv_transpose2x2 input");
  expect_rank(weight.shape(), 4, "conv_transpose2x2 weight");
  const std::size_t cin = x.dim(0), h = x.dim(1), w = x.dim(2), cout = weight.dim(1);
  if (weight.dim(0) != cin || weight.dim(2) != 2 || weight.dim(3) != 2)
    throw ShapeError("conv_transpose2x2: weight must be [c_in, c_out, 2, 2], got " + to_string(weight.shape()));
  const std::size_t hw = h * w, c4 = cout * 4;
  std::vector<T> tmp(c4 * hw);
  blas::gemm<T>(true, false, int(c4), int(hw), int(cin), T(1), weight.value().data(), int(c4), x.value().data(),
                int(hw), T(0), tmp.data(), int(hw));
  Tensor<T> out({cout, 2 * h, 2 * w});
  const std::size_t ow = 2 * w;
  for (std::size_t co = 0; co < cout; ++co)
    for (std::size_t a = 0; a < 2; ++a)
      for (std::size_t b = 0; b < 2; ++b) {
        const T* src = tmp.data() + (co * 4 + a * 2 + b) * hw;
        for (std::size_t i = 0; i < h; ++i)
          for (std::size_t j = 0; j < w; ++j) out[(co * 2 * h + 2 * i + a) * ow + 2 * j + b] = src[i * w + j];
      }
  return record(std::move(out), {x, weight}, [=](Node<T>& self) {
    auto& px = *self.parents[0];
    auto& pw = *self.parents[1];
    std::vector<T> dtmp(c4 * hw);
    for (std::size_t co = 0; co < cout; ++co)
      for (std::size_t a = 0; a < 2; ++a)
        for (std::size_t b = 0; b < 2; ++b) {
          T* dst = dtmp.data() + (co * 4 + a * 2 + b) * hw;
          for (std::size_t i = 0; i < h; ++i)
            for (std::size_t j = 0; j < w; ++j) dst[i * w + j] = self.grad[(co * 2 * h + 2 * i + a) * ow + 2 * j + b];
        }
    if (px.requires_grad)
      blas::gemm<T>(false, false, int(cin), int(hw), int(c4), T(1), pw.value.data(), int(c4), dtmp.data(), int(hw),
                    T(1), px.grad_buffer().data(), int(hw));
    if (pw.requires_grad)
      blas::gemm<T>(false, true, int(cin), int(c4), int(hw), T(1), px.value.data(), int(hw), dtmp.data(), int(hw),
                    T(1), pw.grad_buffer().data(), int(c4));
  });
}

namespace detail {
/// Half-pixel-centre linear interpolation taps along one axis.
struct LinearTaps {
  std::vector<std::size_t> lo, hi;
  std::vector<double> frac;
};

inline LinearTaps linear_taps(std::size_t in, std::size_t out) {
  LinearTaps t;
  t.lo.resize(out);
  t.hi.resize(out);
  t.frac.resize(out);
  const double scale = static_cast<double>(in) / static_cast<double>(out);
  for (std::size_t i = 0; i < out; ++i) {
    double src = (static_cast<double>(i) + 0.5) * scale - 0.5;
    if (src < 0) src = 0;
    auto i0 = static_cast<std::size_t>(std::floor(src));
    if (i0 > in - 1) i0 = in - 1;
    t.lo[i] = i0;
    t.hi[i] = std::min(i0 + 1, in - 1);
    t.frac[i] = src - static_cast<double>(i0);
  }
  return t;
}

/// [start, end) index range of adaptive pooling bin i.
inline std::pair<std::size_t, std::size_t> pool_range(std::size_t i, std::size_t in, std::size_t out) {
  const std::size_t start = (i * in) / out;
  const std::size_t end = ((i + 1) * in + out - 1) / out;
  return {start, end};
}
}  // namespace detail

/// Bilinear resize of [c, h, w] to [c, out_h, out_w] (half-pixel centres, no corner alignment).
template <typename T>
Var<T> bilinear_resize(const Var<T>& x, std::size_t out_h, std::size_t out_w) {
  expect_rank(x.shape(), 3, "bilinear_resize");
  const std::size_t c = x.dim(0), h = x.dim(1), w = x.dim(2);
  if (out_h == h && out_w == w) return x;
  auto ty = std::make_shared<detail::LinearTaps>(detail::linear_taps(h, out_h));
  auto tx = std::make_shared<detail::LinearTaps>(detail::linear_taps(w, out_w));
  Tensor<T> out({c, out_h, out_w});
  for (std::size_t ch = 0; ch < c; ++ch) {
    const T* src = x.value().data() + ch * h * w;
    T* dst = out.data() + ch * out_h * out_w;
    for (std::size_t i = 0; i < out_h; ++i) {
      const T fy = static_cast<T>(ty->frac[i]);
      const T* r0 = src + ty->lo[i] * w;
      const T* r1 = src + ty->hi[i] * w;
      for (std::size_t j = 0; j < out_w; ++j) {
        const T fx = static_cast<T>(tx->frac[j]);
        const std::size_t x0 = tx->lo[j], x1 = tx->hi[j];
        const T top = r0[x0] + (r0[x1] - r0[x0]) * fx;
        const T bot = r1[x0] + (r1[x1] - r1[x0]) * fx;
        dst[i * out_w + j] = top + (bot - top) * fy;
      }
    }
  }
  return record(std::move(out), {x}, [=](Node<T>& self) {
    auto& g = self.parents[0]->grad_buffer();
    for (std::size_t ch = 0; ch < c; ++ch) {
      T* dsrc = g.data() + ch * h * w;
      const T* dy = self.grad.data() + ch * out_h * out_w;
      for (std::size_t i = 0; i < out_h; ++i) {
        const T fy = static_cast<T>(ty->frac[i]);
        for (std::size_t j = 0; j < out_w; ++j) {
          const T fx = static_cast<T>(tx->frac[j]);
          const T v = dy[i * out_w + j];
          const std::size_t x0 = tx->lo[j], x1 = tx->hi[j];
          dsrc[ty->lo[i] * w + x0] += v * (T(1) - fy) * (T(1) - fx);
          dsrc[ty->lo[i] * w + x1] += v * (T(1) - fy) * fx;
          dsrc[ty->hi[i] * w + x0] += v * fy * (T(1) - fx);
          dsrc[ty->hi[i] * w + x1] += v * fy * fx;
        }
      }
    }
  });
}

/// Adaptive average pooling of [c, h, w] to [c, bins_h, bins_w].
template <typename T>
Var<T> adaptive_avg_pool(const Var<T>& x, std::size_t bins_h, std::size_t bins_w) {
  expect_rank(x.shape(), 3, "adaptive_avg_pool");
  const std::size_t c = x.dim(0), h = x.dim(1), w = x.dim(2);
  if (bins_h == 0 || bins_w == 0 || bins_h > h || bins_w > w)
    throw ShapeError("adaptive_avg_pool: bins must lie in [1, extent]");
  Tensor<T> out({c, bins_h, bins_w});
  for (std::size_t ch = 0; ch < c; ++ch)
    for (std::size_t by = 0; by < bins_h; ++by) {
      const auto [y0, y1] = detail::pool_range(by, h, bins_h);
      for (std::size_t bx = 0; bx < bins_w; ++bx) {
        const auto [x0, x1] = detail::pool_range(bx, w, bins_w);
        T s = T(0);
        for (std::size_t y = y0; y < y1; ++y)
          for (std::size_t xx = x0; xx < x1; ++xx) s += x.value().at(ch, y, xx);
        out.at(ch, by, bx) = s / static_cast<T>((y1 - y0) * (x1 - x0));
      }
    }
  return record(std::move(out), {x}, [=](Node<T>& self) {
    auto& g = self.parents[0]->grad_buffer();
    for (std::size_t ch = 0; ch < c; ++ch)
      for (std::size_t by = 0; by < bins_h; ++by) {
        const auto [y0, y1] = detail::pool_range(by, h, bins_h);
        for (std::size_t bx = 0; bx < bins_w; ++bx) {
          const auto [x0, x1] = detail::pool_range(bx, w, bins_w);
          const T v = self.grad.at(ch, by, bx) / static_cast<T>((y1 - y0) * (x1 - x0));
          for (std::size_t y = y0; y < y1; ++y)
            for (std::size_t xx = x0; xx < x1; ++xx) g.at(ch, y, xx) += v;
        }
      }
  });
}

/// Splits [c, H, W] into non-overlapping p x p patches: [(H/p)*(W/p), c*p*p],
/// patches in raster order, features ordered (channel, row, col).
template <typename T>
Var<T> patchify(const Var<T>& x, std::size_t p) {
  expect_rank(x.shape(), 3, "patchify");
  const std::size_t c = x.dim(0), H = x.dim(1), W = x.dim(2);
  if (p == 0 || H % p != 0 || W % p != 0)
    throw ShapeError("patchify: " + to_string(x.shape()) + " not divisible by patch size " + std::to_string(p));
  const std::size_t gh = H / p, gw = W / p, f = c * p * p;
  auto index = [=](std::size_t token, std::size_t feat) {
    const std::size_t gy = token / gw, gx = token % gw;
    const std::size_t ch = feat / (p * p), py = (feat / p) % p, px = feat % p;
    return (ch * H + gy * p + py) * W + gx * p + px;
  };
  Tensor<T> out({gh * gw, f});
  for (std::size_t t = 0; t < gh * gw; ++t)
    for (std::size_t j = 0; j < f; ++j) out[t * f + j] = x.value()[index(t, j)];
  return record(std::move(out), {x}, [=](Node<T>& self) {
    auto& g = self.parents[0]->grad_buffer();
    for (std::size_t t = 0; t < gh * gw; ++t)
      for (std::size_t j = 0; j < f; ++j) g[index(t, j)] += self.grad[t * f + j];
  });
}

}  // namespace iron

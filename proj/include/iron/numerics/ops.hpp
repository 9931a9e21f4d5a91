#pragma once

// Core differentiable primitives on Var<T>. Matrices are [rows, cols]; feature
// maps are [channels, height, width]; "rows" ops act on the last axis of a
// rank-2 tensor.

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdint>
#include <memory>
#include <type_traits>
#include <string>
#include <vector>

#include "iron/numerics/blas.hpp"
#include "iron/numerics/tape.hpp"

namespace iron {

/// Clamp applied to probabilities before taking logarithms.
inline constexpr double kLogClamp = 1e-7;

template <typename T>
Var<T> constant(Tensor<T> value) {
  return Var<T>(std::move(value), false);
}

namespace detail {

/// Branch-free expf (Cody-Waite reduction, degree-6 polynomial, about 2 ulp)
/// so that elementwise loops vectorize. Inputs are clamped to [-87, 88].
inline float fast_exp(float x) {
  x = std::max(std::min(x, 88.0f), -87.0f);
  // Adding and subtracting 1.5 * 2^23 rounds to the nearest integer.
  const float n = (x * 1.44269504088896341f + 12582912.0f) - 12582912.0f;
  const float r = (x - n * 0.693359375f) + n * 2.12194440e-4f;
  const float z = r * r;
  const float y =
      (((((1.9875691500e-4f * r + 1.3981999507e-3f) * r + 8.3334519073e-3f) * r + 4.1665795894e-2f) * r +
        1.6666665459e-1f) * r + 5.0000001201e-1f) * z + r + 1.0f;
  const auto bits = static_cast<std::uint32_t>(static_cast<std::int32_t>(n) + 127) << 23;
  return y * std::bit_cast<float>(bits);
}

template <typename T>
T exp(T x) {
  if constexpr (std::is_same_v<T, float>) return fast_exp(x);
  else return std::exp(x);
}

template <typename T>
T tanh(T x) {
  if constexpr (std::is_same_v<T, float>) {
    const float e = fast_exp(2.0f * std::max(std::min(x, 9.0f), -9.0f));
    return (e - 1.0f) / (e + 1.0f);
  } else {
    return std::tanh(x);
  }
}

template <typename T>
void require_same_shape(const Var<T>& a, const Var<T>& b, const char* what) {
  if (a.shape() != b.shape())
    throw ShapeError(std::string(what) + ": shape mismatch " + to_string(a.shape()) + " vs " + to_string(b.shape()));
}

template <typename T>
void accumulate(Node<T>& parent, const Tensor<T>& g) {
  if (!parent.requires_grad) return;
  auto& buf = parent.grad_buffer();
  T* dst = buf.data();
  const T* src = g.data();
  for (std::size_t i = 0, n = buf.numel(); i < n; ++i) dst[i] += src[i];
}
}  // namespace detail

// ---------------------------------------------------------------- elementwise

template <typename T>
Var<T> add(const Var<T>& a, const Var<T>& b) {
  detail::require_same_shape(a, b, "add");
  Tensor<T> out = a.value();
  for (std::size_t i = 0; i < out.numel(); ++i) out[i] += b.value()[i];
  return record(std::move(out), {a, b}, [](Node<T>& self) {
    detail::accumulate(*self.parents[0], self.grad);
    detail::accumulate(*self.parents[1], self.grad);
  });
}

template <typename T>
Var<T> sub(const Var<T>& a, const Var<T>& b) {
  detail::require_same_shape(a, b, "sub");
  Tensor<T> out = a.value();
  for (std::size_t i = 0; i < out.numel(); ++i) out[i] -= b.value()[i];
  return record(std::move(out), {a, b}, [](Node<T>& self) {
    detail::accumulate(*self.parents[0], self.grad);
    auto& pb = *self.parents[1];
    if (pb.requires_grad) {
      auto& g = pb.grad_buffer();
      for (std::size_t i = 0; i < g.numel(); ++i) g[i] -= self.grad[i];
    }
  });
}

template <typename T>
Var<T> mul(const Var<T>& a, const Var<T>& b) {
  detail::require_same_shape(a, b, "mul");
  Tensor<T> out = a.value();
  for (std::size_t i = 0; i < out.numel(); ++i) out[i] *= b.value()[i];
  return record(std::move(out), {a, b}, [](Node<T>& self) {
    auto& pa = *self.parents[0];
    auto& pb = *self.parents[1];
    if (pa.requires_grad) {
      auto& g = pa.grad_buffer();
      for (std::size_t i = 0; i < g.numel(); ++i) g[i] += self.grad[i] * pb.value[i];
    }
    if (pb.requires_grad) {
      auto& g = pb.grad_buffer();
      for (std::size_t i = 0; i < g.numel(); ++i) g[i] += self.grad[i] * pa.value[i];
    }
  });
}

template <typename T>
Var<T> scale(const Var<T>& a, T factor) {
  Tensor<T> out = a.value();
  for (auto& v : out.values()) v *= factor;
  return record(std::move(out), {a}, [factor](Node<T>& self) {
    auto& g = self.parents[0]->grad_buffer();
    for (std::size_t i = 0; i < g.numel(); ++i) g[i] += factor * self.grad[i];
  });
}

template <typename T>
Var<T> sigmoid(const Var<T>& a) {
  Tensor<T> out = a.value();
  for (auto& v : out.values()) v = T(1) / (T(1) + detail::exp(-v));
  return record(std::move(out), {a}, [](Node<T>& self) {
    auto& g = self.parents[0]->grad_buffer();
    for (std::size_t i = 0; i < g.numel(); ++i) {
      const T y = self.value[i];
      g[i] += self.grad[i] * y * (T(1) - y);
    }
  });
}

/// Natural log with the input clamped from below at kLogClamp.
template <typename T>
Var<T> log(const Var<T>& a) {
  const T floor = static_cast<T>(kLogClamp);
  Tensor<T> out = a.value();
  for (auto& v : out.values()) v = std::log(std::max(v, floor));
  return record(std::move(out), {a}, [floor](Node<T>& self) {
    auto& p = *self.parents[0];
    auto& g = p.grad_buffer();
    for (std::size_t i = 0; i < g.numel(); ++i)
      if (p.value[i] > floor) g[i] += self.grad[i] / p.value[i];
  });
}

/// GELU, tanh approximation.
template <typename T>
Var<T> gelu(const Var<T>& a) {
  constexpr T c = T(0.7978845608028654);
  constexpr T k = T(0.044715);
  Tensor<T> out = a.value();
  for (auto& x : out.values()) x = T(0.5) * x * (T(1) + detail::tanh(c * (x + k * x * x * x)));
  return record(std::move(out), {a}, [](Node<T>& self) {
    auto& p = *self.parents[0];
    auto& g = p.grad_buffer();
    for (std::size_t i = 0; i < g.numel(); ++i) {
      const T x = p.value[i];
      const T th = detail::tanh(c * (x + k * x * x * x));
      const T d = T(0.5) * (T(1) + th) + T(0.5) * x * (T(1) - th * th) * c * (T(1) + T(3) * k * x * x);
      g[i] += self.grad[i] * d;
    }
  });
}

// ----------------------------------------------------------------- reductions

template <typename T>
Var<T> sum(const Var<T>& a) {
  T s = T(0);
  for (auto v : a.value().values()) s += v;
  return record(Tensor<T>::scalar(s), {a}, [](Node<T>& self) {
    auto& g = self.parents[0]->grad_buffer();
    for (auto& v : g.values()) v += self.grad[0];
  });
}

template <typename T>
Var<T> mean(const Var<T>& a) {
  return scale(sum(a), T(1) / static_cast<T>(a.numel()));
}

// ---------------------------------------------------------------- broadcasting

/// x[n, d] + b[d] broadcast over rows.
template <typename T>
Var<T> add_row_bias(const Var<T>& x, const Var<T>& bias) {
  expect_rank(x.shape(), 2, "add_row_bias");
  const std::size_t n = x.dim(0), d = x.dim(1);
  if (bias.numel() != d) throw ShapeError("add_row_bias: bias size must equal " + std::to_string(d));
  Tensor<T> out = x.value();
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < d; ++j) out[i * d + j] += bias.value()[j];
  return record(std::move(out), {x, bias}, [n, d](Node<T>& self) {
    detail::accumulate(*self.parents[0], self.grad);
    auto& pb = *self.parents[1];
    if (pb.requires_grad) {
      auto& g = pb.grad_buffer();
      for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < d; ++j) g[j] += self.grad[i * d + j];
    }
  });
}

/// x[c, ...] + b[c] broadcast over every trailing position.
template <typename T>
Var<T> add_channel_bias(const Var<T>& x, const Var<T>& bias) {
  const std::size_t c = x.dim(0);
  const std::size_t inner = x.numel() / c;
  if (bias.numel() != c) throw ShapeError("add_channel_bias: bias size must equal " + std::to_string(c));
  Tensor<T> out = x.value();
  for (std::size_t ch = 0; ch < c; ++ch)
    for (std::size_t i = 0; i < inner; ++i) out[ch * inner + i] += bias.value()[ch];
  return record(std::move(out), {x, bias}, [c, inner](Node<T>& self) {
    detail::accumulate(*self.parents[0], self.grad);
    auto& pb = *self.parents[1];
    if (pb.requires_grad) {
      auto& g = pb.grad_buffer();
      for (std::size_t ch = 0; ch < c; ++ch)
        for (std::size_t i = 0; i < inner; ++i) g[ch] += self.grad[ch * inner + i];
    }
  });
}

// ------------------------------------------------------------- linear algebra

/// op(a) * op(b) for rank-2 operands. Transposed operands are read in place.
template <typename T>
Var<T> matmul(const Var<T>& a, const Var<T>& b, bool trans_a = false, bool trans_b = false) {
  expect_rank(a.shape(), 2, "matmul lhs");
  expect_rank(b.shape(), 2, "matmul rhs");
  if (trans_a && trans_b) throw std::invalid_argument("matmul: double transpose not supported");
  const int m = static_cast<int>(trans_a ? a.dim(1) : a.dim(0));
  const int k = static_cast<int>(trans_a ? a.dim(0) : a.dim(1));
  const int kb = static_cast<int>(trans_b ? b.dim(1) : b.dim(0));
  const int n = static_cast<int>(trans_b ? b.dim(0) : b.dim(1));
  if (k != kb)
    throw ShapeError("matmul: inner dimensions differ " + to_string(a.shape()) + " x " + to_string(b.shape()));
  const int lda = static_cast<int>(a.dim(1)), ldb = static_cast<int>(b.dim(1));
  Tensor<T> out({static_cast<std::size_t>(m), static_cast<std::size_t>(n)});
  blas::gemm<T>(trans_a, trans_b, m, n, k, T(1), a.value().data(), lda, b.value().data(), ldb, T(0), out.data(), n);
  return record(std::move(out), {a, b}, [=](Node<T>& self) {
    auto& pa = *self.parents[0];
    auto& pb = *self.parents[1];
    const T* dc = self.grad.data();
    if (pa.requires_grad) {
      T* da = pa.grad_buffer().data();
      if (!trans_a && !trans_b) blas::gemm<T>(false, true, m, k, n, T(1), dc, n, pb.value.data(), ldb, T(1), da, lda);
      else if (!trans_a && trans_b) blas::gemm<T>(false, false, m, k, n, T(1), dc, n, pb.value.data(), ldb, T(1), da, lda);
      else blas::gemm<T>(false, true, k, m, n, T(1), pb.value.data(), ldb, dc, n, T(1), da, lda);
    }
    if (pb.requires_grad) {
      T* db = pb.grad_buffer().data();
      if (!trans_a && !trans_b) blas::gemm<T>(true, false, k, n, m, T(1), pa.value.data(), lda, dc, n, T(1), db, ldb);
      else if (!trans_a && trans_b) blas::gemm<T>(true, false, n, k, m, T(1), dc, n, pa.value.data(), lda, T(1), db, ldb);
      else blas::gemm<T>(false, false, k, n, m, T(1), pa.value.data(), lda, dc, n, T(1), db, ldb);
    }
  });
}

/// x W + b with W stored [in, out].
template <typename T>
Var<T> linear(const Var<T>& x, const Var<T>& weight, const Var<T>& bias) {
  return add_row_bias(matmul(x, weight), bias);
}

template <typename T>
Var<T> transpose(const Var<T>& a) {
  expect_rank(a.shape(), 2, "transpose");
  const std::size_t r = a.dim(0), c = a.dim(1);
  Tensor<T> out({c, r});
  for (std::size_t i = 0; i < r; ++i)
    for (std::size_t j = 0; j < c; ++j) out[j * r + i] = a.value()[i * c + j];
  return record(std::move(out), {a}, [r, c](Node<T>& self) {
    auto& g = self.parents[0]->grad_buffer();
    for (std::size_t i = 0; i < r; ++i)
      for (std::size_t j = 0; j < c; ++j) g[i * c + j] += self.grad[j * r + i];
  });
}

template <typename T>
Var<T> reshape(const Var<T>& a, Shape shape) {
  Tensor<T> out = a.value().reshaped(std::move(shape));
  return record(std::move(out), {a}, [](Node<T>& self) {
    auto& g = self.parents[0]->grad_buffer();
    for (std::size_t i = 0; i < g.numel(); ++i) g[i] += self.grad[i];
  });
}

/// [c, h, w] feature map to [h*w, c] token matrix.
template <typename T>
Var<T> grid_to_tokens(const Var<T>& grid) {
  expect_rank(grid.shape(), 3, "grid_to_tokens");
  return transpose(reshape(grid, {grid.dim(0), grid.dim(1) * grid.dim(2)}));
}

/// [h*w, c] token matrix to [c, h, w] feature map.
template <typename T>
Var<T> tokens_to_grid(const Var<T>& tokens, std::size_t h, std::size_t w) {
  expect_rank(tokens.shape(), 2, "tokens_to_grid");
  if (tokens.dim(0) != h * w) throw ShapeError("tokens_to_grid: token count does not match grid");
  return reshape(transpose(tokens), {tokens.dim(1), h, w});
}

// ------------------------------------------------------------ axis-0 slicing

/// Concatenation along the leading axis; trailing extents must agree.
template <typename T>
Var<T> concat(const std::vector<Var<T>>& parts) {
  if (parts.empty()) throw ShapeError("concat: no inputs");
  Shape shape = parts.front().shape();
  std::size_t lead = 0;
  for (const auto& p : parts) {
    if (p.shape().size() != shape.size() || !std::equal(shape.begin() + 1, shape.end(), p.shape().begin() + 1))
      throw ShapeError("concat: trailing shape mismatch " + to_string(shape) + " vs " + to_string(p.shape()));
    lead += p.dim(0);
  }
  shape[0] = lead;
  Tensor<T> out(shape);
  std::size_t offset = 0;
  std::vector<std::size_t> sizes;
  for (const auto& p : parts) {
    std::copy(p.value().values().begin(), p.value().values().end(), out.values().begin() + offset);
    offset += p.numel();
    sizes.push_back(p.numel());
  }
  return record(std::move(out), parts, [sizes](Node<T>& self) {
    std::size_t off = 0;
    for (std::size_t k = 0; k < sizes.size(); ++k) {
      auto& p = *self.parents[k];
      if (p.requires_grad) {
        auto& g = p.grad_buffer();
        for (std::size_t i = 0; i < sizes[k]; ++i) g[i] += self.grad[off + i];
      }
      off += sizes[k];
    }
  });
}

/// Rows [begin, end) of the leading axis.
template <typename T>
Var<T> slice(const Var<T>& a, std::size_t begin, std::size_t end) {
  if (begin >= end || end > a.dim(0)) throw ShapeError("slice: invalid range on " + to_string(a.shape()));
  Shape shape = a.shape();
  const std::size_t inner = a.numel() / shape[0];
  shape[0] = end - begin;
  Tensor<T> out(shape);
  std::copy(a.value().values().begin() + begin * inner, a.value().values().begin() + end * inner,
            out.values().begin());
  return record(std::move(out), {a}, [begin, inner](Node<T>& self) {
    auto& g = self.parents[0]->grad_buffer();
    for (std::size_t i = 0; i < self.grad.numel(); ++i) g[begin * inner + i] += self.grad[i];
  });
}

// ------------------------------------------------------------ normalization

/// Softmax over the last axis, max-subtracted.
template <typename T>
Var<T> softmax(const Var<T>& a) {
  const std::size_t d = a.shape().back();
  const std::size_t rows = a.numel() / d;
  Tensor<T> out = a.value();
  for (std::size_t r = 0; r < rows; ++r) {
    T* row = out.data() + r * d;
    const T mx = *std::max_element(row, row + d);
    T s = T(0);
    for (std::size_t j = 0; j < d; ++j) row[j] = detail::exp(row[j] - mx);
    for (std::size_t j = 0; j < d; ++j) s += row[j];
    for (std::size_t j = 0; j < d; ++j) row[j] /= s;
  }
  return record(std::move(out), {a}, [rows, d](Node<T>& self) {
    auto& g = self.parents[0]->grad_buffer();
    for (std::size_t r = 0; r < rows; ++r) {
      const T* y = self.value.data() + r * d;
      const T* dy = self.grad.data() + r * d;
      T dot = T(0);
      for (std::size_t j = 0; j < d; ++j) dot += dy[j] * y[j];
      for (std::size_t j = 0; j < d; ++j) g[r * d + j] += y[j] * (dy[j] - dot);
    }
  });
}

/// Layer normalization over the last axis of x[n, d] with affine gamma, beta.
template <typename T>
Var<T> layer_norm(const Var<T>& x, const Var<T>& gamma, const Var<T>& beta, T eps = T(1e-5)) {
  const std::size_t d = x.shape().back();
  const std::size_t rows = x.numel() / d;
  if (gamma.numel() != d || beta.numel() != d) throw ShapeError("layer_norm: affine size mismatch");
  auto xhat = std::make_shared<std::vector<T>>(x.numel());
  auto rstd = std::make_shared<std::vector<T>>(rows);
  Tensor<T> out(x.shape());
  for (std::size_t r = 0; r < rows; ++r) {
    const T* in = x.value().data() + r * d;
    T mu = T(0);
    for (std::size_t j = 0; j < d; ++j) mu += in[j];
    mu /= static_cast<T>(d);
    T var = T(0);
    for (std::size_t j = 0; j < d; ++j) var += (in[j] - mu) * (in[j] - mu);
    var /= static_cast<T>(d);
    const T rs = T(1) / std::sqrt(var + eps);
    (*rstd)[r] = rs;
    for (std::size_t j = 0; j < d; ++j) {
      const T xh = (in[j] - mu) * rs;
      (*xhat)[r * d + j] = xh;
      out[r * d + j] = xh * gamma.value()[j] + beta.value()[j];
    }
  }
  return record(std::move(out), {x, gamma, beta}, [=](Node<T>& self) {
    auto& px = *self.parents[0];
    auto& pg = *self.parents[1];
    auto& pb = *self.parents[2];
    std::vector<T> dxhat(d);
    for (std::size_t r = 0; r < rows; ++r) {
      const T* dy = self.grad.data() + r * d;
      const T* xh = xhat->data() + r * d;
      if (pg.requires_grad) {
        auto& g = pg.grad_buffer();
        for (std::size_t j = 0; j < d; ++j) g[j] += dy[j] * xh[j];
      }
      if (pb.requires_grad) {
        auto& g = pb.grad_buffer();
        for (std::size_t j = 0; j < d; ++j) g[j] += dy[j];
      }
      if (px.requires_grad) {
        T m1 = T(0), m2 = T(0);
        for (std::size_t j = 0; j < d; ++j) {
          dxhat[j] = dy[j] * pg.value[j];
          m1 += dxhat[j];
          m2 += dxhat[j] * xh[j];
        }
        m1 /= static_cast<T>(d);
        m2 /= static_cast<T>(d);
        auto& g = px.grad_buffer();
        for (std::size_t j = 0; j < d; ++j) g[r * d + j] += (*rstd)[r] * (dxhat[j] - m1 - xh[j] * m2);
      }
    }
  });
}

// ----------------------------------------------------------------------- loss

/// Mean binary cross-entropy of probabilities P against a binary target,
/// with P clamped to [kLogClamp, 1 - kLogClamp]. The clamp is applied to P and
/// 1 - P separately so that bce(P, Y) == bce(1 - P, 1 - Y).
template <typename T>
Var<T> bce(const Var<T>& probs, const Tensor<T>& target) {
  if (probs.shape() != target.shape())
    throw ShapeError("bce_loss: shape mismatch " + to_string(probs.shape()) + " vs " + to_string(target.shape()));
  const std::size_t n = probs.numel();
  double acc = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double p = probs.value()[i], q = 1.0 - p;
    const double y = target[i];
    acc -= y * std::log(std::max(p, kLogClamp)) + (1.0 - y) * std::log(std::max(q, kLogClamp));
  }
  const T loss = static_cast<T>(acc / static_cast<double>(n));
  return record(Tensor<T>::scalar(loss), {probs}, [target, n](Node<T>& self) {
    auto& p = *self.parents[0];
    auto& g = p.grad_buffer();
    const double scale = static_cast<double>(self.grad[0]) / static_cast<double>(n);
    for (std::size_t i = 0; i < n; ++i) {
      const double pv = p.value[i], qv = 1.0 - pv;
      if (pv < kLogClamp || qv < kLogClamp) continue;
      g[i] += static_cast<T>(scale * (pv - target[i]) / (pv * qv));
    }
  });
}

}  // namespace iron

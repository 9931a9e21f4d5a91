#pragma once

#include <cmath>
#include <memory>
#include <stdexcept>
#include <string>
#include <vector>

#include "iron/numerics/ops.hpp"

namespace iron {

struct EmptyKeySetError : std::invalid_argument {
  EmptyKeySetError() : std::invalid_argument("scaled_dot_attention: empty key set") {}
};

/// Multi-head scaled dot-product attention without projections.
///
/// Q is [n_q, d], K is [n_k, d], V is [n_k, d_v]. Head h reads the column
/// block h of each operand; row i of the result is the heads-concatenated
/// softmax(Q_h K_h^T / sqrt(d / heads)) V_h.
template <typename T>
Var<T> scaled_dot_attention(const Var<T>& q, const Var<T>& k, const Var<T>& v, std::size_t heads) {
  if (!k.defined() || k.numel() == 0) throw EmptyKeySetError();
  expect_rank(q.shape(), 2, "attention Q");
  expect_rank(k.shape(), 2, "attention K");
  expect_rank(v.shape(), 2, "attention V");
  const std::size_t nq = q.dim(0), d = q.dim(1), nk = k.dim(0), dv = v.dim(1);
  if (k.dim(1) != d) throw ShapeError("attention: Q and K widths differ");
  if (v.dim(0) != nk) throw ShapeError("attention: K and V row counts differ");
  if (heads == 0 || d % heads != 0 || dv % heads != 0)
    throw ShapeError("attention: widths " + std::to_string(d) + "/" + std::to_string(dv) +
                     " not divisible by heads " + std::to_string(heads));
  const std::size_t dh = d / heads, dvh = dv / heads;
  const T inv_sqrt = T(1) / std::sqrt(static_cast<T>(dh));

  // Softmax weights per head, [heads, n_q, n_k], kept for the backward pass.
  auto probs = std::make_shared<std::vector<T>>(heads * nq * nk);
  Tensor<T> out({nq, dv});
  for (std::size_t hd = 0; hd < heads; ++hd) {
    T* p = probs->data() + hd * nq * nk;
    blas::gemm<T>(false, true, int(nq), int(nk), int(dh), inv_sqrt, q.value().data() + hd * dh, int(d),
                  k.value().data() + hd * dh, int(d), T(0), p, int(nk));
    for (std::size_t i = 0; i < nq; ++i) {
      T* row = p + i * nk;
      T mx = row[0];
      for (std::size_t j = 1; j < nk; ++j) mx = std::max(mx, row[j]);
      T s = T(0);
      for (std::size_t j = 0; j < nk; ++j) row[j] = detail::exp(row[j] - mx);
      for (std::size_t j = 0; j < nk; ++j) s += row[j];
      const T inv = T(1) / s;
      for (std::size_t j = 0; j < nk; ++j) row[j] *= inv;
    }
    blas::gemm<T>(false, false, int(nq), int(dvh), int(nk), T(1), p, int(nk), v.value().data() + hd * dvh, int(dv),
                  T(0), out.data() + hd * dvh, int(dv));
  }

  return record(std::move(out), {q, k, v}, [=](Node<T>& self) {
    auto& pq = *self.parents[0];
    auto& pk = *self.parents[1];
    auto& pv = *self.parents[2];
    std::vector<T> dp(nq * nk);
    for (std::size_t hd = 0; hd < heads; ++hd) {
      const T* p = probs->data() + hd * nq * nk;
      const T* dout = self.grad.data() + hd * dvh;
      if (pv.requires_grad)
        blas::gemm<T>(true, false, int(nk), int(dvh), int(nq), T(1), p, int(nk), dout, int(dv), T(1),
                      pv.grad_buffer().data() + hd * dvh, int(dv));
      if (!pq.requires_grad && !pk.requires_grad) continue;
      blas::gemm<T>(false, true, int(nq), int(nk), int(dvh), T(1), dout, int(dv), pv.value.data() + hd * dvh, int(dv),
                    T(0), dp.data(), int(nk));
      // dS = P * (dP - rowsum(dP * P)), folded with the 1/sqrt(d_h) scale.
      for (std::size_t i = 0; i < nq; ++i) {
        T* drow = dp.data() + i * nk;
        const T* prow = p + i * nk;
        T dot = T(0);
        for (std::size_t j = 0; j < nk; ++j) dot += drow[j] * prow[j];
        for (std::size_t j = 0; j < nk; ++j) drow[j] = prow[j] * (drow[j] - dot) * inv_sqrt;
      }
      if (pq.requires_grad)
        blas::gemm<T>(false, false, int(nq), int(dh), int(nk), T(1), dp.data(), int(nk), pk.value.data() + hd * dh,
                      int(d), T(1), pq.grad_buffer().data() + hd * dh, int(d));
      if (pk.requires_grad)
        blas::gemm<T>(true, false, int(nk), int(dh), int(nq), T(1), dp.data(), int(nk), pq.value.data() + hd * dh,
                      int(d), T(1), pk.grad_buffer().data() + hd * dh, int(d));
    }
  });
}

}  // namespace iron

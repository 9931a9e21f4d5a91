#pragma once

// Small parameterised building blocks shared by the model stages.

#include <string>

#include "iron/numerics/attention.hpp"
#include "iron/numerics/conv.hpp"
#include "iron/numerics/ops.hpp"
#include "iron/numerics/parameter.hpp"

namespace iron::nn {

struct Linear {
  Varf weight;  // [in, out]
  Varf bias;    // [out]

  static Linear make(ParameterStore& store, Initializer& init, const std::string& name, std::size_t in,
                     std::size_t out) {
    return {store.add(name + ".weight", init.xavier({in, out}, in, out)),
            store.add(name + ".bias", Initializer::zeros({out}))};
  }

  Varf operator()(const Varf& x) const { return linear(x, weight, bias); }
  std::size_t in_features() const { return weight.dim(0); }
  std::size_t out_features() const { return weight.dim(1); }
};

struct LayerNorm {
  Varf gamma, beta;

  static LayerNorm make(ParameterStore& store, const std::string& name, std::size_t dim) {
    return {store.add(name + ".gamma", Initializer::ones({dim})), store.add(name + ".beta", Initializer::zeros({dim}))};
  }

  Varf operator()(const Varf& x) const { return layer_norm(x, gamma, beta); }
};

/// Two-layer perceptron with GELU.
struct Mlp {
  Linear fc1, fc2;

  static Mlp make(ParameterStore& store, Initializer& init, const std::string& name, std::size_t dim,
                  std::size_t hidden) {
    return {Linear::make(store, init, name + ".fc1", dim, hidden), Linear::make(store, init, name + ".fc2", hidden, dim)};
  }

  Varf operator()(const Varf& x) const { return fc2(gelu(fc1(x))); }
};

/// Multi-head attention with input and output projections.
struct MultiHeadAttention {
  Linear q, k, v, out;
  std::size_t heads = 1;

  static MultiHeadAttention make(ParameterStore& store, Initializer& init, const std::string& name, std::size_t dim,
                                 std::size_t heads, std::size_t kv_dim = 0) {
    if (kv_dim == 0) kv_dim = dim;
    return {Linear::make(store, init, name + ".q", dim, dim), Linear::make(store, init, name + ".k", kv_dim, dim),
            Linear::make(store, init, name + ".v", kv_dim, dim), Linear::make(store, init, name + ".out", dim, dim),
            heads};
  }

  Varf operator()(const Varf& query, const Varf& key, const Varf& value) const {
    return out(scaled_dot_attention(q(query), k(key), v(value), heads));
  }
};

/// 1x1 convolution with bias on [c, h, w].
struct Conv1x1 {
  Varf weight;  // [out, in]
  Varf bias;    // [out]

  static Conv1x1 make(ParameterStore& store, Initializer& init, const std::string& name, std::size_t in,
                      std::size_t out) {
    return {store.add(name + ".weight", init.xavier({out, in}, in, out)),
            store.add(name + ".bias", Initializer::zeros({out}))};
  }

  Varf operator()(const Varf& x) const { return add_channel_bias(conv1x1(x, weight), bias); }
};

struct Conv3x3 {
  Varf weight;  // [out, in, 3, 3]
  Varf bias;

  static Conv3x3 make(ParameterStore& store, Initializer& init, const std::string& name, std::size_t in,
                      std::size_t out) {
    return {store.add(name + ".weight", init.xavier({out, in, 3, 3}, in * 9, out * 9)),
            store.add(name + ".bias", Initializer::zeros({out}))};
  }

  Varf operator()(const Varf& x) const { return add_channel_bias(conv2d(x, weight), bias); }
};

/// Bias-free 3x3 convolution followed by instance normalization.
struct ConvNorm3x3 {
  Varf weight;  // [out, in, 3, 3]
  Varf gamma, beta;
  std::size_t stride = 1;

  static ConvNorm3x3 make(ParameterStore& store, Initializer& init, const std::string& name, std::size_t in,
                          std::size_t out, std::size_t stride) {
    return {store.add(name + ".weight", init.xavier({out, in, 3, 3}, in * 9, out * 9)),
            store.add(name + ".gamma", Initializer::ones({out})), store.add(name + ".beta", Initializer::zeros({out})),
            stride};
  }

  Varf operator()(const Varf& x) const { return instance_norm(conv2d(x, weight, stride), gamma, beta); }
};

struct ConvTranspose2x2 {
  Varf weight;  // [in, out, 2, 2]
  Varf bias;

  static ConvTranspose2x2 make(ParameterStore& store, Initializer& init, const std::string& name, std::size_t in,
                               std::size_t out) {
    return {store.add(name + ".weight", init.xavier({in, out, 2, 2}, in, out * 4)),
            store.add(name + ".bias", Initializer::zeros({out}))};
  }

  Varf operator()(const Varf& x) const { return add_channel_bias(conv_transpose2x2(x, weight), bias); }
};

}  // namespace iron::nn

#pragma once

// Finite-difference verification of the analytic gradients of every primitive.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <map>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

#include "iron/numerics/attention.hpp"
#include "iron/numerics/conv.hpp"
#include "iron/numerics/ops.hpp"

namespace iron {

struct UnknownOpError : std::invalid_argument {
  explicit UnknownOpError(const std::string& op) : std::invalid_argument("gradcheck: unknown op_id '" + op + "'") {}
};

namespace detail {

enum class InputDomain { Real, Positive, Probability };

struct GradCheckOp {
  std::vector<Shape> default_shapes;
  std::function<Vard(const std::vector<Vard>&)> apply;
  InputDomain domain = InputDomain::Real;
};

inline const std::map<std::string, GradCheckOp>& gradcheck_registry() {
  static const std::map<std::string, GradCheckOp> ops = [] {
    std::map<std::string, GradCheckOp> m;
    using In = const std::vector<Vard>&;
    m["matmul"] = {{{3, 4}, {4, 5}}, [](In x) { return matmul(x[0], x[1]); }};
    m["matmul_nt"] = {{{3, 4}, {5, 4}}, [](In x) { return matmul(x[0], x[1], false, true); }};
    m["matmul_tn"] = {{{4, 3}, {4, 5}}, [](In x) { return matmul(x[0], x[1], true, false); }};
    m["add"] = {{{3, 4}, {3, 4}}, [](In x) { return add(x[0], x[1]); }};
    m["sub"] = {{{3, 4}, {3, 4}}, [](In x) { return sub(x[0], x[1]); }};
    m["mul"] = {{{3, 4}, {3, 4}}, [](In x) { return mul(x[0], x[1]); }};
    m["scale"] = {{{6}}, [](In x) { return scale(x[0], 1.7); }};
    m["softmax"] = {{{8}}, [](In x) { return softmax(x[0]); }};
    m["layer_norm"] = {{{4, 6}, {6}, {6}}, [](In x) { return layer_norm(x[0], x[1], x[2]); }};
    m["gelu"] = {{{6}}, [](In x) { return gelu(x[0]); }};
    m["sigmoid"] = {{{4}}, [](In x) { return sigmoid(x[0]); }};
    m["log"] = {{{5}}, [](In x) { return log(x[0]); }, InputDomain::Positive};
    m["sum"] = {{{3, 4}}, [](In x) { return sum(x[0]); }};
    m["mean"] = {{{3, 4}}, [](In x) { return mean(x[0]); }};
    m["transpose"] = {{{3, 4}}, [](In x) { return transpose(x[0]); }};
    m["reshape"] = {{{3, 4}}, [](In x) { return reshape(x[0], {x[0].numel()}); }};
    m["concat"] = {{{2, 3}, {4, 3}}, [](In x) { return concat(x); }};
    m["slice"] = {{{5, 3}}, [](In x) { return slice(x[0], 1, std::min<std::size_t>(4, x[0].dim(0))); }};
    m["add_row_bias"] = {{{3, 4}, {4}}, [](In x) { return add_row_bias(x[0], x[1]); }};
    m["add_channel_bias"] = {{{3, 2, 2}, {3}}, [](In x) { return add_channel_bias(x[0], x[1]); }};
    m["conv2d"] = {{{2, 5, 5}, {3, 2, 3, 3}}, [](In x) { return conv2d(x[0], x[1]); }};
    m["conv2d_stride2"] = {{{2, 5, 6}, {3, 2, 3, 3}}, [](In x) { return conv2d(x[0], x[1], 2); }};
    m["instance_norm"] = {{{3, 4, 5}, {3}, {3}}, [](In x) { return instance_norm(x[0], x[1], x[2]); }};
    m["conv1x1"] = {{{3, 4, 4}, {2, 3}}, [](In x) { return conv1x1(x[0], x[1]); }};
    m["depthwise_conv2d"] = {{{2, 5, 5}, {2, 3, 3}}, [](In x) { return depthwise_conv2d(x[0], x[1]); }};
    m["depthwise_separable_conv"] = {{{2, 5, 5}, {2, 3, 3}, {4, 2}},
                                     [](In x) { return depthwise_separable_conv(x[0], x[1], x[2]); }};
    m["conv_transpose2x2"] = {{{3, 3, 4}, {3, 2, 2, 2}}, [](In x) { return conv_transpose2x2(x[0], x[1]); }};
    m["bilinear_resize"] = {{{2, 3, 4}},
                            [](In x) { return bilinear_resize(x[0], 2 * x[0].dim(1) + 1, x[0].dim(2) + 3); }};
    m["bilinear_downsample"] = {{{2, 7, 6}},
                                [](In x) { return bilinear_resize(x[0], x[0].dim(1) / 2, x[0].dim(2) / 2); }};
    m["adaptive_avg_pool"] = {{{2, 7, 5}}, [](In x) { return adaptive_avg_pool(x[0], 3, 2); }};
    m["patchify"] = {{{2, 4, 6}}, [](In x) { return patchify(x[0], 2); }};
    m["scaled_dot_attention"] = {{{3, 4}, {5, 4}, {5, 6}},
                                 [](In x) { return scaled_dot_attention(x[0], x[1], x[2], 2); }};
    m["bce_loss"] = {{{3, 4}},
                     [](In x) {
                       Tensor<double> target(x[0].shape());
                       for (std::size_t i = 0; i < target.numel(); ++i) target[i] = (i * 7 + 3) % 5 < 2 ? 1.0 : 0.0;
                       return bce(x[0], target);
                     },
                     InputDomain::Probability};
    return m;
  }();
  return ops;
}

}  // namespace detail

inline std::vector<std::string> gradcheck_ops() {
  std::vector<std::string> names;
  for (const auto& [name, _] : detail::gradcheck_registry()) names.push_back(name);
  return names;
}

inline std::vector<Shape> gradcheck_default_shapes(const std::string& op_id) {
  auto it = detail::gradcheck_registry().find(op_id);
  if (it == detail::gradcheck_registry().end()) throw UnknownOpError(op_id);
  return it->second.default_shapes;
}

/// Compares the analytic gradient of a random projection of the op output
/// against central differences (step 1e-5) in double precision. Returns the
/// largest |analytic - numeric| / max(|analytic|, |numeric|, 1e-3) over all
/// input elements.
inline double grad_check(const std::string& op_id, const std::vector<Shape>& input_shapes, std::uint64_t seed) {
  const auto& registry = detail::gradcheck_registry();
  auto it = registry.find(op_id);
  if (it == registry.end()) throw UnknownOpError(op_id);
  const auto& op = it->second;

  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  std::uniform_real_distribution<double> positive(0.5, 2.0), probability(0.05, 0.95);

  std::vector<Vard> inputs;
  for (const auto& shape : input_shapes) {
    Tensor<double> t(shape);
    for (auto& v : t.values()) {
      switch (op.domain) {
        case detail::InputDomain::Real: v = normal(rng); break;
        case detail::InputDomain::Positive: v = positive(rng); break;
        case detail::InputDomain::Probability: v = probability(rng); break;
      }
    }
    inputs.emplace_back(std::move(t), true);
  }

  Tensor<double> projection = op.apply(inputs).value();
  for (auto& v : projection.values()) v = normal(rng);

  auto objective = [&](const std::vector<Vard>& in) {
    Vard out = op.apply(in);
    return sum(mul(out, constant(projection)));
  };

  backward(objective(inputs));

  constexpr double h = 1e-5;
  double worst = 0.0;
  for (std::size_t k = 0; k < inputs.size(); ++k) {
    const Tensor<double> analytic = inputs[k].has_grad() ? inputs[k].grad() : Tensor<double>(inputs[k].shape());
    for (std::size_t i = 0; i < inputs[k].numel(); ++i) {
      NoGradGuard guard;
      double& x = inputs[k].mutable_value()[i];
      const double saved = x;
      x = saved + h;
      const double plus = objective(inputs).value()[0];
      x = saved - h;
      const double minus = objective(inputs).value()[0];
      x = saved;
      const double numeric = (plus - minus) / (2 * h);
      const double a = analytic[i];
      const double denom = std::max({std::abs(a), std::abs(numeric), 1e-3});
      worst = std::max(worst, std::abs(a - numeric) / denom);
    }
  }
  return worst;
}

inline double grad_check(const std::string& op_id, std::uint64_t seed) {
  return grad_check(op_id, gradcheck_default_shapes(op_id), seed);
}

}  // namespace iron

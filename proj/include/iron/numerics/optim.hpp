#pragma once

#include <cmath>
#include <vector>

#include "iron/numerics/parameter.hpp"

namespace iron {

struct AdamWConfig {
  float learning_rate = 1e-3f;
  float weight_decay = 0.05f;
  float beta1 = 0.9f;
  float beta2 = 0.999f;
  float eps = 1e-8f;
  float grad_clip = 1.0f;  // global L2 norm; <= 0 disables
};

/// Adaptive moments with decoupled weight decay. Decay applies to rank >= 2
/// tensors only; biases, norms and tokens are not shrunk.
class AdamW {
 public:
  AdamW(ParameterStore& params, AdamWConfig config) : params_(params), config_(config) {
    for (const auto& [_, v] : params_.entries()) {
      m_.emplace_back(v.numel(), 0.0f);
      v_.emplace_back(v.numel(), 0.0f);
    }
  }

  const AdamWConfig& config() const { return config_; }
  void set_learning_rate(float lr) { config_.learning_rate = lr; }
  long steps() const { return step_; }

  double grad_norm() const {
    double sq = 0.0;
    for (const auto& [_, v] : params_.entries())
      if (v.has_grad())
        for (float g : v.grad().values()) sq += double(g) * g;
    return std::sqrt(sq);
  }

  /// Applies one update using gradients scaled by grad_scale, then zeroes them.
  void step(float grad_scale = 1.0f) {
    ++step_;
    float scale = grad_scale;
    if (config_.grad_clip > 0) {
      const double norm = grad_norm() * grad_scale;
      if (norm > config_.grad_clip) scale *= static_cast<float>(config_.grad_clip / norm);
    }
    const float bc1 = 1.0f - std::pow(config_.beta1, static_cast<float>(step_));
    const float bc2 = 1.0f - std::pow(config_.beta2, static_cast<float>(step_));
    std::size_t idx = 0;
    for (auto [_, p] : params_.entries()) {
      auto& m = m_[idx];
      auto& v = v_[idx];
      ++idx;
      if (!p.has_grad()) continue;
      const auto& g = p.grad();
      auto& w = p.mutable_value();
      const bool decay = p.shape().size() >= 2;
      for (std::size_t i = 0; i < w.numel(); ++i) {
        const float gi = g[i] * scale;
        m[i] = config_.beta1 * m[i] + (1.0f - config_.beta1) * gi;
        v[i] = config_.beta2 * v[i] + (1.0f - config_.beta2) * gi * gi;
        const float mhat = m[i] / bc1;
        const float vhat = v[i] / bc2;
        if (decay) w[i] -= config_.learning_rate * config_.weight_decay * w[i];
        w[i] -= config_.learning_rate * mhat / (std::sqrt(vhat) + config_.eps);
      }
    }
    params_.zero_grad();
  }

 private:
  ParameterStore& params_;
  AdamWConfig config_;
  std::vector<std::vector<float>> m_, v_;
  long step_ = 0;
};

}  // namespace iron

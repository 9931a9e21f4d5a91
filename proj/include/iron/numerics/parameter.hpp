#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <stdexcept>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "iron/numerics/tape.hpp"

namespace iron {

/// Named trainable tensors of one model, in registration order.
class ParameterStore {
 public:
  Varf add(const std::string& name, Tensor<float> value) {
    if (index_.count(name)) throw std::invalid_argument("duplicate parameter name: " + name);
    Varf v(std::move(value), true);
    index_.emplace(name, entries_.size());
    entries_.emplace_back(name, v);
    return v;
  }

  bool contains(const std::string& name) const { return index_.count(name) != 0; }

  const Varf& get(const std::string& name) const {
    auto it = index_.find(name);
    if (it == index_.end()) throw std::out_of_range("unknown parameter: " + name);
    return entries_[it->second].second;
  }

  const std::vector<std::pair<std::string, Varf>>& entries() const { return entries_; }
  std::size_t size() const { return entries_.size(); }

  std::size_t element_count() const {
    std::size_t n = 0;
    for (const auto& [_, v] : entries_) n += v.numel();
    return n;
  }

  void zero_grad() {
    for (auto& [_, v] : entries_) v.zero_grad();
  }

  /// Replaces the value of an existing parameter; shapes must match.
  void assign(const std::string& name, const Tensor<float>& value) {
    Varf v = get(name);
    if (v.shape() != value.shape())
      throw ShapeError("parameter " + name + ": shape " + to_string(value.shape()) + " does not match " +
                       to_string(v.shape()));
    v.mutable_value() = value;
  }

 private:
  std::vector<std::pair<std::string, Varf>> entries_;
  std::unordered_map<std::string, std::size_t> index_;
};

/// Deterministic initializers driven by an explicit engine.
struct Initializer {
  explicit Initializer(std::uint64_t seed) : rng(seed) {}

  Tensor<float> normal(Shape shape, float stddev) {
    Tensor<float> t(std::move(shape));
    std::normal_distribution<float> dist(0.0f, stddev);
    for (auto& v : t.values()) v = dist(rng);
    return t;
  }

  /// Uniform(-b, b) with b = sqrt(6 / (fan_in + fan_out)).
  Tensor<float> xavier(Shape shape, std::size_t fan_in, std::size_t fan_out) {
    Tensor<float> t(std::move(shape));
    const float bound = std::sqrt(6.0f / static_cast<float>(fan_in + fan_out));
    std::uniform_real_distribution<float> dist(-bound, bound);
    for (auto& v : t.values()) v = dist(rng);
    return t;
  }

  static Tensor<float> zeros(Shape shape) { return Tensor<float>(std::move(shape)); }
  static Tensor<float> ones(Shape shape) { return Tensor<float>(std::move(shape), 1.0f); }

  std::mt19937_64 rng;
};

}  // namespace iron

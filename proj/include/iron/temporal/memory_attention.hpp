#pragma once

// Mask-aware memory encoding and the interleaved self/cross memory-attention
// stack that turns the current deepest features into the enriched map.

#include <algorithm>
#include <cstdint>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

#include "iron/data/clip.hpp"
#include "iron/numerics/layers.hpp"
#include "iron/temporal/memory_bank.hpp"
#include "iron/temporal/positional.hpp"

namespace iron::temporal {

struct TemporalConfig {
  std::size_t blocks = 2;
  std::size_t heads = 4;
  std::size_t queue_len = 3;
  std::size_t kernel = 3;  // depthwise kernel of the memory encoder
  std::size_t mlp_ratio = 2;
  // The mask channel enters the encoder as mask_gain * (2m - 1).
  float mask_gain = 10.0f;
};

/// Depthwise-separable fusion of deepest features with the area-averaged mask.
class MemoryEncoder {
 public:
  MemoryEncoder(std::size_t channels, const TemporalConfig& config, ParameterStore& store, Initializer& init)
      : channels_(channels), mask_gain_(config.mask_gain) {
    const std::size_t cin = channels + 1, k = config.kernel;
    depthwise_ = store.add("memory.encoder.depthwise", init.normal({cin, k, k}, 1.0f / static_cast<float>(k)));
    pointwise_ = store.add("memory.encoder.pointwise", init.xavier({channels, cin}, cin, channels));
    bias_ = store.add("memory.encoder.bias", Initializer::zeros({channels}));
  }

  /// features is [c0, h0, w0]; mask is the full-resolution [H, W] binary mask.
  MemoryEntry encode(const Varf& features, const Tensor<float>& mask, double timestamp) const {
    expect_rank(features.shape(), 3, "encode_memory_entry features");
    expect_rank(mask.shape(), 2, "encode_memory_entry mask");
    const std::size_t h0 = features.dim(1), w0 = features.dim(2);
    if (features.dim(0) != channels_)
      throw ShapeError("encode_memory_entry: expected " + std::to_string(channels_) + " feature channels, got " +
                       std::to_string(features.dim(0)));
    if (mask.dim(0) % h0 != 0 || mask.dim(1) % w0 != 0)
      throw ShapeError("encode_memory_entry: mask " + to_string(mask.shape()) + " is not a multiple of the " +
                       std::to_string(h0) + "x" + std::to_string(w0) + " feature grid");
    if (!data::is_binary(mask)) throw std::invalid_argument("encode_memory_entry: mask must be binary");

    Tensor<float> signed_mask = mask.reshaped({1, mask.dim(0), mask.dim(1)});
    for (auto& v : signed_mask.values()) v = mask_gain_ * (2.0f * v - 1.0f);
    auto coarse = adaptive_avg_pool(constant(std::move(signed_mask)), h0, w0);
    auto fused = depthwise_separable_conv(concat<float>({features, coarse}), depthwise_, pointwise_);
    return MemoryEntry{add_channel_bias(fused, bias_), timestamp, data::freespace_fraction(mask)};
  }

 private:
  std::size_t channels_;
  float mask_gain_;
  Varf depthwise_, pointwise_, bias_;
};

struct MemoryAttentionBlock {
  nn::LayerNorm self_norm, cross_norm, memory_norm, mlp_norm;
  nn::MultiHeadAttention self_attn, cross_attn;
  nn::Mlp mlp;
};

/// N stacked blocks of self-attention over the current tokens followed by
/// cross-attention into all stored memory tokens.
class MemoryAttention {
 public:
  MemoryAttention(std::size_t dim, const TemporalConfig& config, ParameterStore& store, Initializer& init)
      : dim_(dim), config_(config) {
    for (std::size_t b = 0; b < config.blocks; ++b) {
      const std::string name = "memory.attention" + std::to_string(b);
      blocks_.push_back({nn::LayerNorm::make(store, name + ".self_norm", dim),
                         nn::LayerNorm::make(store, name + ".cross_norm", dim),
                         nn::LayerNorm::make(store, name + ".memory_norm", dim),
                         nn::LayerNorm::make(store, name + ".mlp_norm", dim),
                         nn::MultiHeadAttention::make(store, init, name + ".self_attn", dim, config.heads),
                         nn::MultiHeadAttention::make(store, init, name + ".cross_attn", dim, config.heads),
                         nn::Mlp::make(store, init, name + ".mlp", dim, dim * config.mlp_ratio)});
    }
  }

  const std::vector<MemoryAttentionBlock>& blocks() const { return blocks_; }

  /// Returns a map with the shape of features. An empty bank skips the
  /// cross-attention sublayers.
  Varf enrich(const Varf& features, const MemoryBank& bank, double current_timestamp) const {
    expect_rank(features.shape(), 3, "temporal_enrich");
    const std::size_t h0 = features.dim(1), w0 = features.dim(2);
    auto x = grid_to_tokens(features);

    Varf memory, query_pe, key_pe;
    if (!bank.empty()) {
      auto stamps = bank.timestamps();
      stamps.push_back(current_timestamp);
      auto pe = spatiotemporal_pe(h0, w0, stamps, dim_);
      std::vector<Varf> mem_parts, pe_parts;
      for (std::size_t i = 0; i < bank.size(); ++i) {
        const auto& tokens = bank.entries()[i].tokens;
        if (tokens.dim(1) != h0 || tokens.dim(2) != w0)
          throw ShapeError("temporal_enrich: memory grid does not match the current feature grid");
        mem_parts.push_back(grid_to_tokens(tokens));
        pe_parts.push_back(grid_to_tokens(constant(std::move(pe[i]))));
      }
      memory = concat(mem_parts);
      key_pe = concat(pe_parts);
      query_pe = grid_to_tokens(constant(std::move(pe.back())));
    }

    for (const auto& blk : blocks_) {
      auto h = blk.self_norm(x);
      x = add(x, blk.self_attn(h, h, h));
      if (memory.defined()) {
        auto mem = blk.memory_norm(memory);
        auto q = add(blk.cross_norm(x), query_pe);
        x = add(x, blk.cross_attn(q, add(mem, key_pe), mem));
      }
      x = add(x, blk.mlp(blk.mlp_norm(x)));
    }
    return tokens_to_grid(x, h0, w0);
  }

 private:
  std::size_t dim_;
  TemporalConfig config_;
  std::vector<MemoryAttentionBlock> blocks_;
};

enum class MaskSource { GroundTruth, Predicted };

/// Teacher-forcing schedule: p_predicted = clamp(2 * progress, 0, 1).
struct CurriculumState {
  double progress = 0.0;
  double p_predicted() const { return std::clamp(2.0 * progress, 0.0, 1.0); }
};

template <typename Rng>
MaskSource curriculum_source(const CurriculumState& state, Rng& rng) {
  const double p = state.p_predicted();
  if (p <= 0.0) return MaskSource::GroundTruth;
  if (p >= 1.0) return MaskSource::Predicted;
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  return unit(rng) < p ? MaskSource::Predicted : MaskSource::GroundTruth;
}

}  // namespace iron::temporal

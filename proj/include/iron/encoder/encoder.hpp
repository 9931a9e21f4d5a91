#pragma once

// Toy ViT backbone and the feature-pyramid neck: pyramid pooling on the deepest
// grid, then top-down fusion with projected intermediate block outputs.

#include <bit>
#include <cmath>
#include <stdexcept>
#include <string>
#include <vector>

#include "iron/numerics/layers.hpp"

namespace iron::encoder {

struct EncoderConfig {
  std::size_t in_channels = 1;
  std::size_t patch_size = 8;
  std::size_t embed_dim = 64;
  std::size_t depth = 4;
  std::size_t heads = 4;
  std::size_t mlp_ratio = 2;
  std::size_t pyramid_levels = 3;
  std::vector<std::size_t> pool_bins{1, 2, 3, 6};
  std::size_t pos_grid = 16;  // side of the learned positional-embedding grid
  bool use_pos_embed = true;
  // "conv": log2(patch_size) stride-2 stages of normalized 3x3 convolutions;
  // "linear": one projection per flattened patch.
  std::string stem = "conv";
  std::size_t stem_channels = 16;  // width of the first conv stage, doubled per stage

  /// Channels of pyramid level i (halved per level).
  std::size_t level_channels(std::size_t i) const { return embed_dim >> i; }
  std::size_t pool_channels() const { return embed_dim / 4; }
  std::size_t stem_stages() const { return static_cast<std::size_t>(std::countr_zero(patch_size)); }

  void validate() const {
    if (embed_dim == 0 || heads == 0 || embed_dim % heads != 0)
      throw std::invalid_argument("encoder: embed_dim must be divisible by heads");
    if (pyramid_levels < 2) throw std::invalid_argument("encoder: pyramid_levels must be >= 2");
    if (depth < 1) throw std::invalid_argument("encoder: depth must be >= 1");
    if (patch_size == 0) throw std::invalid_argument("encoder: patch_size must be positive");
    if (stem != "conv" && stem != "linear") throw std::invalid_argument("encoder: stem must be 'conv' or 'linear'");
    if (stem == "conv" && (patch_size < 2 || !std::has_single_bit(patch_size) || stem_channels == 0))
      throw std::invalid_argument("encoder: the conv stem needs a power-of-two patch_size >= 2 and stem_channels > 0");
    if (pool_bins.empty()) throw std::invalid_argument("encoder: pool_bins must be non-empty");
    if (embed_dim % (std::size_t{1} << (pyramid_levels - 1)) != 0 || level_channels(pyramid_levels - 1) == 0)
      throw std::invalid_argument("encoder: embed_dim too small for the pyramid depth");
  }

  /// Backbone block (1-based) whose output feeds pyramid level i >= 1.
  std::size_t lateral_block(std::size_t level) const {
    return std::max<std::size_t>(1, depth >> level);
  }
};

/// Multi-scale features of one frame; index 0 is the deepest (coarsest) level
/// and every following level doubles the resolution.
struct FeaturePyramid {
  std::vector<Varf> levels;
  const Varf& deepest() const { return levels.front(); }
};

struct EncoderOutput {
  Varf tokens;                      // [D, gh, gw], output of the last block
  std::vector<Varf> block_outputs;  // [D, gh, gw] after each block, in order
};

struct TransformerBlock {
  nn::LayerNorm norm1, norm2;
  nn::MultiHeadAttention attn;
  nn::Mlp mlp;

  static TransformerBlock make(ParameterStore& store, Initializer& init, const std::string& name, std::size_t dim,
                               std::size_t heads, std::size_t hidden) {
    return {nn::LayerNorm::make(store, name + ".norm1", dim), nn::LayerNorm::make(store, name + ".norm2", dim),
            nn::MultiHeadAttention::make(store, init, name + ".attn", dim, heads),
            nn::Mlp::make(store, init, name + ".mlp", dim, hidden)};
  }

  /// Pre-norm residual self-attention and MLP on [n, dim] tokens.
  Varf operator()(const Varf& x) const {
    auto h = norm1(x);
    auto y = add(x, attn(h, h, h));
    return add(y, mlp(norm2(y)));
  }
};

class VitEncoder {
 public:
  VitEncoder(const EncoderConfig& config, ParameterStore& store, Initializer& init) : config_(config) {
    config_.validate();
    const std::size_t d = config_.embed_dim;
    if (config_.stem == "linear") {
      const std::size_t patch_dim = config_.in_channels * config_.patch_size * config_.patch_size;
      patch_embed_ = nn::Linear::make(store, init, "encoder.patch_embed", patch_dim, d);
    } else {
      std::size_t in = config_.in_channels;
      const std::size_t stages = config_.stem_stages();
      for (std::size_t i = 0; i < stages; ++i) {
        const std::string name = "encoder.stem" + std::to_string(i);
        const bool last = i + 1 == stages;
        const std::size_t out = last ? d : config_.stem_channels << i;
        stem_.push_back(nn::ConvNorm3x3::make(store, init, name + ".down", in, out, 2));
        if (!last) stem_.push_back(nn::ConvNorm3x3::make(store, init, name + ".conv", out, out, 1));
        in = out;
      }
    }
    if (config_.use_pos_embed)
      pos_embed_ = store.add("encoder.pos_embed", init.normal({config_.pos_grid * config_.pos_grid, d}, 0.02f));
    for (std::size_t b = 0; b < config_.depth; ++b)
      blocks_.push_back(TransformerBlock::make(store, init, "encoder.block" + std::to_string(b), d, config_.heads,
                                               d * config_.mlp_ratio));
  }

  const EncoderConfig& config() const { return config_; }

  /// Image [c, H, W] in [0, 1] to a [D, H/p, W/p] token grid.
  EncoderOutput encode(const Tensor<float>& image) const {
    if (image.rank() != 3 || image.dim(0) != config_.in_channels)
      throw ShapeError("encode_frame: expected [" + std::to_string(config_.in_channels) + ", H, W] image, got " +
                       to_string(image.shape()));
    const std::size_t p = config_.patch_size;
    if (image.dim(1) % p != 0 || image.dim(2) % p != 0)
      throw ShapeError("encode_frame: image " + to_string(image.shape()) + " not divisible by patch size " +
                       std::to_string(p));
    const std::size_t gh = image.dim(1) / p, gw = image.dim(2) / p;

    Tensor<float> normalized = image;
    for (auto& v : normalized.values()) v = (v - 0.5f) * 4.0f;
    auto x = config_.stem == "linear" ? patch_embed_(patchify(constant(std::move(normalized)), p))
                                      : grid_to_tokens(conv_stem(constant(std::move(normalized))));
    if (config_.use_pos_embed) x = add(x, positional(gh, gw));

    EncoderOutput out;
    for (const auto& block : blocks_) {
      x = block(x);
      out.block_outputs.push_back(tokens_to_grid(x, gh, gw));
    }
    out.tokens = out.block_outputs.back();
    return out;
  }

  const std::vector<TransformerBlock>& blocks() const { return blocks_; }

 private:
  /// Learned embeddings resampled to the current token grid.
  Varf positional(std::size_t gh, std::size_t gw) const {
    const std::size_t g = config_.pos_grid;
    auto grid = tokens_to_grid(pos_embed_, g, g);
    return grid_to_tokens(bilinear_resize(grid, gh, gw));
  }

  // GELU between layers; the last layer's normalized output is the embedding.
  Varf conv_stem(Varf x) const {
    for (std::size_t i = 0; i < stem_.size(); ++i) {
      x = stem_[i](x);
      if (i + 1 < stem_.size()) x = gelu(x);
    }
    return x;
  }

  EncoderConfig config_;
  nn::Linear patch_embed_;
  std::vector<nn::ConvNorm3x3> stem_;
  Varf pos_embed_;
  std::vector<TransformerBlock> blocks_;
};

class PyramidNeck {
 public:
  PyramidNeck(const EncoderConfig& config, ParameterStore& store, Initializer& init) : config_(config) {
    const std::size_t d = config_.embed_dim, pc = config_.pool_channels();
    for (std::size_t b = 0; b < config_.pool_bins.size(); ++b)
      pool_proj_.push_back(nn::Conv1x1::make(store, init, "neck.pool" + std::to_string(b), d, pc));
    pool_fuse_ = nn::Conv1x1::make(store, init, "neck.pool_fuse", d + pc * config_.pool_bins.size(), d);
    for (std::size_t i = 1; i < config_.pyramid_levels; ++i) {
      const std::size_t c_prev = config_.level_channels(i - 1), c = config_.level_channels(i);
      const std::string name = "neck.level" + std::to_string(i);
      top_down_.push_back(nn::Conv1x1::make(store, init, name + ".top_down", c_prev, c));
      lateral_.push_back(nn::Conv1x1::make(store, init, name + ".lateral", d, c));
      smooth_.push_back(nn::Conv3x3::make(store, init, name + ".smooth", c, c));
    }
  }

  /// Pooled-context branch for pool_bins[index], upsampled back to the grid.
  Varf pooled_branch(const Varf& tokens, std::size_t index) const {
    const std::size_t h = tokens.dim(1), w = tokens.dim(2);
    const std::size_t bins = config_.pool_bins.at(index);
    auto pooled = adaptive_avg_pool(tokens, std::min(bins, h), std::min(bins, w));
    return bilinear_resize(pool_proj_[index](pooled), h, w);
  }

  /// Level 0: tokens enriched by pooled context. Level i > 0: 2x upsampled
  /// level i-1 plus the projected lateral block output, then a 3x3 smoothing.
  FeaturePyramid fuse(const EncoderOutput& enc) const {
    const Varf& tokens = enc.tokens;
    std::vector<Varf> parts{tokens};
    for (std::size_t b = 0; b < config_.pool_bins.size(); ++b) parts.push_back(pooled_branch(tokens, b));
    FeaturePyramid pyr;
    pyr.levels.push_back(gelu(pool_fuse_(concat(parts))));
    for (std::size_t i = 1; i < config_.pyramid_levels; ++i) {
      const auto& prev = pyr.levels.back();
      const std::size_t h = prev.dim(1) * 2, w = prev.dim(2) * 2;
      auto td = top_down_[i - 1](bilinear_resize(prev, h, w));
      const auto& source = enc.block_outputs.at(config_.lateral_block(i) - 1);
      auto lat = bilinear_resize(lateral_[i - 1](source), h, w);
      pyr.levels.push_back(gelu(smooth_[i - 1](add(td, lat))));
    }
    return pyr;
  }

 private:
  EncoderConfig config_;
  std::vector<nn::Conv1x1> pool_proj_;
  nn::Conv1x1 pool_fuse_;
  std::vector<nn::Conv1x1> top_down_, lateral_;
  std::vector<nn::Conv3x3> smooth_;
};

}  // namespace iron::encoder

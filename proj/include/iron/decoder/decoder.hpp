#pragma once

// Memory decoder: semantic-token gating on memory coverage, a two-way
// token/image transformer, hierarchical upsampling with pyramid skips and an
// inner-product mask head; plus the dual-task target and loss.

#include <cstdint>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

#include "iron/data/clip.hpp"
#include "iron/encoder/encoder.hpp"
#include "iron/numerics/layers.hpp"
#include "iron/temporal/positional.hpp"

namespace iron::decoder {

/// Which class the mask token is asked to segment on a training clip.
enum class AdtTask { Foreground, Background };

inline const char* task_name(AdtTask t) { return t == AdtTask::Foreground ? "foreground" : "background"; }

/// Y for the foreground task, 1 - Y for the background task.
inline Tensor<float> adt_target(const Tensor<float>& mask, AdtTask task) {
  if (!data::is_binary(mask)) throw std::invalid_argument("adt_target: mask must be binary");
  if (task == AdtTask::Foreground) return mask;
  Tensor<float> out = mask;
  for (auto& v : out.values()) v = 1.0f - v;
  return out;
}

/// Foreground with probability equal to the freespace pixel frequency.
template <typename Rng>
AdtTask sample_task(double freespace_pixel_frequency, Rng& rng) {
  if (!(freespace_pixel_frequency >= 0.0 && freespace_pixel_frequency <= 1.0))
    throw std::invalid_argument("sample_task: frequency must lie in [0, 1]");
  if (freespace_pixel_frequency >= 1.0) return AdtTask::Foreground;
  if (freespace_pixel_frequency <= 0.0) return AdtTask::Background;
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  return unit(rng) < freespace_pixel_frequency ? AdtTask::Foreground : AdtTask::Background;
}

struct TokenSet {
  Varf mask_token, freespace_token, background_token;  // each [d]

  static TokenSet make(ParameterStore& store, Initializer& init, std::size_t dim) {
    return {store.add("decoder.mask_token", init.normal({dim}, 1.0f)),
            store.add("decoder.freespace_token", init.normal({dim}, 1.0f)),
            store.add("decoder.background_token", init.normal({dim}, 1.0f))};
  }
};

/// [mask_token] alone, or [mask_token, semantic_token] when coverage < tau.
/// The semantic token follows the task.
inline std::vector<Varf> sgmc_tokens(double coverage, double tau, AdtTask task, const TokenSet& tokens) {
  std::vector<Varf> out{tokens.mask_token};
  if (coverage < tau)
    out.push_back(task == AdtTask::Foreground ? tokens.freespace_token : tokens.background_token);
  return out;
}

/// Per-pixel inner product of query [c] with features [c, h, w]; returns [1, h, w] logits.
inline Varf mask_logits(const Varf& query, const Varf& features) {
  expect_rank(features.shape(), 3, "mask_logits");
  const std::size_t c = features.dim(0), h = features.dim(1), w = features.dim(2);
  if (query.numel() != c) throw ShapeError("mask_logits: query width does not match feature channels");
  auto flat = reshape(features, {c, h * w});
  return reshape(matmul(reshape(query, {1, c}), flat), {1, h, w});
}

/// Threshold at 0.5 (strict).
inline Tensor<float> binarize(const Tensor<float>& probs) {
  Tensor<float> out(probs.shape());
  for (std::size_t i = 0; i < out.numel(); ++i) out[i] = probs[i] > 0.5f ? 1.0f : 0.0f;
  return out;
}

struct PredictionRecord {
  Tensor<float> probabilities;  // [H, W]
  Tensor<float> binary_mask;    // [H, W]
  double latency_ms = 0.0;
  bool sgmc_active = false;
  double coverage = 0.0;
  std::string warning;  // set when the input had to be resized
};

/// Mean BCE of probabilities against a binary target (P clamped at 1e-7).
inline Varf bce_loss(const Varf& probs, const Tensor<float>& target) { return bce(probs, target); }

struct DecoderConfig {
  std::size_t layers = 2;
  std::size_t heads = 4;
  std::size_t mlp_ratio = 2;
};

struct TwoWayLayer {
  nn::MultiHeadAttention token_self, token_to_image, image_to_token;
  nn::Mlp mlp;
  nn::LayerNorm norm1, norm2, norm3, norm4;
};

class MaskDecoder {
 public:
  MaskDecoder(const encoder::EncoderConfig& enc, const DecoderConfig& config, ParameterStore& store,
              Initializer& init)
      : enc_(enc), config_(config) {
    const std::size_t d = enc.embed_dim;
    tokens_ = TokenSet::make(store, init, d);
    for (std::size_t l = 0; l < config.layers; ++l) {
      const std::string name = "decoder.layer" + std::to_string(l);
      layers_.push_back({nn::MultiHeadAttention::make(store, init, name + ".token_self", d, config.heads),
                         nn::MultiHeadAttention::make(store, init, name + ".token_to_image", d, config.heads),
                         nn::MultiHeadAttention::make(store, init, name + ".image_to_token", d, config.heads),
                         nn::Mlp::make(store, init, name + ".mlp", d, d * config.mlp_ratio),
                         nn::LayerNorm::make(store, name + ".norm1", d), nn::LayerNorm::make(store, name + ".norm2", d),
                         nn::LayerNorm::make(store, name + ".norm3", d),
                         nn::LayerNorm::make(store, name + ".norm4", d)});
    }
    for (std::size_t s = 1; s < enc.pyramid_levels; ++s) {
      const std::string name = "decoder.up" + std::to_string(s);
      upsample_.push_back(
          nn::ConvTranspose2x2::make(store, init, name + ".deconv", enc.level_channels(s - 1), enc.level_channels(s)));
      skip_.push_back(nn::Conv1x1::make(store, init, name + ".skip", enc.level_channels(s), enc.level_channels(s)));
    }
    const std::size_t c_out = enc.level_channels(enc.pyramid_levels - 1);
    query_head_ = {nn::Linear::make(store, init, "decoder.query.fc0", d, d),
                   nn::Linear::make(store, init, "decoder.query.fc1", d, d),
                   nn::Linear::make(store, init, "decoder.query.fc2", d, c_out)};
  }

  const TokenSet& tokens() const { return tokens_; }

  /// The three-layer query head applied to the final mask-token state.
  Varf mask_query(const Varf& mask_token_state) const {
    auto h = gelu(query_head_[0](mask_token_state));
    h = gelu(query_head_[1](h));
    return query_head_[2](h);
  }

  /// Probability map [H, W] for the enriched deepest features and the
  /// (possibly compensated) token sequence.
  Varf decode(const Varf& enriched, const std::vector<Varf>& token_seq, const encoder::FeaturePyramid& pyramid,
              std::size_t out_h, std::size_t out_w) const {
    if (token_seq.empty()) throw std::invalid_argument("himg_decode: token sequence is empty");
    expect_rank(enriched.shape(), 3, "himg_decode");
    const std::size_t d = enriched.dim(0), h0 = enriched.dim(1), w0 = enriched.dim(2);
    if (pyramid.levels.size() != enc_.pyramid_levels)
      throw ShapeError("himg_decode: pyramid has " + std::to_string(pyramid.levels.size()) + " levels, expected " +
                       std::to_string(enc_.pyramid_levels));
    for (std::size_t s = 0; s < pyramid.levels.size(); ++s)
      if (pyramid.levels[s].dim(1) != (h0 << s) || pyramid.levels[s].dim(2) != (w0 << s))
        throw ShapeError("himg_decode: pyramid level " + std::to_string(s) + " inconsistent with the enriched grid");

    std::vector<Varf> rows;
    for (const auto& t : token_seq) rows.push_back(reshape(t, {1, d}));
    auto tokens = concat(rows);
    auto image = grid_to_tokens(enriched);
    auto pe = grid_to_tokens(constant(temporal::spatiotemporal_pe(h0, w0, {0.0}, d).front()));

    for (const auto& layer : layers_) {
      tokens = layer.norm1(add(tokens, layer.token_self(tokens, tokens, tokens)));
      tokens = layer.norm2(add(tokens, layer.token_to_image(tokens, add(image, pe), image)));
      tokens = layer.norm3(add(tokens, layer.mlp(tokens)));
      image = layer.norm4(add(image, layer.image_to_token(add(image, pe), tokens, tokens)));
    }

    auto features = tokens_to_grid(image, h0, w0);
    for (std::size_t s = 0; s < upsample_.size(); ++s)
      features = gelu(add(upsample_[s](features), skip_[s](pyramid.levels[s + 1])));

    auto query = mask_query(slice(tokens, 0, 1));
    auto probs = sigmoid(mask_logits(query, features));
    return reshape(bilinear_resize(probs, out_h, out_w), {out_h, out_w});
  }

 private:
  encoder::EncoderConfig enc_;
  DecoderConfig config_;
  TokenSet tokens_;
  std::vector<TwoWayLayer> layers_;
  std::vector<nn::ConvTranspose2x2> upsample_;
  std::vector<nn::Conv1x1> skip_;
  std::vector<nn::Linear> query_head_;
};

}  // namespace iron::decoder

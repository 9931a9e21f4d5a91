#pragma once

#include <chrono>
#include <cmath>
#include <cstdint>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "iron/data/clip.hpp"
#include "iron/decoder/decoder.hpp"
#include "iron/encoder/encoder.hpp"
#include "iron/temporal/memory_attention.hpp"

namespace iron::pipeline {

struct ModelConfig {
  encoder::EncoderConfig encoder;
  temporal::TemporalConfig temporal;
  decoder::DecoderConfig decoder;
  std::uint64_t init_seed = 0;
};

/// Switches that select the ablation variant; none of them change the
/// parameter set.
struct RuntimeFlags {
  bool memory_enabled = true;
  bool sgmc_enabled = true;
  double tau = 0.05;
};

/// Offset that places the bootstrap entry just before the first frame.
inline constexpr double kBootstrapOffsetSeconds = 1e-3;

struct FrameFeatures {
  encoder::EncoderOutput backbone;
  encoder::FeaturePyramid pyramid;
  const Varf& deepest() const { return pyramid.deepest(); }
};

struct FrameOutput {
  FrameFeatures features;
  Varf enriched;
  Varf probabilities;  // [H, W]
  bool sgmc_active = false;
  double coverage = 0.0;
};

class IroNet {
 public:
  explicit IroNet(const ModelConfig& config)
      : config_(config),
        init_(config.init_seed),
        backbone_(config.encoder, params_, init_),
        neck_(config.encoder, params_, init_),
        memory_encoder_(config.encoder.embed_dim, config.temporal, params_, init_),
        memory_attention_(config.encoder.embed_dim, config.temporal, params_, init_),
        decoder_(config.encoder, config.decoder, params_, init_) {}

  IroNet(const IroNet&) = delete;
  IroNet& operator=(const IroNet&) = delete;

  const ModelConfig& config() const { return config_; }
  ParameterStore& parameters() { return params_; }
  const ParameterStore& parameters() const { return params_; }
  const encoder::VitEncoder& backbone() const { return backbone_; }
  const encoder::PyramidNeck& neck() const { return neck_; }
  const temporal::MemoryEncoder& memory_encoder() const { return memory_encoder_; }
  const temporal::MemoryAttention& memory_attention() const { return memory_attention_; }
  const decoder::MaskDecoder& decoder() const { return decoder_; }

  FrameFeatures features(const Tensor<float>& image) const {
    FrameFeatures f;
    f.backbone = backbone_.encode(image);
    f.pyramid = neck_.fuse(f.backbone);
    return f;
  }

  temporal::MemoryEntry memory_entry(const FrameFeatures& f, const Tensor<float>& mask, double timestamp) const {
    return memory_encoder_.encode(f.deepest(), mask, timestamp);
  }

  /// Entry built from the first frame's features and an all-empty mask.
  temporal::MemoryEntry bootstrap_entry(const FrameFeatures& f, const data::Frame& frame) const {
    return memory_entry(f, Tensor<float>({frame.height(), frame.width()}), frame.timestamp - kBootstrapOffsetSeconds);
  }

  /// Encode, enrich against the bank, gate tokens and decode one frame.
  FrameOutput forward(const data::Frame& frame, const temporal::MemoryBank& bank, decoder::AdtTask task,
                      const RuntimeFlags& flags) const {
    FrameOutput out;
    out.features = features(frame.image);
    return decode_from(std::move(out.features), frame, bank, task, flags);
  }

  FrameOutput decode_from(FrameFeatures feats, const data::Frame& frame, const temporal::MemoryBank& bank,
                          decoder::AdtTask task, const RuntimeFlags& flags) const {
    FrameOutput out;
    out.features = std::move(feats);
    const Varf& f0 = out.features.deepest();
    out.enriched = flags.memory_enabled ? memory_attention_.enrich(f0, bank, frame.timestamp) : f0;
    out.coverage = flags.memory_enabled ? bank.coverage_ratio() : 0.0;
    std::vector<Varf> tokens{decoder_.tokens().mask_token};
    if (flags.sgmc_enabled) tokens = decoder::sgmc_tokens(out.coverage, flags.tau, task, decoder_.tokens());
    out.sgmc_active = tokens.size() == 2;
    out.probabilities = decoder_.decode(out.enriched, tokens, out.features.pyramid, frame.height(), frame.width());
    return out;
  }

 private:
  ModelConfig config_;
  ParameterStore params_;
  Initializer init_;
  encoder::VitEncoder backbone_;
  encoder::PyramidNeck neck_;
  temporal::MemoryEncoder memory_encoder_;
  temporal::MemoryAttention memory_attention_;
  decoder::MaskDecoder decoder_;
};

/// One inference stream: owns its memory bank, processes frames in order and
/// stores its own predictions (foreground task) as memory.
class StreamingSession {
 public:
  StreamingSession(const IroNet& model, RuntimeFlags flags)
      : model_(model), flags_(flags), bank_(model.config().temporal.queue_len) {}

  const temporal::MemoryBank& bank() const { return bank_; }

  void reset() {
    bank_.reset();
    started_ = false;
  }

  decoder::PredictionRecord process(const data::Frame& input) {
    NoGradGuard no_grad;
    const auto start = std::chrono::steady_clock::now();
    const std::size_t p = model_.config().encoder.patch_size;
    const data::Frame* frame = &input;
    std::optional<data::Frame> resized;
    std::string warning;
    if (input.height() % p != 0 || input.width() % p != 0) {
      const std::size_t h = std::max(p, (input.height() + p / 2) / p * p);
      const std::size_t w = std::max(p, (input.width() + p / 2) / p * p);
      resized = data::Frame{bilinear_resize(constant(input.image), h, w).value(), input.timestamp};
      frame = &*resized;
      warning = "resized " + std::to_string(input.height()) + "x" + std::to_string(input.width()) + " to " +
                std::to_string(h) + "x" + std::to_string(w) + " for patch size " + std::to_string(p);
    }

    auto feats = model_.features(frame->image);
    if (flags_.memory_enabled && !started_) bank_.push(model_.bootstrap_entry(feats, *frame));
    started_ = true;
    auto out = model_.decode_from(std::move(feats), *frame, bank_, decoder::AdtTask::Foreground, flags_);

    decoder::PredictionRecord rec;
    rec.probabilities = out.probabilities.value();
    if (resized) {
      rec.probabilities = bilinear_resize(constant(rec.probabilities.reshaped({1, frame->height(), frame->width()})),
                                          input.height(), input.width())
                              .value()
                              .reshaped({input.height(), input.width()});
    }
    rec.binary_mask = decoder::binarize(rec.probabilities);
    rec.sgmc_active = out.sgmc_active;
    rec.coverage = out.coverage;
    rec.warning = warning;
    if (flags_.memory_enabled) {
      const auto mask = resized ? decoder::binarize(out.probabilities.value()) : rec.binary_mask;
      bank_.push(model_.memory_entry(out.features, mask, frame->timestamp));
    }
    rec.latency_ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - start).count();
    return rec;
  }

 private:
  const IroNet& model_;
  RuntimeFlags flags_;
  temporal::MemoryBank bank_;
  bool started_ = false;
};

}  // namespace iron::pipeline

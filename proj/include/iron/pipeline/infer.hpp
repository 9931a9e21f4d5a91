#pragma once

#include <vector>

#include "iron/pipeline/model.hpp"

namespace iron::pipeline {

struct InferenceResult {
  std::vector<decoder::PredictionRecord> records;
  double mean_fps = 0;  // excludes the first (warm-up) frame
};

/// Processes a sequence frame by frame in timestamp order with a fresh memory
/// bank (foreground task, predicted masks stored as memory).
inline InferenceResult streaming_infer(const IroNet& model, const std::vector<data::Frame>& frames,
                                       const RuntimeFlags& flags = {}) {
  StreamingSession session(model, flags);
  InferenceResult out;
  double ms = 0;
  for (std::size_t t = 0; t < frames.size(); ++t) {
    out.records.push_back(session.process(frames[t]));
    if (t > 0) ms += out.records.back().latency_ms;
  }
  if (frames.size() > 1 && ms > 0) out.mean_fps = 1000.0 * static_cast<double>(frames.size() - 1) / ms;
  return out;
}

inline InferenceResult streaming_infer(const IroNet& model, const data::SequenceClip& sequence,
                                       const RuntimeFlags& flags = {}) {
  sequence.validate();
  return streaming_infer(model, sequence.frames, flags);
}

}  // namespace iron::pipeline

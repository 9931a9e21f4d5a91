#pragma once

#include <vector>

#include "iron/eval/metrics.hpp"
#include "iron/pipeline/infer.hpp"

namespace iron::eval {

struct EvalReport {
  SegmentationMetrics metrics;
  TemporalConsistency consistency;  // mean over sequences
  double mean_fps = 0;              // mean over sequences
  std::size_t sequences = 0, frames = 0;
};

/// Streams every sequence through the model and scores its binary masks.
inline EvalReport evaluate(const pipeline::IroNet& model, const std::vector<data::SequenceClip>& sequences,
                           const pipeline::RuntimeFlags& flags = {}, Aggregation aggregation = Aggregation::Micro) {
  EvalReport report;
  std::vector<Tensor<float>> preds, truths;
  for (const auto& seq : sequences) {
    auto result = pipeline::streaming_infer(model, seq, flags);
    std::vector<Tensor<float>> masks;
    for (auto& r : result.records) masks.push_back(std::move(r.binary_mask));
    if (masks.size() >= 2) {
      const auto tc = temporal_consistency(masks);
      report.consistency.mean_consecutive_iou += tc.mean_consecutive_iou;
      report.consistency.flicker_rate += tc.flicker_rate;
    }
    report.mean_fps += result.mean_fps;
    report.frames += masks.size();
    for (std::size_t t = 0; t < masks.size(); ++t) {
      preds.push_back(std::move(masks[t]));
      truths.push_back(seq.masks[t]);
    }
    ++report.sequences;
  }
  report.metrics = segmentation_metrics(preds, truths, aggregation);
  if (report.sequences > 0) {
    const double n = static_cast<double>(report.sequences);
    report.consistency.mean_consecutive_iou /= n;
    report.consistency.flicker_rate /= n;
    report.mean_fps /= n;
  }
  return report;
}

}  // namespace iron::eval

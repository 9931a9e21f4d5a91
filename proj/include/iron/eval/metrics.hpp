#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#include "iron/numerics/tensor.hpp"

namespace iron::eval {

struct ConfusionCounts {
  std::uint64_t tp = 0, fp = 0, fn = 0, tn = 0;

  std::uint64_t total() const { return tp + fp + fn + tn; }
  ConfusionCounts& operator+=(const ConfusionCounts& o) {
    tp += o.tp, fp += o.fp, fn += o.fn, tn += o.tn;
    return *this;
  }
};

struct SegmentationMetrics {
  double precision = 0, recall = 0, f1 = 0, iou = 0;
  bool undefined = false;  // some ratio was 0/0 and reported as 0
};

struct TemporalConsistency {
  double mean_consecutive_iou = 0;
  double flicker_rate = 0;
};

enum class Aggregation { Micro, Macro };

inline ConfusionCounts confusion(const Tensor<float>& pred, const Tensor<float>& truth) {
  if (pred.shape() != truth.shape())
    throw ShapeError("confusion: " + to_string(pred.shape()) + " vs " + to_string(truth.shape()));
  ConfusionCounts c;
  for (std::size_t i = 0; i < pred.numel(); ++i) {
    const bool p = pred[i] > 0.5f, t = truth[i] > 0.5f;
    if (p && t) ++c.tp;
    else if (p) ++c.fp;
    else if (t) ++c.fn;
    else ++c.tn;
  }
  return c;
}

inline SegmentationMetrics metrics_from_counts(const ConfusionCounts& c) {
  SegmentationMetrics m;
  auto ratio = [&](double num, double den) {
    if (den == 0) {
      m.undefined = true;
      return 0.0;
    }
    return num / den;
  };
  const double tp = static_cast<double>(c.tp), fp = static_cast<double>(c.fp), fn = static_cast<double>(c.fn);
  m.precision = ratio(tp, tp + fp);
  m.recall = ratio(tp, tp + fn);
  // 2pr/(p+r) written on counts so the f1 = 2 iou / (1 + iou) identity holds exactly.
  m.f1 = ratio(2 * tp, 2 * tp + fp + fn);
  m.iou = ratio(tp, tp + fp + fn);
  return m;
}

/// Precision, recall, F1 and IoU of binary predictions. Micro accumulates
/// counts over the whole list; Macro averages per-pair metrics.
inline SegmentationMetrics segmentation_metrics(const std::vector<Tensor<float>>& predictions,
                                                const std::vector<Tensor<float>>& truths,
                                                Aggregation aggregation = Aggregation::Micro) {
  if (predictions.size() != truths.size())
    throw std::invalid_argument("segmentation_metrics: " + std::to_string(predictions.size()) + " predictions vs " +
                                std::to_string(truths.size()) + " truths");
  ConfusionCounts total;
  SegmentationMetrics macro;
  for (std::size_t i = 0; i < predictions.size(); ++i) {
    if (predictions[i].shape() != truths[i].shape())
      throw ShapeError("segmentation_metrics: pair " + std::to_string(i) + " has shapes " +
                       to_string(predictions[i].shape()) + " and " + to_string(truths[i].shape()));
    const auto c = confusion(predictions[i], truths[i]);
    total += c;
    if (aggregation == Aggregation::Macro) {
      const auto m = metrics_from_counts(c);
      macro.precision += m.precision, macro.recall += m.recall, macro.f1 += m.f1, macro.iou += m.iou;
      macro.undefined = macro.undefined || m.undefined;
    }
  }
  if (aggregation == Aggregation::Micro) return metrics_from_counts(total);
  if (predictions.empty()) return SegmentationMetrics{0, 0, 0, 0, true};
  const double n = static_cast<double>(predictions.size());
  macro.precision /= n, macro.recall /= n, macro.f1 /= n, macro.iou /= n;
  return macro;
}

/// Consecutive-frame IoU and label-flip rate of an ordered mask sequence.
/// Two empty masks count as IoU 1.
inline TemporalConsistency temporal_consistency(const std::vector<Tensor<float>>& masks) {
  if (masks.size() < 2) throw std::invalid_argument("temporal_consistency: need at least 2 masks");
  TemporalConsistency tc;
  for (std::size_t t = 0; t + 1 < masks.size(); ++t) {
    if (masks[t].shape() != masks[t + 1].shape())
      throw ShapeError("temporal_consistency: masks " + std::to_string(t) + " and " + std::to_string(t + 1) +
                       " differ in shape");
    const auto c = confusion(masks[t + 1], masks[t]);
    const std::uint64_t uni = c.tp + c.fp + c.fn;
    tc.mean_consecutive_iou += uni == 0 ? 1.0 : static_cast<double>(c.tp) / static_cast<double>(uni);
    tc.flicker_rate += static_cast<double>(c.fp + c.fn) / static_cast<double>(c.total());
  }
  const double pairs = static_cast<double>(masks.size() - 1);
  tc.mean_consecutive_iou /= pairs;
  tc.flicker_rate /= pairs;
  return tc;
}

}  // namespace iron::eval

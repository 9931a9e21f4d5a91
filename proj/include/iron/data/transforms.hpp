#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <set>
#include <stdexcept>
#include <string>
#include <vector>

#include "iron/data/clip.hpp"
#include "iron/numerics/conv.hpp"

namespace iron::data {

/// Indices of a uniform temporal subsampling with stride round(src_hz / dst_hz),
/// starting at 0.
inline std::vector<std::size_t> temporal_downsample(const std::vector<double>& timestamps, double src_hz,
                                                    double dst_hz) {
  if (!(dst_hz > 0)) throw DataError("temporal_downsample: target rate must be positive");
  if (dst_hz > src_hz) throw DataError("temporal_downsample: target rate exceeds source rate");
  for (std::size_t i = 1; i < timestamps.size(); ++i)
    if (!(timestamps[i] > timestamps[i - 1])) throw DataError("temporal_downsample: timestamps not increasing");
  const auto stride = static_cast<std::size_t>(std::max(1L, std::lround(src_hz / dst_hz)));
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < timestamps.size(); i += stride) out.push_back(i);
  return out;
}

struct AugmentParams {
  double scale_min = 0.75;
  double scale_max = 1.25;
  std::size_t crop_height = 96;
  std::size_t crop_width = 96;
  double hflip_prob = 0.5;
};

/// The single random draw shared by every frame of a clip.
struct AugmentDraw {
  std::size_t scaled_height = 0, scaled_width = 0;
  std::size_t crop_top = 0, crop_left = 0;
  std::size_t crop_height = 0, crop_width = 0;
  bool hflip = false;
};

inline AugmentDraw draw_augmentation(const AugmentParams& p, std::size_t height, std::size_t width,
                                     std::uint64_t seed) {
  if (p.scale_min <= 0 || p.scale_max < p.scale_min) throw DataError("augment: invalid scale range");
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  const double s = p.scale_min + (p.scale_max - p.scale_min) * unit(rng);
  AugmentDraw d;
  d.scaled_height = static_cast<std::size_t>(std::lround(static_cast<double>(height) * s));
  d.scaled_width = static_cast<std::size_t>(std::lround(static_cast<double>(width) * s));
  d.crop_height = p.crop_height;
  d.crop_width = p.crop_width;
  if (d.crop_height > d.scaled_height || d.crop_width > d.scaled_width)
    throw DataError("augment: crop " + std::to_string(p.crop_height) + "x" + std::to_string(p.crop_width) +
                    " larger than scaled frame " + std::to_string(d.scaled_height) + "x" +
                    std::to_string(d.scaled_width));
  d.crop_top = static_cast<std::size_t>(unit(rng) * static_cast<double>(d.scaled_height - d.crop_height + 1));
  d.crop_left = static_cast<std::size_t>(unit(rng) * static_cast<double>(d.scaled_width - d.crop_width + 1));
  d.crop_top = std::min(d.crop_top, d.scaled_height - d.crop_height);
  d.crop_left = std::min(d.crop_left, d.scaled_width - d.crop_width);
  d.hflip = unit(rng) < p.hflip_prob;
  return d;
}

namespace detail {
inline Tensor<float> nearest_resize_mask(const Tensor<float>& m, std::size_t out_h, std::size_t out_w) {
  const std::size_t h = m.dim(0), w = m.dim(1);
  if (out_h == h && out_w == w) return m;
  Tensor<float> out({out_h, out_w});
  for (std::size_t i = 0; i < out_h; ++i) {
    const auto sy = std::min(h - 1, static_cast<std::size_t>((static_cast<double>(i) + 0.5) * h / out_h));
    for (std::size_t j = 0; j < out_w; ++j) {
      const auto sx = std::min(w - 1, static_cast<std::size_t>((static_cast<double>(j) + 0.5) * w / out_w));
      out.at(i, j) = m.at(sy, sx);
    }
  }
  return out;
}

/// Crops (and optionally mirrors) the trailing two axes of a rank-2 or rank-3 tensor.
inline Tensor<float> crop_flip(const Tensor<float>& t, const AugmentDraw& d) {
  const bool planar = t.rank() == 3;
  const std::size_t c = planar ? t.dim(0) : 1, w = planar ? t.dim(2) : t.dim(1);
  const std::size_t h = planar ? t.dim(1) : t.dim(0);
  Shape shape = planar ? Shape{c, d.crop_height, d.crop_width} : Shape{d.crop_height, d.crop_width};
  Tensor<float> out(shape);
  for (std::size_t ch = 0; ch < c; ++ch)
    for (std::size_t i = 0; i < d.crop_height; ++i)
      for (std::size_t j = 0; j < d.crop_width; ++j) {
        const std::size_t sj = d.hflip ? d.crop_left + d.crop_width - 1 - j : d.crop_left + j;
        out[(ch * d.crop_height + i) * d.crop_width + j] = t[(ch * h + d.crop_top + i) * w + sj];
      }
  return out;
}
}  // namespace detail

/// Applies one drawn transform to a frame image ([c, H, W], bilinear).
inline Tensor<float> apply_to_image(const Tensor<float>& image, const AugmentDraw& d) {
  const auto scaled = bilinear_resize(constant(image), d.scaled_height, d.scaled_width).value();
  return detail::crop_flip(scaled, d);
}

/// Applies one drawn transform to a mask ([H, W], nearest neighbour).
inline Tensor<float> apply_to_mask(const Tensor<float>& mask, const AugmentDraw& d) {
  return detail::crop_flip(detail::nearest_resize_mask(mask, d.scaled_height, d.scaled_width), d);
}

/// Scale, crop and flip with one draw per clip applied identically to every
/// frame and mask.
inline SequenceClip augment_clip(const SequenceClip& clip, const AugmentParams& params, std::uint64_t seed) {
  if (clip.frames.empty()) return clip;
  const auto d = draw_augmentation(params, clip.height(), clip.width(), seed);
  SequenceClip out;
  out.sequence_id = clip.sequence_id;
  out.is_training_clip = clip.is_training_clip;
  for (std::size_t t = 0; t < clip.size(); ++t) {
    out.frames.push_back(Frame{apply_to_image(clip.frames[t].image, d), clip.frames[t].timestamp});
    out.masks.push_back(apply_to_mask(clip.masks[t], d));
  }
  return out;
}

struct ClipDraw {
  std::size_t gap = 0;
  std::vector<std::size_t> indices;
};

/// Frame indices {a, a+g, ..., a+queue_len*g} with g drawn uniformly from
/// intervals and a uniform over valid anchors.
template <typename Rng>
ClipDraw draw_clip_indices(std::size_t sequence_length, std::size_t queue_len, const std::set<std::size_t>& intervals,
                           Rng& rng) {
  if (intervals.empty()) throw DataError("sample_training_clip: empty interval set");
  if (*intervals.begin() == 0) throw DataError("sample_training_clip: intervals must be positive");
  const std::size_t max_gap = *intervals.rbegin();
  if (sequence_length < queue_len * max_gap + 1)
    throw DataError("sample_training_clip: sequence of " + std::to_string(sequence_length) +
                    " frames is shorter than queue_len*max(interval)+1 = " + std::to_string(queue_len * max_gap + 1));
  const std::vector<std::size_t> gaps(intervals.begin(), intervals.end());
  std::uniform_int_distribution<std::size_t> pick(0, gaps.size() - 1);
  ClipDraw d;
  d.gap = gaps[pick(rng)];
  std::uniform_int_distribution<std::size_t> anchor(0, sequence_length - 1 - queue_len * d.gap);
  const std::size_t a = anchor(rng);
  for (std::size_t i = 0; i <= queue_len; ++i) d.indices.push_back(a + i * d.gap);
  return d;
}

template <typename Rng>
SequenceClip sample_training_clip(const SequenceClip& sequence, std::size_t queue_len,
                                  const std::set<std::size_t>& intervals, Rng& rng) {
  auto clip = sequence.select(draw_clip_indices(sequence.size(), queue_len, intervals, rng).indices);
  clip.is_training_clip = true;
  return clip;
}

}  // namespace iron::data

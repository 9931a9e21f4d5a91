#pragma once

#include <algorithm>
#include <cmath>
#include <numbers>
#include <stdexcept>
#include <vector>

#include "iron/numerics/tensor.hpp"

namespace iron::temporal {

/// Channel split of a d-wide spatiotemporal embedding.
struct PeChannels {
  std::size_t time, y, x;
};

/// ceil(d/3) temporal channels; the remainder split evenly between y and x
/// (x takes the odd channel).
inline PeChannels pe_channels(std::size_t d) {
  const std::size_t t = (d + 2) / 3;
  const std::size_t rest = d - t;
  return {t, rest / 2, rest - rest / 2};
}

/// Writes `count` sinusoid channels of the normalized coordinate u in [0, 1].
/// Frequencies are geometric from pi/2 to 16 pi, interleaved (sin, cos).
inline void sinusoid(double u, std::size_t count, float* out, std::size_t stride) {
  const std::size_t freqs = (count + 1) / 2;
  for (std::size_t c = 0; c < count; ++c) {
    const std::size_t k = c / 2;
    const double ratio = freqs > 1 ? static_cast<double>(k) / static_cast<double>(freqs - 1) : 0.0;
    const double omega = 0.5 * std::numbers::pi * std::pow(32.0, ratio);
    out[c * stride] = static_cast<float>(c % 2 == 0 ? std::sin(omega * u) : std::cos(omega * u));
  }
}

/// One [d, h, w] embedding grid per timestamp. Channels are
/// [time | y | x]; time is normalized so the first (oldest) timestamp maps to
/// 0 and the last (current) one to 1; y and x use cell centres over the grid.
inline std::vector<Tensor<float>> spatiotemporal_pe(std::size_t h, std::size_t w, const std::vector<double>& timestamps,
                                                    std::size_t d) {
  if (timestamps.empty()) throw std::invalid_argument("spatiotemporal_pe: at least one timestamp required");
  if (d < 3 || h == 0 || w == 0) throw std::invalid_argument("spatiotemporal_pe: need d >= 3 and a non-empty grid");
  const auto ch = pe_channels(d);
  const double t0 = timestamps.front(), t1 = timestamps.back();
  const double span = t1 - t0;
  const std::size_t hw = h * w;

  // The spatial half is shared by every timestamp.
  Tensor<float> spatial({d, h, w});
  for (std::size_t i = 0; i < h; ++i)
    for (std::size_t j = 0; j < w; ++j) {
      float* cell = spatial.data() + i * w + j;
      sinusoid((static_cast<double>(i) + 0.5) / static_cast<double>(h), ch.y, cell + ch.time * hw, hw);
      sinusoid((static_cast<double>(j) + 0.5) / static_cast<double>(w), ch.x, cell + (ch.time + ch.y) * hw, hw);
    }

  std::vector<Tensor<float>> out;
  std::vector<float> temporal(ch.time);
  for (double ts : timestamps) {
    const double u = span > 0 ? (ts - t0) / span : 1.0;
    sinusoid(u, ch.time, temporal.data(), 1);
    Tensor<float> grid = spatial;
    for (std::size_t c = 0; c < ch.time; ++c) std::fill_n(grid.data() + c * hw, hw, temporal[c]);
    out.push_back(std::move(grid));
  }
  return out;
}

}  // namespace iron::temporal

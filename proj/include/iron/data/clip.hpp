#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#include "iron/data/png_io.hpp"
#include "iron/numerics/tensor.hpp"

namespace iron::data {

struct DataError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// One input frame: image is [channels, H, W] with values in [0, 1].
struct Frame {
  Tensor<float> image;
  double timestamp = 0.0;

  std::size_t height() const { return image.dim(1); }
  std::size_t width() const { return image.dim(2); }
};

/// Ordered frames with index-aligned binary masks ([H, W], values {0, 1}).
struct SequenceClip {
  std::string sequence_id;
  std::vector<Frame> frames;
  std::vector<Tensor<float>> masks;
  bool is_training_clip = false;

  std::size_t size() const { return frames.size(); }
  std::size_t height() const { return frames.empty() ? 0 : frames.front().height(); }
  std::size_t width() const { return frames.empty() ? 0 : frames.front().width(); }

  /// Throws DataError when the structural invariants do not hold.
  void validate() const {
    if (frames.size() != masks.size())
      throw DataError(sequence_id + ": " + std::to_string(frames.size()) + " frames but " +
                      std::to_string(masks.size()) + " masks");
    for (std::size_t t = 0; t < frames.size(); ++t) {
      if (frames[t].height() != height() || frames[t].width() != width())
        throw DataError(sequence_id + ": frame " + std::to_string(t) + " has a different size");
      if (masks[t].rank() != 2 || masks[t].dim(0) != height() || masks[t].dim(1) != width())
        throw DataError(sequence_id + ": mask " + std::to_string(t) + " does not match the frame size");
      if (t > 0 && !(frames[t].timestamp > frames[t - 1].timestamp))
        throw DataError(sequence_id + ": timestamps not strictly increasing at index " + std::to_string(t));
    }
  }

  /// Sub-clip with the given frame indices, in the given order.
  SequenceClip select(const std::vector<std::size_t>& indices) const {
    SequenceClip out;
    out.sequence_id = sequence_id;
    out.is_training_clip = is_training_clip;
    for (auto i : indices) {
      out.frames.push_back(frames.at(i));
      out.masks.push_back(masks.at(i));
    }
    return out;
  }
};

inline Tensor<float> image_to_tensor(const Image8& img) {
  Tensor<float> t({img.channels, img.height, img.width});
  for (std::size_t y = 0; y < img.height; ++y)
    for (std::size_t x = 0; x < img.width; ++x)
      for (std::size_t c = 0; c < img.channels; ++c)
        t.at(c, y, x) = static_cast<float>(img.pixels[(y * img.width + x) * img.channels + c]) / 255.0f;
  return t;
}

inline Image8 tensor_to_image(const Tensor<float>& t) {
  Image8 img{t.dim(2), t.dim(1), t.dim(0), {}};
  img.pixels.resize(t.numel());
  for (std::size_t y = 0; y < img.height; ++y)
    for (std::size_t x = 0; x < img.width; ++x)
      for (std::size_t c = 0; c < img.channels; ++c) {
        const float v = std::clamp(t.at(c, y, x), 0.0f, 1.0f);
        img.pixels[(y * img.width + x) * img.channels + c] = static_cast<std::uint8_t>(std::lround(v * 255.0f));
      }
  return img;
}

/// 8-bit single-channel mask: values >= 128 decode to freespace (1).
inline Tensor<float> image_to_mask(const Image8& img) {
  if (img.channels != 1) throw DataError("mask images must be single-channel");
  Tensor<float> m({img.height, img.width});
  for (std::size_t i = 0; i < m.numel(); ++i) m[i] = img.pixels[i] >= 128 ? 1.0f : 0.0f;
  return m;
}

/// Encodes a binary mask as 0 / 255.
inline Image8 mask_to_image(const Tensor<float>& m) {
  Image8 img{m.dim(1), m.dim(0), 1, {}};
  img.pixels.resize(m.numel());
  for (std::size_t i = 0; i < m.numel(); ++i) img.pixels[i] = m[i] > 0.5f ? 255 : 0;
  return img;
}

inline double freespace_fraction(const Tensor<float>& mask) {
  std::size_t ones = 0;
  for (float v : mask.values()) ones += v > 0.5f ? 1 : 0;
  return static_cast<double>(ones) / static_cast<double>(mask.numel());
}

inline bool is_binary(const Tensor<float>& mask) {
  return std::all_of(mask.values().begin(), mask.values().end(), [](float v) { return v == 0.0f || v == 1.0f; });
}

}  // namespace iron::data

#pragma once

// Procedural off-road sequences: a trapezoidal road corridor seen from a
// forward camera over a low-contrast, drifting thermal-like texture.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <numbers>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "iron/data/clip.hpp"
#include "iron/data/png_io.hpp"

namespace iron::data {

struct SyntheticSpec {
  std::size_t n_sequences = 25;
  std::size_t frames_per_sequence = 40;
  std::size_t height = 128;
  std::size_t width = 128;
  double road_contrast = 0.15;
  double noise_sigma = 0.10;
  double turn_rate = 0.04;        // max per-frame change of the far-field curvature, fraction of width
  double occlusion_prob = 0.5;    // per sequence
  std::size_t occlusion_len = 5;  // frames
  int jitter_px = 2;
  std::uint64_t seed = 0;
  std::size_t patch_size = 8;
  double frame_rate_hz = 2.5;
  double texture_amplitude = 0.10;  // per sinusoid
  double train_fraction = 0.8;

  void validate() const {
    if (n_sequences == 0 || frames_per_sequence == 0) throw DataError("synthetic spec: empty dataset requested");
    if (patch_size == 0 || width < 4 * patch_size || height < 4 * patch_size)
      throw DataError("synthetic spec: frame " + std::to_string(height) + "x" + std::to_string(width) +
                      " is degenerate for patch size " + std::to_string(patch_size));
    if (width % patch_size || height % patch_size)
      throw DataError("synthetic spec: frame size must be a multiple of the patch size");
    if (occlusion_len >= frames_per_sequence) throw DataError("synthetic spec: occlusion_len must be < frames");
    if (!(road_contrast > 0)) throw DataError("synthetic spec: road_contrast must be positive");
    if (occlusion_prob < 0 || occlusion_prob > 1) throw DataError("synthetic spec: occlusion_prob outside [0,1]");
  }
};

struct DatasetSummary {
  std::size_t train_sequences = 0;
  std::size_t test_sequences = 0;
  std::size_t frames = 0;
  std::vector<std::string> train_ids, test_ids;
};

inline std::string sequence_name(std::size_t index) {
  std::ostringstream os;
  os << "seq_" << std::setw(4) << std::setfill('0') << index;
  return os.str();
}

inline std::string frame_filename(std::size_t index) {
  std::ostringstream os;
  os << std::setw(6) << std::setfill('0') << index << ".png";
  return os.str();
}

/// Renders one sequence in memory. Deterministic in (spec.seed, index).
inline SequenceClip generate_sequence(const SyntheticSpec& spec, std::size_t index) {
  spec.validate();
  std::mt19937_64 rng(spec.seed * 1000003ULL + index * 7919ULL + 17ULL);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  auto uniform = [&](double lo, double hi) { return lo + (hi - lo) * unit(rng); };
  std::normal_distribution<double> gauss(0.0, 1.0);

  const double H = static_cast<double>(spec.height), W = static_cast<double>(spec.width);
  const std::size_t T = spec.frames_per_sequence;

  struct Wave {
    double kx, ky, phase, drift, amp;
  };
  std::array<Wave, 6> waves{};
  for (auto& w : waves) {
    const double freq = uniform(1.0, 5.0), angle = uniform(0.0, 2 * std::numbers::pi);
    w = {freq * std::cos(angle) / W, freq * std::sin(angle) / H, uniform(0, 2 * std::numbers::pi), uniform(-0.6, 0.6),
         spec.texture_amplitude * uniform(0.5, 1.5)};
  }

  const double horizon = H * uniform(0.30, 0.45);
  const double half_bottom = W * uniform(0.22, 0.36);
  const double half_top = W * uniform(0.02, 0.06);
  const double base = uniform(0.35, 0.55);
  double curvature = uniform(-0.15, 0.15);
  double offset = uniform(-0.1, 0.1) * W;

  std::size_t occ_start = T, occ_end = T;
  if (unit(rng) < spec.occlusion_prob) {
    occ_start = 1 + static_cast<std::size_t>(unit(rng) * static_cast<double>(T - spec.occlusion_len - 1));
    occ_start = std::min(occ_start, T - spec.occlusion_len);
    occ_end = occ_start + spec.occlusion_len;
  }

  SequenceClip clip;
  clip.sequence_id = sequence_name(index);
  std::vector<double> raw(spec.height * spec.width);
  std::vector<float> road(spec.height * spec.width);
  for (std::size_t t = 0; t < T; ++t) {
    if (t > 0) {
      curvature = std::clamp(curvature + uniform(-spec.turn_rate, spec.turn_rate), -0.3, 0.3);
      offset = std::clamp(offset + 0.02 * W * gauss(rng), -0.2 * W, 0.2 * W);
    }
    const bool occluded = t >= occ_start && t < occ_end;
    const int dx = spec.jitter_px > 0 ? static_cast<int>(std::lround(uniform(-spec.jitter_px, spec.jitter_px))) : 0;
    const int dy = spec.jitter_px > 0 ? static_cast<int>(std::lround(uniform(-spec.jitter_px, spec.jitter_px))) : 0;

    for (std::size_t y = 0; y < spec.height; ++y) {
      const double yc = static_cast<double>(y) + 0.5;
      const double depth = (yc - horizon) / (H - horizon);  // 0 at horizon, 1 at bottom edge
      for (std::size_t x = 0; x < spec.width; ++x) {
        bool inside = false;
        if (depth > 0) {
          const double centre = 0.5 * W + offset * depth + curvature * W * (1 - depth) * (1 - depth);
          const double half = half_top + (half_bottom - half_top) * depth;
          inside = std::abs(static_cast<double>(x) + 0.5 - centre) <= half;
        }
        road[y * spec.width + x] = inside && !occluded ? 1.0f : 0.0f;
        double tex = 0;
        for (const auto& w : waves)
          tex += w.amp * std::sin(2 * std::numbers::pi * (w.kx * x + w.ky * y) + w.phase + w.drift * t);
        raw[y * spec.width + x] = base + tex + (road[y * spec.width + x] > 0 ? spec.road_contrast : 0.0);
      }
    }

    Frame frame{Tensor<float>({1, spec.height, spec.width}), static_cast<double>(t) / spec.frame_rate_hz};
    Tensor<float> mask({spec.height, spec.width});
    for (std::size_t y = 0; y < spec.height; ++y)
      for (std::size_t x = 0; x < spec.width; ++x) {
        const auto sy = static_cast<std::size_t>(std::clamp<long>(long(y) - dy, 0, long(spec.height) - 1));
        const auto sx = static_cast<std::size_t>(std::clamp<long>(long(x) - dx, 0, long(spec.width) - 1));
        const double v = raw[sy * spec.width + sx] + spec.noise_sigma * gauss(rng);
        frame.image.at(0, y, x) = static_cast<float>(std::clamp(v, 0.0, 1.0));
        mask.at(y, x) = road[sy * spec.width + sx];
      }
    clip.frames.push_back(std::move(frame));
    clip.masks.push_back(std::move(mask));
  }
  return clip;
}

/// Deterministic sequence-level split: a seeded permutation, the first
/// round(train_fraction * n) ids go to training.
inline std::pair<std::vector<std::string>, std::vector<std::string>> synthetic_split(const SyntheticSpec& spec) {
  std::vector<std::size_t> order(spec.n_sequences);
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  std::mt19937_64 rng(spec.seed ^ 0x5eed5eedULL);
  std::shuffle(order.begin(), order.end(), rng);
  auto n_train = static_cast<std::size_t>(std::lround(spec.train_fraction * static_cast<double>(spec.n_sequences)));
  if (spec.n_sequences > 1) n_train = std::clamp<std::size_t>(n_train, 1, spec.n_sequences - 1);
  std::vector<std::string> train, test;
  for (std::size_t i = 0; i < order.size(); ++i) (i < n_train ? train : test).push_back(sequence_name(order[i]));
  std::sort(train.begin(), train.end());
  std::sort(test.begin(), test.end());
  return {train, test};
}

inline void write_sequence(const std::filesystem::path& root, const SequenceClip& clip) {
  namespace fs = std::filesystem;
  const fs::path dir = root / "sequences" / clip.sequence_id;
  fs::create_directories(dir / "frames");
  fs::create_directories(dir / "masks");
  std::ofstream stamps(dir / "timestamps.txt");
  if (!stamps) throw IoError("cannot write " + (dir / "timestamps.txt").string());
  stamps << std::fixed << std::setprecision(6);
  for (std::size_t t = 0; t < clip.size(); ++t) {
    write_png(dir / "frames" / frame_filename(t), tensor_to_image(clip.frames[t].image));
    write_png(dir / "masks" / frame_filename(t), mask_to_image(clip.masks[t]));
    stamps << clip.frames[t].timestamp << '\n';
  }
}

inline void write_splits(const std::filesystem::path& root, const std::vector<std::string>& train,
                         const std::vector<std::string>& test) {
  std::ofstream out(root / "splits.json");
  if (!out) throw IoError("cannot write " + (root / "splits.json").string());
  out << nlohmann::json{{"train", train}, {"test", test}}.dump(2) << '\n';
}

inline DatasetSummary generate_synthetic_dataset(const SyntheticSpec& spec, const std::filesystem::path& out_dir) {
  spec.validate();
  std::error_code ec;
  std::filesystem::create_directories(out_dir, ec);
  if (ec || !std::filesystem::is_directory(out_dir)) throw IoError("cannot create output directory " + out_dir.string());
  for (std::size_t i = 0; i < spec.n_sequences; ++i) write_sequence(out_dir, generate_sequence(spec, i));
  auto [train, test] = synthetic_split(spec);
  write_splits(out_dir, train, test);
  DatasetSummary summary;
  summary.train_sequences = train.size();
  summary.test_sequences = test.size();
  summary.frames = spec.n_sequences * spec.frames_per_sequence;
  summary.train_ids = std::move(train);
  summary.test_ids = std::move(test);
  return summary;
}

}  // namespace iron::data

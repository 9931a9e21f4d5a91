#pragma once

// Reader for the on-disk dataset layout:
//   root/sequences/<id>/frames/<%06d>.png
//   root/sequences/<id>/masks/<%06d>.png
//   root/sequences/<id>/timestamps.txt
//   root/splits.json   {"train": [ids], "test": [ids]}

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <set>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "iron/data/clip.hpp"
#include "iron/data/png_io.hpp"

namespace iron::data {

enum class Split { Train, Test };

inline const char* split_name(Split s) { return s == Split::Train ? "train" : "test"; }

inline Split parse_split(const std::string& s) {
  if (s == "train") return Split::Train;
  if (s == "test") return Split::Test;
  throw DataError("unknown split '" + s + "' (expected train or test)");
}

struct SplitIds {
  std::vector<std::string> train, test;
};

inline SplitIds read_splits(const std::filesystem::path& root) {
  const auto path = root / "splits.json";
  std::ifstream in(path);
  if (!in) throw DataError("missing splits file " + path.string());
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw DataError("malformed splits file: " + std::string(e.what()));
  }
  SplitIds ids;
  try {
    ids.train = j.at("train").get<std::vector<std::string>>();
    ids.test = j.at("test").get<std::vector<std::string>>();
  } catch (const nlohmann::json::exception& e) {
    throw DataError("splits file must hold string lists 'train' and 'test': " + std::string(e.what()));
  }
  std::set<std::string> train(ids.train.begin(), ids.train.end());
  for (const auto& id : ids.test)
    if (train.count(id)) throw DataError("sequence '" + id + "' appears in both splits");
  return ids;
}

inline std::vector<double> read_timestamps(const std::filesystem::path& file) {
  std::ifstream in(file);
  if (!in) throw DataError("missing timestamps file " + file.string());
  std::vector<double> stamps;
  std::string line;
  while (std::getline(in, line)) {
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      stamps.push_back(std::stod(line));
    } catch (const std::exception&) {
      throw DataError("bad timestamp '" + line + "' in " + file.string());
    }
  }
  return stamps;
}

namespace detail {

/// (index, path) of every index-named PNG under dir/frames, sorted by index,
/// checked against dir/timestamps.txt.
inline std::vector<std::pair<long, std::filesystem::path>> list_frames(const std::filesystem::path& dir,
                                                                      const std::string& id,
                                                                      std::vector<double>& stamps) {
  namespace fs = std::filesystem;
  if (!fs::is_directory(dir / "frames")) throw DataError("sequence '" + id + "' has no frames directory");
  std::vector<std::pair<long, fs::path>> frames;
  for (const auto& entry : fs::directory_iterator(dir / "frames")) {
    if (entry.path().extension() != ".png") continue;
    try {
      frames.emplace_back(std::stol(entry.path().stem().string()), entry.path());
    } catch (const std::exception&) {
      throw DataError("frame file '" + entry.path().filename().string() + "' of sequence '" + id +
                      "' is not index-named");
    }
  }
  std::sort(frames.begin(), frames.end());
  stamps = read_timestamps(dir / "timestamps.txt");
  if (stamps.size() != frames.size())
    throw DataError("sequence '" + id + "': " + std::to_string(frames.size()) + " frames but " +
                    std::to_string(stamps.size()) + " timestamps");
  for (std::size_t t = 1; t < stamps.size(); ++t)
    if (!(stamps[t] > stamps[t - 1]))
      throw DataError("sequence '" + id + "': non-monotonic timestamps at index " + std::to_string(t));
  return frames;
}

}  // namespace detail

/// Loads one sequence directory. Frames are ordered by filename index.
inline SequenceClip load_sequence_dir(const std::filesystem::path& dir, const std::string& id) {
  std::vector<double> stamps;
  const auto frames = detail::list_frames(dir, id, stamps);
  SequenceClip clip;
  clip.sequence_id = id;
  for (std::size_t t = 0; t < frames.size(); ++t) {
    const auto mask_path = dir / "masks" / frames[t].second.filename();
    if (!std::filesystem::exists(mask_path))
      throw DataError("sequence '" + id + "': missing mask for frame index " + std::to_string(frames[t].first));
    clip.frames.push_back(Frame{image_to_tensor(read_png(frames[t].second)), stamps[t]});
    clip.masks.push_back(image_to_mask(read_png(mask_path)));
  }
  clip.validate();
  return clip;
}

/// Frames and timestamps of a sequence directory; masks are not required.
inline std::vector<Frame> load_frames(const std::filesystem::path& dir) {
  std::vector<double> stamps;
  const auto frames = detail::list_frames(dir, dir.filename().string(), stamps);
  std::vector<Frame> out;
  for (std::size_t t = 0; t < frames.size(); ++t)
    out.push_back(Frame{image_to_tensor(read_png(frames[t].second)), stamps[t]});
  return out;
}

inline std::vector<SequenceClip> load_sequences(const std::filesystem::path& root, Split split) {
  const auto ids = read_splits(root);
  const auto& wanted = split == Split::Train ? ids.train : ids.test;
  std::vector<SequenceClip> out;
  for (const auto& id : wanted) {
    const auto dir = root / "sequences" / id;
    if (!std::filesystem::is_directory(dir)) throw DataError("unknown sequence id '" + id + "' in split file");
    out.push_back(load_sequence_dir(dir, id));
    out.back().is_training_clip = split == Split::Train;
  }
  return out;
}

/// Fraction of freespace pixels over every mask of the given sequences.
inline double freespace_pixel_frequency(const std::vector<SequenceClip>& sequences) {
  double ones = 0, total = 0;
  for (const auto& s : sequences)
    for (const auto& m : s.masks) {
      for (float v : m.values()) ones += v > 0.5f ? 1 : 0;
      total += static_cast<double>(m.numel());
    }
  return total > 0 ? ones / total : 0.0;
}

}  // namespace iron::data

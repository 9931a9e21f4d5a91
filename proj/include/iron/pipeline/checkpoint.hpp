#pragma once

// Binary checkpoint: magic "IRONCKPT", u32 version, u32 length + UTF-8 JSON
// config, u32 tensor count, then per tensor: u32 name length, name, u8 dtype
// tag (0 = f32), u32 rank, u64 dims, little-endian payload.

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <memory>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "iron/pipeline/config_json.hpp"

namespace iron::pipeline {

struct CheckpointError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

inline constexpr char kCheckpointMagic[8] = {'I', 'R', 'O', 'N', 'C', 'K', 'P', 'T'};
inline constexpr std::uint32_t kCheckpointVersion = 1;
inline constexpr std::uint8_t kDtypeF32 = 0;

struct Checkpoint {
  std::uint32_t format_version = kCheckpointVersion;
  std::string config_text;  // JSON: {"train": ..., "metadata": {...}}
  std::vector<std::pair<std::string, Tensor<float>>> tensors;

  nlohmann::json config() const { return nlohmann::json::parse(config_text); }
};

namespace detail {

class Writer {
 public:
  void bytes(const void* p, std::size_t n) {
    const auto* c = static_cast<const char*>(p);
    out_.insert(out_.end(), c, c + n);
  }
  template <typename U>
  void le(U v) {
    for (std::size_t i = 0; i < sizeof(U); ++i) out_.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
  }
  std::string take() { return std::move(out_); }

 private:
  std::string out_;
};

class Reader {
 public:
  explicit Reader(const std::string& in) : in_(in) {}
  bool has(std::size_t n) const { return in_.size() - pos_ >= n; }
  template <typename U>
  U le(const std::string& what) {
    need(sizeof(U), what);
    U v = 0;
    for (std::size_t i = 0; i < sizeof(U); ++i)
      v |= static_cast<U>(static_cast<unsigned char>(in_[pos_ + i])) << (8 * i);
    pos_ += sizeof(U);
    return v;
  }
  std::string str(std::size_t n, const std::string& what) {
    need(n, what);
    std::string s = in_.substr(pos_, n);
    pos_ += n;
    return s;
  }
  void need(std::size_t n, const std::string& what) const {
    if (!has(n)) throw CheckpointError("truncated checkpoint: file ends inside " + what);
  }
  bool done() const { return pos_ == in_.size(); }

 private:
  const std::string& in_;
  std::size_t pos_ = 0;
};

}  // namespace detail

inline std::string serialize_checkpoint(const Checkpoint& c) {
  detail::Writer w;
  w.bytes(kCheckpointMagic, sizeof kCheckpointMagic);
  w.le<std::uint32_t>(c.format_version);
  w.le<std::uint32_t>(static_cast<std::uint32_t>(c.config_text.size()));
  w.bytes(c.config_text.data(), c.config_text.size());
  w.le<std::uint32_t>(static_cast<std::uint32_t>(c.tensors.size()));
  for (const auto& [name, t] : c.tensors) {
    w.le<std::uint32_t>(static_cast<std::uint32_t>(name.size()));
    w.bytes(name.data(), name.size());
    w.le<std::uint8_t>(kDtypeF32);
    w.le<std::uint32_t>(static_cast<std::uint32_t>(t.rank()));
    for (std::size_t d : t.shape()) w.le<std::uint64_t>(d);
    for (float v : t.values()) w.le<std::uint32_t>(std::bit_cast<std::uint32_t>(v));
  }
  return w.take();
}

inline Checkpoint deserialize_checkpoint(const std::string& bytes) {
  detail::Reader r(bytes);
  if (!r.has(sizeof kCheckpointMagic) || std::memcmp(bytes.data(), kCheckpointMagic, sizeof kCheckpointMagic) != 0)
    throw CheckpointError("bad magic: not an IRONCKPT checkpoint");
  r.str(sizeof kCheckpointMagic, "magic");
  Checkpoint c;
  c.format_version = r.le<std::uint32_t>("format version");
  if (c.format_version != kCheckpointVersion)
    throw CheckpointError("unsupported checkpoint version " + std::to_string(c.format_version) + " (expected " +
                          std::to_string(kCheckpointVersion) + ")");
  c.config_text = r.str(r.le<std::uint32_t>("config length"), "config text");
  const auto count = r.le<std::uint32_t>("tensor count");
  for (std::uint32_t i = 0; i < count; ++i) {
    const std::string where = "tensor #" + std::to_string(i);
    std::string name = r.str(r.le<std::uint32_t>(where + " name length"), where + " name");
    const std::string label = "tensor '" + name + "'";
    const auto dtype = r.le<std::uint8_t>(label + " dtype");
    if (dtype != kDtypeF32) throw CheckpointError(label + ": unsupported dtype tag " + std::to_string(dtype));
    const auto rank = r.le<std::uint32_t>(label + " rank");
    Shape shape;
    std::uint64_t n = 1;
    for (std::uint32_t k = 0; k < rank; ++k) {
      shape.push_back(static_cast<std::size_t>(r.le<std::uint64_t>(label + " dims")));
      n *= shape.back();
    }
    r.need(n * sizeof(float), label + " payload");
    std::vector<float> data(n);
    for (auto& v : data) v = std::bit_cast<float>(r.le<std::uint32_t>(label + " payload"));
    c.tensors.emplace_back(std::move(name), Tensor<float>(std::move(shape), std::move(data)));
  }
  if (!r.done()) throw CheckpointError("checkpoint has trailing bytes after the last tensor");
  return c;
}

inline void save_checkpoint(const std::filesystem::path& path, const Checkpoint& c) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw CheckpointError("cannot write checkpoint " + path.string());
  const auto bytes = serialize_checkpoint(c);
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw CheckpointError("failed writing checkpoint " + path.string());
}

inline Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw CheckpointError("cannot open checkpoint " + path.string());
  const std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return deserialize_checkpoint(bytes);
}

struct TrainingMetadata {
  std::size_t epoch = 0;
  std::uint64_t seed = 0;
  std::vector<double> loss_curve;  // mean loss per epoch
};

inline Checkpoint make_checkpoint(const IroNet& model, const TrainConfig& config, const TrainingMetadata& meta) {
  Checkpoint c;
  TrainConfig snapshot = config;
  snapshot.model = model.config();
  nlohmann::json j = {{"train", snapshot},
                      {"metadata", {{"epoch", meta.epoch}, {"seed", meta.seed}, {"loss_curve", meta.loss_curve}}}};
  c.config_text = j.dump(2);
  for (const auto& [name, v] : model.parameters().entries()) c.tensors.emplace_back(name, v.value());
  return c;
}

inline Checkpoint make_checkpoint(const TrainResult& result, const TrainConfig& config) {
  TrainingMetadata meta;
  meta.epoch = result.epochs.size();
  meta.seed = config.seed;
  for (const auto& e : result.epochs) meta.loss_curve.push_back(e.mean_loss);
  return make_checkpoint(*result.model, config, meta);
}

inline TrainConfig checkpoint_train_config(const Checkpoint& c) {
  const auto j = c.config();
  TrainConfig config;
  if (j.contains("train")) j.at("train").get_to(config);
  return config;
}

/// Rebuilds the model described by the checkpoint and loads its tensors.
inline std::unique_ptr<IroNet> load_model(const Checkpoint& c) {
  auto model = std::make_unique<IroNet>(checkpoint_train_config(c).model);
  auto& params = model->parameters();
  if (c.tensors.size() != params.size())
    throw CheckpointError("checkpoint has " + std::to_string(c.tensors.size()) + " tensors, model expects " +
                          std::to_string(params.size()));
  for (const auto& [name, t] : c.tensors) {
    if (!params.contains(name)) throw CheckpointError("checkpoint tensor '" + name + "' is not a model parameter");
    if (params.get(name).shape() != t.shape())
      throw CheckpointError("checkpoint tensor '" + name + "' has shape " + to_string(t.shape()) + ", expected " +
                            to_string(params.get(name).shape()));
    params.assign(name, t);
  }
  return model;
}

}  // namespace iron::pipeline

#pragma once

#include <nlohmann/json.hpp>

#include "iron/pipeline/train.hpp"

namespace iron::encoder {

inline void to_json(nlohmann::json& j, const EncoderConfig& c) {
  j = {{"in_channels", c.in_channels}, {"patch_size", c.patch_size},       {"embed_dim", c.embed_dim},
       {"depth", c.depth},             {"heads", c.heads},                 {"mlp_ratio", c.mlp_ratio},
       {"pyramid_levels", c.pyramid_levels}, {"pool_bins", c.pool_bins},   {"pos_grid", c.pos_grid},
       {"use_pos_embed", c.use_pos_embed}, {"stem", c.stem},          {"stem_channels", c.stem_channels}};
}

inline void from_json(const nlohmann::json& j, EncoderConfig& c) {
  EncoderConfig d;
  c.in_channels = j.value("in_channels", d.in_channels);
  c.patch_size = j.value("patch_size", d.patch_size);
  c.embed_dim = j.value("embed_dim", d.embed_dim);
  c.depth = j.value("depth", d.depth);
  c.heads = j.value("heads", d.heads);
  c.mlp_ratio = j.value("mlp_ratio", d.mlp_ratio);
  c.pyramid_levels = j.value("pyramid_levels", d.pyramid_levels);
  c.pool_bins = j.value("pool_bins", d.pool_bins);
  c.pos_grid = j.value("pos_grid", d.pos_grid);
  c.use_pos_embed = j.value("use_pos_embed", d.use_pos_embed);
  c.stem = j.value("stem", d.stem);
  c.stem_channels = j.value("stem_channels", d.stem_channels);
}

}  // namespace iron::encoder

namespace iron::temporal {

inline void to_json(nlohmann::json& j, const TemporalConfig& c) {
  j = {{"blocks", c.blocks}, {"heads", c.heads}, {"queue_len", c.queue_len}, {"kernel", c.kernel},
       {"mlp_ratio", c.mlp_ratio}, {"mask_gain", c.mask_gain}};
}

inline void from_json(const nlohmann::json& j, TemporalConfig& c) {
  TemporalConfig d;
  c.blocks = j.value("blocks", d.blocks);
  c.heads = j.value("heads", d.heads);
  c.queue_len = j.value("queue_len", d.queue_len);
  c.kernel = j.value("kernel", d.kernel);
  c.mlp_ratio = j.value("mlp_ratio", d.mlp_ratio);
  c.mask_gain = j.value("mask_gain", d.mask_gain);
}

}  // namespace iron::temporal

namespace iron::decoder {

inline void to_json(nlohmann::json& j, const DecoderConfig& c) {
  j = {{"layers", c.layers}, {"heads", c.heads}, {"mlp_ratio", c.mlp_ratio}};
}

inline void from_json(const nlohmann::json& j, DecoderConfig& c) {
  DecoderConfig d;
  c.layers = j.value("layers", d.layers);
  c.heads = j.value("heads", d.heads);
  c.mlp_ratio = j.value("mlp_ratio", d.mlp_ratio);
}

}  // namespace iron::decoder

namespace iron::pipeline {

inline void to_json(nlohmann::json& j, const ModelConfig& c) {
  j = {{"encoder", c.encoder}, {"temporal", c.temporal}, {"decoder", c.decoder}, {"init_seed", c.init_seed}};
}

inline void from_json(const nlohmann::json& j, ModelConfig& c) {
  c = ModelConfig{};
  if (j.contains("encoder")) j.at("encoder").get_to(c.encoder);
  if (j.contains("temporal")) j.at("temporal").get_to(c.temporal);
  if (j.contains("decoder")) j.at("decoder").get_to(c.decoder);
  c.init_seed = j.value("init_seed", c.init_seed);
}

inline void to_json(nlohmann::json& j, const TrainConfig& c) {
  j = {{"model", c.model},
       {"epochs", c.epochs},
       {"learning_rate", c.learning_rate},
       {"weight_decay", c.weight_decay},
       {"batch_size", c.batch_size},
       {"queue_len", c.queue_len},
       {"tau", c.tau},
       {"intervals", c.intervals},
       {"seed", c.seed},
       {"adt_enabled", c.adt_enabled},
       {"memory_enabled", c.memory_enabled},
       {"sgmc_enabled", c.sgmc_enabled},
       {"supervise_all_frames", c.supervise_all_frames},
       {"augment", c.augment},
       {"augmentation",
        {{"scale_min", c.augmentation.scale_min},
         {"scale_max", c.augmentation.scale_max},
         {"crop_height", c.augmentation.crop_height},
         {"crop_width", c.augmentation.crop_width},
         {"hflip_prob", c.augmentation.hflip_prob}}},
       {"clips_per_epoch", c.clips_per_epoch},
       {"warmup_fraction", c.warmup_fraction},
       {"final_lr_fraction", c.final_lr_fraction},
       {"grad_clip", c.grad_clip},
       {"time_budget_seconds", c.time_budget_seconds}, {"curriculum_end", c.curriculum_end}};
}

/// Missing keys keep their defaults, so partial overrides parse too.
inline void from_json(const nlohmann::json& j, TrainConfig& c) {
  if (j.contains("model")) j.at("model").get_to(c.model);
  c.epochs = j.value("epochs", c.epochs);
  c.learning_rate = j.value("learning_rate", c.learning_rate);
  c.weight_decay = j.value("weight_decay", c.weight_decay);
  c.batch_size = j.value("batch_size", c.batch_size);
  c.queue_len = j.value("queue_len", c.queue_len);
  c.tau = j.value("tau", c.tau);
  c.intervals = j.value("intervals", c.intervals);
  c.seed = j.value("seed", c.seed);
  c.adt_enabled = j.value("adt_enabled", c.adt_enabled);
  c.memory_enabled = j.value("memory_enabled", c.memory_enabled);
  c.sgmc_enabled = j.value("sgmc_enabled", c.sgmc_enabled);
  c.supervise_all_frames = j.value("supervise_all_frames", c.supervise_all_frames);
  c.augment = j.value("augment", c.augment);
  if (j.contains("augmentation")) {
    const auto& a = j.at("augmentation");
    c.augmentation.scale_min = a.value("scale_min", c.augmentation.scale_min);
    c.augmentation.scale_max = a.value("scale_max", c.augmentation.scale_max);
    c.augmentation.crop_height = a.value("crop_height", c.augmentation.crop_height);
    c.augmentation.crop_width = a.value("crop_width", c.augmentation.crop_width);
    c.augmentation.hflip_prob = a.value("hflip_prob", c.augmentation.hflip_prob);
  }
  c.clips_per_epoch = j.value("clips_per_epoch", c.clips_per_epoch);
  c.warmup_fraction = j.value("warmup_fraction", c.warmup_fraction);
  c.final_lr_fraction = j.value("final_lr_fraction", c.final_lr_fraction);
  c.grad_clip = j.value("grad_clip", c.grad_clip);
  c.time_budget_seconds = j.value("time_budget_seconds", c.time_budget_seconds);
  c.curriculum_end = j.value("curriculum_end", c.curriculum_end);
}

/// Applies a (possibly partial) JSON override on top of a base config.
inline TrainConfig apply_override(const TrainConfig& base, const nlohmann::json& override_json) {
  TrainConfig out = base;
  from_json(override_json, out);
  return out;
}

}  // namespace iron::pipeline

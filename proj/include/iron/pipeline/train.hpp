#pragma once

#include <chrono>
#include <cmath>
#include <cstdint>
#include <functional>
#include <map>
#include <memory>
#include <numbers>
#include <random>
#include <set>
#include <stdexcept>
#include <string>
#include <vector>

#include "iron/data/loader.hpp"
#include "iron/data/transforms.hpp"
#include "iron/numerics/optim.hpp"
#include "iron/pipeline/model.hpp"

namespace iron::pipeline {

struct TrainConfig {
  ModelConfig model;
  std::size_t epochs = 10;         // paper scale: 10
  double learning_rate = 1e-3;     // paper scale: 1e-4 with a pretrained backbone
  double weight_decay = 0.05;
  std::size_t batch_size = 4;      // paper scale: 16
  std::size_t queue_len = 3;
  double tau = 0.05;
  std::set<std::size_t> intervals{1, 2, 3, 4};
  std::uint64_t seed = 0;
  bool adt_enabled = true;
  bool memory_enabled = true;
  bool sgmc_enabled = true;
  bool supervise_all_frames = true;  // false: loss on the final clip frame only
  bool augment = true;
  data::AugmentParams augmentation;
  std::size_t clips_per_epoch = 0;  // 0: one clip per (queue_len + 1) training frames
  double warmup_fraction = 0.05;
  double final_lr_fraction = 0.05;  // cosine decay floor
  double grad_clip = 1.0;
  double time_budget_seconds = 0;  // 0: unlimited; otherwise stop after the step that crosses it
  double curriculum_end = 1.0;     // training progress at which every stored mask is predicted

  RuntimeFlags flags() const { return {memory_enabled, sgmc_enabled, tau}; }

  void validate() const {
    if (queue_len < 1) throw std::invalid_argument("train config: queue_len must be >= 1");
    if (!(tau > 0 && tau < 1)) throw std::invalid_argument("train config: tau must lie in (0, 1)");
    if (epochs == 0 || batch_size == 0) throw std::invalid_argument("train config: epochs and batch_size must be >= 1");
    if (!(learning_rate > 0)) throw std::invalid_argument("train config: learning_rate must be positive");
    if (curriculum_end < 0) throw std::invalid_argument("train config: curriculum_end must be >= 0");
    if (intervals.empty() || *intervals.begin() == 0)
      throw std::invalid_argument("train config: intervals must be a non-empty set of positive ints");
  }
};

struct EpochStats {
  std::size_t epoch = 0;
  double mean_loss = 0;
  std::size_t clips = 0;
  std::size_t steps = 0;
  double learning_rate = 0;
  double seconds = 0;
};

struct TrainingDivergedError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct TrainResult {
  std::unique_ptr<IroNet> model;
  std::vector<EpochStats> epochs;
  std::vector<decoder::AdtTask> task_log;  // one per clip
  std::size_t sgmc_activations = 0;        // decoded frames with a semantic token
  // Per-epoch sum over optimizer steps of each parameter's gradient L2 norm.
  std::map<std::string, std::vector<double>> cumulative_grad_norm;
  std::size_t steps = 0;
  bool stopped_on_budget = false;
  double seconds = 0;
};

struct TrainHooks {
  std::function<void(const EpochStats&)> on_epoch;
  // Called with the parameter store just before each optimizer step.
  std::function<void(const ParameterStore&)> before_step;
  // Receives the model state on divergence; its return value names the dump.
  std::function<std::string(const IroNet&, const std::string& reason)> dump;
};

namespace detail {

inline double l2_norm(const Tensor<float>& g) {
  double s = 0;
  for (float v : g.values()) s += static_cast<double>(v) * v;
  return std::sqrt(s);
}

inline double scheduled_lr(const TrainConfig& c, std::size_t step, std::size_t total) {
  const auto warm = static_cast<std::size_t>(std::ceil(c.warmup_fraction * static_cast<double>(total)));
  if (step < warm) return c.learning_rate * static_cast<double>(step + 1) / static_cast<double>(warm);
  const double span = static_cast<double>(std::max<std::size_t>(1, total - warm));
  const double progress = std::min(1.0, static_cast<double>(step - warm) / span);
  const double floor = c.final_lr_fraction;
  return c.learning_rate * (floor + (1 - floor) * 0.5 * (1 + std::cos(std::numbers::pi * progress)));
}

// Maps training progress onto the curriculum clock so that the ramp ends at
// config.curriculum_end; 0 means fully autoregressive from the first step.
inline double curriculum_progress(const TrainConfig& c, double progress) {
  return c.curriculum_end > 0 ? progress * 0.5 / c.curriculum_end : 1.0;
}

}  // namespace detail

struct ClipOutcome {
  double loss = 0;
  std::size_t sgmc_activations = 0;
};

/// Runs one training clip through the stream and backpropagates its loss.
/// Gradients accumulate into the model parameters.
template <typename Rng>
ClipOutcome train_clip(const IroNet& model, const data::SequenceClip& clip, decoder::AdtTask task,
                       const TrainConfig& config, const temporal::CurriculumState& curriculum, Rng& rng,
                       double loss_scale = 1.0) {
  const auto flags = config.flags();
  temporal::MemoryBank bank(config.queue_len);
  std::vector<Varf> losses;
  ClipOutcome outcome;
  const std::size_t T = clip.size();
  for (std::size_t t = 0; t < T; ++t) {
    const auto& frame = clip.frames[t];
    const auto target = decoder::adt_target(clip.masks[t], task);
    auto feats = model.features(frame.image);
    if (flags.memory_enabled && t == 0) bank.push(model.bootstrap_entry(feats, frame));
    auto out = model.decode_from(std::move(feats), frame, bank, task, flags);
    outcome.sgmc_activations += out.sgmc_active;
    if (config.supervise_all_frames || t + 1 == T) losses.push_back(decoder::bce_loss(out.probabilities, target));
    if (flags.memory_enabled && t + 1 < T) {
      const bool predicted = temporal::curriculum_source(curriculum, rng) == temporal::MaskSource::Predicted;
      const auto stored = predicted ? decoder::binarize(out.probabilities.value()) : target;
      bank.push(model.memory_entry(out.features, stored, frame.timestamp));
    }
  }
  Varf total = losses.size() == 1 ? losses[0] : scale(sum(concat(losses)), 1.0f / static_cast<float>(losses.size()));
  outcome.loss = total.value()[0];
  if (!std::isfinite(outcome.loss)) return outcome;
  backward(scale(total, static_cast<float>(loss_scale)));
  return outcome;
}

/// Trains a fresh model on the given sequences.
inline TrainResult train(const TrainConfig& config, const std::vector<data::SequenceClip>& sequences,
                         const TrainHooks& hooks = {}) {
  config.validate();
  if (sequences.empty()) throw data::DataError("train: empty dataset");
  const auto start = std::chrono::steady_clock::now();
  auto elapsed = [&] { return std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count(); };

  ModelConfig mc = config.model;
  mc.temporal.queue_len = config.queue_len;
  mc.init_seed = config.seed;
  TrainResult result;
  result.model = std::make_unique<IroNet>(mc);
  IroNet& model = *result.model;
  auto& params = model.parameters();

  std::vector<const data::SequenceClip*> usable;
  std::size_t frames = 0;
  const std::size_t need = config.queue_len * *config.intervals.rbegin() + 1;
  for (const auto& s : sequences) {
    s.validate();
    if (s.size() >= need) usable.push_back(&s);
    frames += s.size();
  }
  if (usable.empty())
    throw data::DataError("train: no sequence has the " + std::to_string(need) + " frames a training clip needs");
  const double fg_frequency = data::freespace_pixel_frequency(sequences);

  const std::size_t clips_per_epoch =
      config.clips_per_epoch ? config.clips_per_epoch : std::max<std::size_t>(1, frames / (config.queue_len + 1));
  const std::size_t steps_per_epoch = (clips_per_epoch + config.batch_size - 1) / config.batch_size;
  const std::size_t total_steps = steps_per_epoch * config.epochs;

  AdamWConfig oc;
  oc.learning_rate = config.learning_rate;
  oc.weight_decay = config.weight_decay;
  oc.grad_clip = config.grad_clip;
  AdamW optimizer(params, oc);

  std::mt19937_64 rng(config.seed ^ 0x5eed5eedULL);
  std::uniform_int_distribution<std::size_t> pick_sequence(0, usable.size() - 1);
  params.zero_grad();

  for (std::size_t epoch = 0; epoch < config.epochs && !result.stopped_on_budget; ++epoch) {
    const double epoch_start = elapsed();
    EpochStats stats;
    stats.epoch = epoch + 1;
    double loss_sum = 0;
    for (auto& [name, v] : params.entries()) result.cumulative_grad_norm[name].push_back(0.0);

    for (std::size_t step = 0; step < steps_per_epoch; ++step) {
      const std::size_t global_step = epoch * steps_per_epoch + step;
      const std::size_t batch = std::min(config.batch_size, clips_per_epoch - step * config.batch_size);
      const double progress = static_cast<double>(global_step) / static_cast<double>(total_steps);
      const temporal::CurriculumState curriculum{detail::curriculum_progress(config, progress)};
      for (std::size_t b = 0; b < batch; ++b) {
        const auto& seq = *usable[pick_sequence(rng)];
        auto clip = data::sample_training_clip(seq, config.queue_len, config.intervals, rng);
        if (config.augment) clip = data::augment_clip(clip, config.augmentation, rng());
        const auto task = config.adt_enabled ? decoder::sample_task(fg_frequency, rng) : decoder::AdtTask::Foreground;
        result.task_log.push_back(task);
        const auto outcome = train_clip(model, clip, task, config, curriculum, rng, 1.0 / static_cast<double>(batch));
        if (!std::isfinite(outcome.loss)) {
          std::string reason = "non-finite loss at epoch " + std::to_string(epoch + 1) + ", step " +
                               std::to_string(global_step) + " (sequence " + seq.sequence_id + ")";
          if (hooks.dump) reason += "; state dumped to " + hooks.dump(model, reason);
          throw TrainingDivergedError("train: " + reason);
        }
        loss_sum += outcome.loss;
        result.sgmc_activations += outcome.sgmc_activations;
        ++stats.clips;
      }
      for (auto& [name, v] : params.entries()) result.cumulative_grad_norm[name].back() += detail::l2_norm(v.grad());
      if (hooks.before_step) hooks.before_step(params);
      stats.learning_rate = detail::scheduled_lr(config, global_step, total_steps);
      optimizer.set_learning_rate(stats.learning_rate);
      optimizer.step();
      ++stats.steps;
      ++result.steps;
      if (config.time_budget_seconds > 0 && elapsed() >= config.time_budget_seconds) {
        result.stopped_on_budget = true;
        break;
      }
    }
    stats.mean_loss = loss_sum / static_cast<double>(std::max<std::size_t>(1, stats.clips));
    stats.seconds = elapsed() - epoch_start;
    result.epochs.push_back(stats);
    if (hooks.on_epoch) hooks.on_epoch(stats);
  }
  result.seconds = elapsed();
  return result;
}

}  // namespace iron::pipeline

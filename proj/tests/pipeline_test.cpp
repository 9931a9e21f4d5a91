#include <gtest/gtest.h>

#include <cmath>
#include <fstream>
#include <limits>

#include "iron/data/synthetic.hpp"
#include "iron/eval/ablation.hpp"
#include "iron/pipeline/checkpoint.hpp"
#include "iron/pipeline/infer.hpp"
#include "test_util.hpp"

using namespace iron;
using pipeline::TrainConfig;

namespace {

data::SyntheticSpec toy_spec() {
  data::SyntheticSpec s;
  s.n_sequences = 3;
  s.frames_per_sequence = 16;
  s.height = s.width = 48;
  s.occlusion_len = 3;
  s.occlusion_prob = 1.0;
  return s;
}

std::vector<data::SequenceClip> toy_sequences(std::size_t n = 2) {
  std::vector<data::SequenceClip> out;
  for (std::size_t i = 0; i < n; ++i) out.push_back(data::generate_sequence(toy_spec(), i));
  return out;
}

TrainConfig toy_config() {
  TrainConfig c;
  c.model.encoder.embed_dim = 32;
  c.model.encoder.depth = 2;
  c.epochs = 1;
  c.clips_per_epoch = 6;
  c.batch_size = 2;
  c.augmentation.crop_height = c.augmentation.crop_width = 32;
  return c;
}

std::string read_bytes(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

void write_bytes(const std::filesystem::path& p, const std::string& b) {
  std::ofstream(p, std::ios::binary).write(b.data(), std::streamsize(b.size()));
}

}  // namespace

// ---------------------------------------------------------------- checkpoint

TEST(Checkpoint, RoundTripIsBitwiseStable) {
  test::TempDir dir;
  auto cfg = toy_config();
  pipeline::IroNet model(cfg.model);
  auto ckpt = pipeline::make_checkpoint(model, cfg, {3, 7, {0.9, 0.5, 0.4}});
  pipeline::save_checkpoint(dir.path() / "a.ckpt", ckpt);
  auto loaded = pipeline::load_checkpoint(dir.path() / "a.ckpt");
  pipeline::save_checkpoint(dir.path() / "b.ckpt", loaded);
  EXPECT_EQ(read_bytes(dir.path() / "a.ckpt"), read_bytes(dir.path() / "b.ckpt"));

  auto restored = pipeline::load_model(loaded);
  for (const auto& [name, v] : model.parameters().entries())
    EXPECT_EQ(restored->parameters().get(name).value(), v.value()) << name;
  auto meta = loaded.config().at("metadata");
  EXPECT_EQ(meta.at("epoch"), 3);
  EXPECT_EQ(meta.at("seed"), 7);
  EXPECT_EQ(meta.at("loss_curve").size(), 3u);
  EXPECT_EQ(read_bytes(dir.path() / "a.ckpt").substr(0, 8), "IRONCKPT");
}

TEST(Checkpoint, FaultInjection) {
  test::TempDir dir;
  auto cfg = toy_config();
  pipeline::IroNet model(cfg.model);
  const auto bytes = pipeline::serialize_checkpoint(pipeline::make_checkpoint(model, cfg, {}));
  auto expect_error = [&](const std::string& corrupted, const std::string& needle) {
    write_bytes(dir.path() / "bad.ckpt", corrupted);
    try {
      pipeline::load_checkpoint(dir.path() / "bad.ckpt");
      ADD_FAILURE() << "no error for " << needle;
    } catch (const pipeline::CheckpointError& e) {
      EXPECT_NE(std::string(e.what()).find(needle), std::string::npos) << e.what();
    }
  };
  auto magic = bytes;
  magic[0] = 'X';
  expect_error(magic, "bad magic");
  auto version = bytes;
  version[8] = 9;
  expect_error(version, "unsupported checkpoint version 9");

  // Cut inside the payload of the last tensor.
  const auto& last = model.parameters().entries().back();
  expect_error(bytes.substr(0, bytes.size() - 2), "truncated");
  expect_error(bytes.substr(0, bytes.size() - 2), "'" + last.first + "'");
  // Cut inside the first tensor's payload.
  const auto first_name = model.parameters().entries().front().first;
  const auto at = bytes.find(first_name) + first_name.size() + 1 + 4 + 8 * model.parameters().get(first_name).shape().size();
  expect_error(bytes.substr(0, at + 6), "'" + first_name + "' payload");
}

// ---------------------------------------------------------------- training

TEST(Train, RejectsEmptyDatasetAndBadConfig) {
  EXPECT_THROW(pipeline::train(toy_config(), {}), data::DataError);
  auto c = toy_config();
  c.tau = 1.5;
  EXPECT_THROW(pipeline::train(c, toy_sequences()), std::invalid_argument);
  c = toy_config();
  c.queue_len = 0;
  EXPECT_THROW(pipeline::train(c, toy_sequences()), std::invalid_argument);
}

TEST(Train, AdtDisabledUsesForegroundOnly) {
  auto c = toy_config();
  c.adt_enabled = false;
  auto r = pipeline::train(c, toy_sequences());
  ASSERT_EQ(r.task_log.size(), 6u);
  for (auto t : r.task_log) EXPECT_EQ(t, decoder::AdtTask::Foreground);
  for (double g : r.cumulative_grad_norm.at("decoder.background_token")) EXPECT_EQ(g, 0.0);

  c.adt_enabled = true;
  c.clips_per_epoch = 24;
  auto both = pipeline::train(c, toy_sequences());
  EXPECT_GT(std::count(both.task_log.begin(), both.task_log.end(), decoder::AdtTask::Background), 0);
  EXPECT_GT(both.cumulative_grad_norm.at("decoder.background_token")[0], 0.0);
  EXPECT_GT(both.cumulative_grad_norm.at("decoder.freespace_token")[0], 0.0);
}

TEST(Train, MemoryDisabledMatchesSingleFramePath) {
  auto c = toy_config();
  c.memory_enabled = false;
  auto r = pipeline::train(c, toy_sequences());
  for (double g : r.cumulative_grad_norm.at("memory.encoder.pointwise")) EXPECT_EQ(g, 0.0);
  // Streaming without memory equals decoding every frame independently.
  auto seq = toy_sequences(1)[0];
  auto streamed = pipeline::streaming_infer(*r.model, seq, c.flags());
  NoGradGuard guard;
  temporal::MemoryBank unused;
  for (std::size_t t = 0; t < seq.size(); ++t) {
    auto single = r.model->forward(seq.frames[t], unused, decoder::AdtTask::Foreground, c.flags());
    EXPECT_EQ(single.enriched.node(), single.features.deepest().node());
    EXPECT_EQ(streamed.records[t].probabilities, single.probabilities.value()) << t;
  }
}

TEST(Train, DeterministicAndGradientsClearedBetweenSteps) {
  auto c = toy_config();
  std::size_t steps = 0;
  pipeline::TrainHooks hooks;
  hooks.before_step = [&](const ParameterStore& store) {
    // Only the current batch has accumulated: the mask token always receives gradient.
    EXPECT_GT(pipeline::detail::l2_norm(store.get("decoder.mask_token").grad()), 0.0);
    ++steps;
  };
  auto a = pipeline::train(c, toy_sequences(), hooks);
  auto b = pipeline::train(c, toy_sequences());
  EXPECT_EQ(steps, 3u);
  EXPECT_EQ(pipeline::serialize_checkpoint(pipeline::make_checkpoint(a, c)),
            pipeline::serialize_checkpoint(pipeline::make_checkpoint(b, c)));
  for (const auto& [name, v] : a.model->parameters().entries())
    for (float g : v.grad().values()) ASSERT_EQ(g, 0.0f) << name;
}

// ADT is off: with a handful of clips per epoch the epoch mean is dominated by
// which task each clip drew, not by learning progress.
TEST(Train, LossDecreasesOnToySet) {
  int monotone = 0;
  for (std::uint64_t seed : {0, 1, 2}) {
    auto c = toy_config();
    c.seed = seed;
    c.epochs = 3;
    c.clips_per_epoch = 16;
    c.adt_enabled = false;
    auto r = pipeline::train(c, toy_sequences());
    ASSERT_EQ(r.epochs.size(), 3u);
    bool ok = true;
    for (std::size_t e = 1; e < r.epochs.size(); ++e) ok = ok && r.epochs[e].mean_loss <= r.epochs[e - 1].mean_loss;
    monotone += ok;
  }
  EXPECT_GE(monotone, 2);
}

TEST(Train, DivergenceAbortsWithDump) {
  auto seqs = toy_sequences();
  for (auto& s : seqs)
    for (auto& f : s.frames) f.image[0] = std::numeric_limits<float>::quiet_NaN();
  auto c = toy_config();
  c.augment = false;
  pipeline::TrainHooks hooks;
  bool dumped = false;
  hooks.dump = [&](const pipeline::IroNet&, const std::string&) {
    dumped = true;
    return std::string("dump.ckpt");
  };
  try {
    pipeline::train(c, seqs, hooks);
    FAIL();
  } catch (const pipeline::TrainingDivergedError& e) {
    EXPECT_NE(std::string(e.what()).find("non-finite loss"), std::string::npos);
    EXPECT_NE(std::string(e.what()).find("dump.ckpt"), std::string::npos);
  }
  EXPECT_TRUE(dumped);
}

// ---------------------------------------------------------------- streaming

TEST(Infer, CountsDeterminismAndBootstrap) {
  pipeline::IroNet model(toy_config().model);
  auto seq = toy_sequences(1)[0];
  auto a = pipeline::streaming_infer(model, seq), b = pipeline::streaming_infer(model, seq);
  ASSERT_EQ(a.records.size(), seq.size());
  for (std::size_t t = 0; t < seq.size(); ++t) EXPECT_EQ(a.records[t].probabilities, b.records[t].probabilities);
  EXPECT_TRUE(a.records[0].sgmc_active);
  EXPECT_EQ(a.records[0].coverage, 0.0);
  EXPECT_GT(a.mean_fps, 0.0);
}

// ---------------------------------------------------------------- ablation

TEST(Ablation, GridBookkeeping) {
  auto seqs = toy_sequences(3);
  std::vector<data::SequenceClip> train(seqs.begin(), seqs.begin() + 2), test(seqs.begin() + 2, seqs.end());
  auto base = toy_config();
  base.clips_per_epoch = 2;
  base.intervals = {1};

  auto rows = eval::run_ablation(base, {}, train, test, {0});
  ASSERT_EQ(rows.size(), 1u);
  EXPECT_EQ(rows[0].config_id, "base");

  rows = eval::run_ablation(base, {{{"id", "mem"}}, {{"id", "nomem"}, {"memory_enabled", false}}}, train, test, {0, 1});
  ASSERT_EQ(rows.size(), 2u);
  EXPECT_TRUE(rows[0].config.memory_enabled);
  EXPECT_FALSE(rows[1].config.memory_enabled);
  EXPECT_EQ(rows[1].seeds.size(), 2u);
  EXPECT_EQ(eval::flags_label(rows[1].config), "ADT+SGMC");

  rows = eval::run_ablation(base, {{{"queue_len", 3}}, {{"queue_len", 5}}, {{"queue_len", 7}}, {{"tau", 2.0}}},
                            train, test, {0});
  ASSERT_EQ(rows.size(), 4u);
  EXPECT_EQ(rows[1].config.queue_len, 5u);
  EXPECT_EQ(rows[2].config.queue_len, 7u);
  EXPECT_TRUE(rows[0].ok() && rows[1].ok() && rows[2].ok());
  EXPECT_FALSE(rows[3].ok());
  const auto csv = eval::ablation_csv(rows);
  EXPECT_EQ(csv.substr(0, csv.find('\n')),
            "config_id,flags,L,precision,recall,f1,iou,tc_iou,flicker,fps,seeds,iou_min,iou_max,iou_per_seed,"
            "tc_iou_per_seed,error");
  EXPECT_EQ(std::count(csv.begin(), csv.end(), '\n'), 5);
}

TEST(Report, PercentWithTwoDecimals) {
  eval::EvalReport r;
  r.metrics = {0.912345, 0.5, 0.66666, 0.123456, false};
  auto j = eval::report_json(r, {{"seed", 0}});
  EXPECT_DOUBLE_EQ(j.at("precision").get<double>(), 91.23);
  EXPECT_DOUBLE_EQ(j.at("f1").get<double>(), 66.67);
  EXPECT_DOUBLE_EQ(j.at("iou").get<double>(), 12.35);
  EXPECT_EQ(j.at("config").at("seed"), 0);
}

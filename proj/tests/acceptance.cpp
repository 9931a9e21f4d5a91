// Acceptance suite: one PASS/FAIL line per criterion. Exit status is the
// number of failed criteria. An optional argument selects criteria whose name
// contains it.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <functional>
#include <numbers>
#include <random>
#include <string>
#include <vector>

#include "iron/data/synthetic.hpp"
#include "iron/eval/evaluate.hpp"
#include "iron/eval/metrics.hpp"
#include "iron/numerics/gradcheck.hpp"
#include "iron/pipeline/checkpoint.hpp"
#include "iron/pipeline/infer.hpp"
#include "test_util.hpp"

using namespace iron;

namespace {

// Pinned thresholds.
constexpr double kGradTolerance = 1e-4;
constexpr double kGradSuiteSeconds = 120;
constexpr double kLn2Tolerance = 1e-9;
constexpr double kSymmetryTolerance = 1e-12;
constexpr double kTau = 0.05;
constexpr double kTargetIou = 0.85;
constexpr double kTrainBudgetSeconds = 15 * 60;
constexpr std::size_t kDeskEpochs = 14;  // ~55 s each for the full model on one core
constexpr int kSeedsRequired = 2;
constexpr double kAblationIouGap = 0.02;
constexpr double kAblationTcGap = 0.03;
constexpr double kMinFps = 10;

struct Outcome {
  bool ok = false;
  std::string detail;
};

std::string fmt(const char* f, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof buf, f, args...);
  return buf;
}

Tensor<float> random_mask(std::mt19937_64& rng, std::size_t h, std::size_t w, double p) {
  std::bernoulli_distribution b(p);
  Tensor<float> m({h, w});
  for (auto& v : m.values()) v = b(rng) ? 1.0f : 0.0f;
  return m;
}

// ------------------------------------------------------------ fast criteria

Outcome gradient_suite() {
  const auto start = std::chrono::steady_clock::now();
  double worst = 0;
  std::string worst_op;
  for (const auto& op : gradcheck_ops())
    for (std::uint64_t seed = 0; seed < 3; ++seed) {
      const double e = grad_check(op, seed);
      if (!(e <= worst)) worst = e, worst_op = op;
    }
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return {worst <= kGradTolerance && secs < kGradSuiteSeconds,
          fmt("%zu ops x 3 seeds, worst rel err %.2e (%s), %.1fs", gradcheck_ops().size(), worst, worst_op.c_str(),
              secs)};
}

Outcome loss_exactness() {
  std::mt19937_64 rng(11);
  std::uniform_real_distribution<double> u(0, 1);
  // Dyadic probabilities keep 1 - p exact, so both sides see the same operands.
  std::uniform_int_distribution<int> k20(1, (1 << 20) - 1);
  bool involution = true;
  double ln2_err = 0, sym_err = 0;
  for (int i = 0; i < 1000; ++i) {
    const std::size_t h = 4 + i % 13, w = 4 + (i * 7) % 11;
    auto y = random_mask(rng, h, w, u(rng));
    auto back = decoder::adt_target(decoder::adt_target(y, decoder::AdtTask::Background), decoder::AdtTask::Background);
    involution = involution && back == y && decoder::adt_target(y, decoder::AdtTask::Foreground) == y;

    Tensor<double> yd({h, w}), yc({h, w}), p({h, w}), pc({h, w});
    for (std::size_t k = 0; k < y.numel(); ++k) {
      yd[k] = y[k];
      yc[k] = 1.0 - y[k];
      p[k] = std::ldexp(k20(rng), -20);
      pc[k] = 1.0 - p[k];
    }
    const double half = bce(constant(Tensor<double>({h, w}, 0.5)), yd).value()[0];
    ln2_err = std::max(ln2_err, std::abs(half - std::numbers::ln2));
    const double a = bce(constant(p), yd).value()[0], b = bce(constant(pc), yc).value()[0];
    sym_err = std::max(sym_err, std::abs(a - b));
  }
  return {involution && ln2_err <= kLn2Tolerance && sym_err <= kSymmetryTolerance,
          fmt("involution %s, |bce(0.5)-ln2| %.1e, symmetry err %.1e", involution ? "exact" : "BROKEN", ln2_err,
              sym_err)};
}

Outcome metric_oracle() {
  std::mt19937_64 rng(5);
  std::uniform_real_distribution<double> u(0.02, 0.98);
  int mismatches = 0, identity_failures = 0;
  for (int i = 0; i < 1000; ++i) {
    auto p = random_mask(rng, 16, 16, u(rng)), t = random_mask(rng, 16, 16, u(rng));
    double tp = 0, fp = 0, fn = 0;
    for (std::size_t k = 0; k < p.numel(); ++k) {
      tp += p[k] == 1 && t[k] == 1;
      fp += p[k] == 1 && t[k] == 0;
      fn += p[k] == 0 && t[k] == 1;
    }
    const auto m = eval::segmentation_metrics({p}, {t});
    const double prec = tp + fp > 0 ? tp / (tp + fp) : 0, rec = tp + fn > 0 ? tp / (tp + fn) : 0;
    const double iou = tp + fp + fn > 0 ? tp / (tp + fp + fn) : 0;
    mismatches += m.precision != prec || m.recall != rec || m.iou != iou;
    identity_failures += std::abs(m.f1 - 2 * m.iou / (1 + m.iou)) > 1e-15;
  }
  return {mismatches == 0 && identity_failures == 0,
          fmt("1000 pairs: %d count mismatches, %d f1-iou identity failures", mismatches, identity_failures)};
}

pipeline::ModelConfig small_model() {
  pipeline::ModelConfig c;
  c.encoder.embed_dim = 32;
  c.encoder.depth = 2;
  return c;
}

Outcome memory_mechanics() {
  std::vector<std::string> failed;
  auto entry = [](double fraction, double ts) {
    return temporal::MemoryEntry{constant(Tensor<float>({4, 2, 2})), ts, fraction};
  };

  temporal::MemoryBank bank(3);
  for (int i = 1; i <= 5; ++i) bank.push(entry(0.125 * i, i));
  if (bank.timestamps() != std::vector<double>{3, 4, 5}) failed.push_back("fifo");

  bool threw = false;
  try {
    bank.push(entry(0, 5));
  } catch (const temporal::MonotonicityError&) {
    threw = true;
  }
  if (!threw || bank.size() != 3) failed.push_back("monotonicity");

  // Stored fractions 0.375, 0.5, 0.625 after eviction.
  if (bank.coverage_ratio() != 0.5) failed.push_back("coverage");
  temporal::MemoryBank empty;
  if (empty.coverage_ratio() != 0.0) failed.push_back("coverage of empty bank");

  temporal::reset_bank(bank);
  if (bank.size() != 0) failed.push_back("reset");

  data::SyntheticSpec spec;
  spec.height = spec.width = 64;
  spec.frames_per_sequence = 6;
  spec.occlusion_len = 2;
  auto a = data::generate_sequence(spec, 0), b = data::generate_sequence(spec, 1);
  pipeline::IroNet net(small_model());
  auto r1 = pipeline::streaming_infer(net, b), r2 = pipeline::streaming_infer(net, b);
  for (std::size_t t = 0; t < b.size(); ++t)
    if (!(r1.records[t].probabilities == r2.records[t].probabilities)) {
      failed.push_back("determinism");
      break;
    }

  pipeline::StreamingSession session(net, {});
  for (const auto& f : a.frames) session.process(f);
  session.reset();
  for (std::size_t t = 0; t < b.size(); ++t)
    if (!(session.process(b.frames[t]).probabilities == r1.records[t].probabilities)) {
      failed.push_back("sequence independence");
      break;
    }

  std::string detail = "fifo, monotonicity, coverage, reset, determinism, A|reset|B == B";
  if (!failed.empty()) {
    detail = "failed:";
    for (const auto& f : failed) detail += " " + f;
  }
  return {failed.empty(), detail};
}

Outcome sgmc_truth_table() {
  ParameterStore store;
  Initializer init(3);
  auto tokens = decoder::TokenSet::make(store, init, 8);
  const double eps = 1e-9;
  struct Row {
    double coverage;
    bool fires;
  };
  const Row rows[] = {{0.0, true}, {kTau - eps, true}, {kTau, false}, {kTau + eps, false}, {1.0, false}};
  int wrong = 0;
  for (const auto& row : rows)
    for (auto task : {decoder::AdtTask::Foreground, decoder::AdtTask::Background}) {
      auto seq = decoder::sgmc_tokens(row.coverage, kTau, task, tokens);
      const auto& semantic =
          task == decoder::AdtTask::Foreground ? tokens.freespace_token : tokens.background_token;
      const bool ok = seq[0].node() == tokens.mask_token.node() &&
                      (row.fires ? seq.size() == 2 && seq[1].node() == semantic.node() : seq.size() == 1);
      wrong += !ok;
    }

  pipeline::IroNet net(small_model());
  pipeline::StreamingSession session(net, {true, true, kTau});
  data::SyntheticSpec spec;
  spec.height = spec.width = 64;
  spec.frames_per_sequence = 2;
  spec.occlusion_len = 1;
  auto rec = session.process(data::generate_sequence(spec, 0).frames[0]);
  const bool frame0 = rec.sgmc_active && rec.coverage == 0.0 && session.bank().entries().front().freespace_fraction == 0;
  return {wrong == 0 && frame0, fmt("%d/10 table rows wrong; frame 0 %s", wrong,
                                    frame0 ? "fires via the empty-mask bootstrap" : "did NOT fire")};
}

Outcome checkpoint_round_trip() {
  test::TempDir dir;
  pipeline::TrainConfig cfg;
  cfg.model = small_model();
  pipeline::IroNet model(cfg.model);
  const auto bytes = pipeline::serialize_checkpoint(pipeline::make_checkpoint(model, cfg, {2, 1, {0.7, 0.5}}));
  pipeline::save_checkpoint(dir.path() / "a.ckpt", pipeline::deserialize_checkpoint(bytes));
  std::ifstream in(dir.path() / "a.ckpt", std::ios::binary);
  const std::string reread{std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
  const bool stable = reread == bytes;

  auto error_of = [](const std::string& b) -> std::string {
    try {
      pipeline::deserialize_checkpoint(b);
    } catch (const pipeline::CheckpointError& e) {
      return e.what();
    }
    return "";
  };
  auto bad_magic = bytes, bad_version = bytes;
  bad_magic[1] = '?';
  bad_version[8] = 7;
  const auto last = model.parameters().entries().back().first;
  const bool faults = error_of(bad_magic).find("bad magic") != std::string::npos &&
                      error_of(bad_version).find("unsupported checkpoint version 7") != std::string::npos &&
                      error_of(bytes.substr(0, bytes.size() - 3)).find("truncated checkpoint") != std::string::npos &&
                      error_of(bytes.substr(0, bytes.size() - 3)).find("'" + last + "'") != std::string::npos &&
                      error_of(bytes + "x").find("trailing") != std::string::npos;
  return {stable && faults, fmt("round trip %s; faults %s", stable ? "bitwise stable" : "CHANGED BYTES",
                                faults ? "raise the expected errors" : "MISREPORTED")};
}

// ------------------------------------------------------------ training criteria

struct DeskRuns {
  std::vector<data::SequenceClip> train, test;
  std::vector<pipeline::TrainResult> full, no_memory;
  std::vector<eval::EvalReport> full_eval, no_memory_eval;
};

DeskRuns& desk() {
  static DeskRuns runs = [] {
    DeskRuns r;
    data::SyntheticSpec spec;
    auto [train_ids, test_ids] = data::synthetic_split(spec);
    for (std::size_t i = 0; i < spec.n_sequences; ++i) {
      auto s = data::generate_sequence(spec, i);
      (std::find(test_ids.begin(), test_ids.end(), s.sequence_id) != test_ids.end() ? r.test : r.train)
          .push_back(std::move(s));
    }
    return r;
  }();
  return runs;
}

pipeline::TrainConfig desk_config(std::uint64_t seed, bool memory) {
  pipeline::TrainConfig c;
  c.seed = seed;
  c.memory_enabled = memory;
  c.epochs = kDeskEpochs;
  c.time_budget_seconds = kTrainBudgetSeconds - 10;  // the step that crosses the budget still completes
  return c;
}

void train_desk_models(bool memory) {
  auto& d = desk();
  auto& results = memory ? d.full : d.no_memory;
  auto& reports = memory ? d.full_eval : d.no_memory_eval;
  if (!results.empty()) return;
  for (std::uint64_t seed : {0, 1, 2}) {
    const auto c = desk_config(seed, memory);
    results.push_back(pipeline::train(c, d.train));
    reports.push_back(eval::evaluate(*results.back().model, d.test, c.flags()));
    const auto& r = results.back();
    std::printf("  [%s seed %llu] %zu steps in %.0fs%s: IoU %.4f tc-IoU %.4f\n", memory ? "memory" : "no memory",
                static_cast<unsigned long long>(seed), r.steps, r.seconds, r.stopped_on_budget ? " (budget hit)" : "",
                reports.back().metrics.iou, reports.back().consistency.mean_consecutive_iou);
    std::fflush(stdout);
  }
}

Outcome desk_training() {
  train_desk_models(true);
  const auto& d = desk();
  int passing = 0;
  std::string per_seed;
  for (std::size_t i = 0; i < d.full.size(); ++i) {
    const bool ok = d.full_eval[i].metrics.iou >= kTargetIou && d.full[i].seconds <= kTrainBudgetSeconds;
    passing += ok;
    per_seed += fmt(" %.4f/%.0fs", d.full_eval[i].metrics.iou, d.full[i].seconds);
  }
  return {passing >= kSeedsRequired, fmt("%d/3 seeds reach IoU >= %.2f (IoU/train time:%s)", passing, kTargetIou,
                                         per_seed.c_str())};
}

Outcome ablation_trend() {
  train_desk_models(true);
  train_desk_models(false);
  const auto& d = desk();
  double iou_on = 0, iou_off = 0, tc_on = 0, tc_off = 0;
  for (std::size_t i = 0; i < 3; ++i) {
    iou_on += d.full_eval[i].metrics.iou / 3;
    iou_off += d.no_memory_eval[i].metrics.iou / 3;
    tc_on += d.full_eval[i].consistency.mean_consecutive_iou / 3;
    tc_off += d.no_memory_eval[i].consistency.mean_consecutive_iou / 3;
  }
  return {iou_on - iou_off >= kAblationIouGap && tc_on - tc_off >= kAblationTcGap,
          fmt("IoU %.4f vs %.4f (gap %+.2f pts), tc-IoU %.4f vs %.4f (gap %+.2f pts)", iou_on, iou_off,
              100 * (iou_on - iou_off), tc_on, tc_off, 100 * (tc_on - tc_off))};
}

Outcome anti_shortcutting() {
  auto& d = desk();
  auto one_epoch = [&](bool adt) {
    auto c = desk_config(0, true);
    c.epochs = 1;
    c.adt_enabled = adt;
    return pipeline::train(c, d.train).cumulative_grad_norm;
  };
  const auto with = one_epoch(true), without = one_epoch(false);
  const double fg = with.at("decoder.freespace_token")[0], bg = with.at("decoder.background_token")[0];
  const double bg_off = without.at("decoder.background_token")[0];
  return {fg > 0 && bg > 0 && bg_off == 0.0,
          fmt("ADT on: freespace %.3e, background %.3e; ADT off: background %.1e", fg, bg, bg_off)};
}

Outcome throughput() {
  auto& d = desk();
  train_desk_models(true);
  double fps = 0;
  for (const auto& seq : d.test) fps += pipeline::streaming_infer(*d.full[0].model, seq).mean_fps / d.test.size();
  return {fps >= kMinFps, fmt("%.1f FPS at 128x128 (mean over %zu test sequences)", fps, d.test.size())};
}

}  // namespace

int main(int argc, char** argv) {
  const std::string filter = argc > 1 ? argv[1] : "";
  const std::vector<std::pair<std::string, std::function<Outcome()>>> criteria{
      {"gradient suite", gradient_suite},
      {"adt and bce exactness", loss_exactness},
      {"metric oracle", metric_oracle},
      {"memory mechanics", memory_mechanics},
      {"sgmc gating", sgmc_truth_table},
      {"checkpoint round trip", checkpoint_round_trip},
      {"anti-shortcutting", anti_shortcutting},
      {"desk-scale training", desk_training},
      {"ablation trend", ablation_trend},
      {"throughput", throughput},
  };
  int failures = 0;
  for (const auto& [name, run] : criteria) {
    if (name.find(filter) == std::string::npos) continue;
    Outcome o;
    try {
      o = run();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    failures += !o.ok;
    std::printf("%s  %-24s %s\n", o.ok ? "PASS" : "FAIL", name.c_str(), o.detail.c_str());
    std::fflush(stdout);
  }
  return failures;
}

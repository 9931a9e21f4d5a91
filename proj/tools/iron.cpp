#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <regex>
#include <string>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "iron/data/synthetic.hpp"
#include "iron/eval/ablation.hpp"
#include "iron/numerics/gradcheck.hpp"
#include "iron/pipeline/checkpoint.hpp"

namespace fs = std::filesystem;
using namespace iron;

namespace {

std::pair<std::size_t, std::size_t> parse_size(const std::string& s) {
  static const std::regex re(R"((\d+)[xX](\d+))");
  std::smatch m;
  if (!std::regex_match(s, m, re)) throw CLI::ValidationError("--size", "expected HxW, got '" + s + "'");
  return {std::stoul(m[1]), std::stoul(m[2])};
}

nlohmann::json read_json(const fs::path& p) {
  std::ifstream in(p);
  if (!in) throw std::runtime_error("cannot open " + p.string());
  return nlohmann::json::parse(in);
}

void write_text(const fs::path& p, const std::string& text) {
  if (p.has_parent_path()) fs::create_directories(p.parent_path());
  std::ofstream out(p);
  if (!out) throw std::runtime_error("cannot write " + p.string());
  out << text;
}

int cmd_gen(const fs::path& out, std::size_t sequences, std::size_t frames, const std::string& size,
            std::uint64_t seed, double occlusion_prob) {
  data::SyntheticSpec spec;
  spec.n_sequences = sequences;
  spec.frames_per_sequence = frames;
  std::tie(spec.height, spec.width) = parse_size(size);
  spec.seed = seed;
  spec.occlusion_prob = occlusion_prob;
  spec.occlusion_len = std::min(spec.occlusion_len, frames > 1 ? frames - 1 : 0);
  const auto summary = data::generate_synthetic_dataset(spec, out);
  std::printf("wrote %zu train / %zu test sequences (%zu frames) to %s\n", summary.train_sequences,
              summary.test_sequences, summary.frames, out.string().c_str());
  return 0;
}

int cmd_train(pipeline::TrainConfig config, const fs::path& data_root, const fs::path& out, fs::path log_path) {
  const auto train = data::load_sequences(data_root, data::Split::Train);
  if (log_path.empty()) log_path = out.string() + ".log.csv";
  if (log_path.has_parent_path()) fs::create_directories(log_path.parent_path());
  std::ofstream log(log_path);
  log << "epoch,mean_loss,clips,steps,learning_rate,seconds\n";

  pipeline::TrainHooks hooks;
  hooks.on_epoch = [&](const pipeline::EpochStats& s) {
    log << s.epoch << ',' << s.mean_loss << ',' << s.clips << ',' << s.steps << ',' << s.learning_rate << ','
        << s.seconds << std::endl;
    std::printf("epoch %zu/%zu  loss %.4f  lr %.2e  %.1fs\n", s.epoch, config.epochs, s.mean_loss, s.learning_rate,
                s.seconds);
    std::fflush(stdout);
  };
  hooks.dump = [&](const pipeline::IroNet& model, const std::string&) {
    const fs::path dump = out.string() + ".diverged";
    pipeline::save_checkpoint(dump, pipeline::make_checkpoint(model, config, {0, config.seed, {}}));
    return dump.string();
  };
  auto result = pipeline::train(config, train, hooks);
  pipeline::save_checkpoint(out, pipeline::make_checkpoint(result, config));
  std::printf("trained %zu steps in %.1fs%s; checkpoint %s, log %s\n", result.steps, result.seconds,
              result.stopped_on_budget ? " (time budget reached)" : "", out.string().c_str(),
              log_path.string().c_str());
  return 0;
}

int cmd_eval(const fs::path& data_root, const fs::path& ckpt_path, const std::string& split, const fs::path& report,
             bool macro) {
  const auto ckpt = pipeline::load_checkpoint(ckpt_path);
  const auto model = pipeline::load_model(ckpt);
  const auto config = pipeline::checkpoint_train_config(ckpt);
  const auto sequences = data::load_sequences(data_root, data::parse_split(split));
  const auto r = eval::evaluate(*model, sequences, config.flags(),
                                macro ? eval::Aggregation::Macro : eval::Aggregation::Micro);
  auto j = eval::report_json(r, ckpt.config());
  j["split"] = split;
  j["aggregation"] = macro ? "macro" : "micro";
  write_text(report, j.dump(2) + "\n");
  std::printf("%s: IoU %.2f  P %.2f  R %.2f  F1 %.2f  tc-IoU %.2f  flicker %.2f  %.1f FPS\n", split.c_str(),
              eval::percent(r.metrics.iou), eval::percent(r.metrics.precision), eval::percent(r.metrics.recall),
              eval::percent(r.metrics.f1), eval::percent(r.consistency.mean_consecutive_iou),
              eval::percent(r.consistency.flicker_rate), r.mean_fps);
  return 0;
}

int cmd_infer(const fs::path& ckpt_path, const fs::path& sequence_dir, const fs::path& out, bool fps_report) {
  const auto ckpt = pipeline::load_checkpoint(ckpt_path);
  const auto model = pipeline::load_model(ckpt);
  const auto frames = data::load_frames(sequence_dir);
  const auto result = pipeline::streaming_infer(*model, frames, pipeline::checkpoint_train_config(ckpt).flags());
  fs::create_directories(out);
  for (std::size_t t = 0; t < result.records.size(); ++t) {
    const auto& rec = result.records[t];
    if (!rec.warning.empty()) std::fprintf(stderr, "warning: frame %zu: %s\n", t, rec.warning.c_str());
    data::write_png(out / data::frame_filename(t), data::mask_to_image(rec.binary_mask));
  }
  std::printf("wrote %zu masks to %s\n", result.records.size(), out.string().c_str());
  if (fps_report) {
    std::printf("mean FPS (excluding first frame): %.2f\n", result.mean_fps);
    nlohmann::json j = {{"frames", result.records.size()}, {"mean_fps", result.mean_fps}};
    nlohmann::json latency = nlohmann::json::array();
    for (const auto& r : result.records) latency.push_back(r.latency_ms);
    j["latency_ms"] = latency;
    write_text(out / "fps.json", j.dump(2) + "\n");
  }
  return 0;
}

int cmd_ablate(const fs::path& data_root, const fs::path& grid_path, const fs::path& report) {
  const auto spec = read_json(grid_path);
  pipeline::TrainConfig base;
  std::vector<nlohmann::json> grid;
  std::vector<std::uint64_t> seeds{0, 1, 2};
  if (spec.is_array()) {
    grid = spec.get<std::vector<nlohmann::json>>();
  } else {
    if (spec.contains("base")) base = pipeline::apply_override(base, spec.at("base"));
    if (spec.contains("grid")) grid = spec.at("grid").get<std::vector<nlohmann::json>>();
    if (spec.contains("seeds")) seeds = spec.at("seeds").get<std::vector<std::uint64_t>>();
  }
  const auto train = data::load_sequences(data_root, data::Split::Train);
  const auto test = data::load_sequences(data_root, data::Split::Test);
  const auto rows = eval::run_ablation(base, grid, train, test, seeds, [](const std::string& id, const eval::SeedResult& s) {
    std::printf("%s seed %llu: IoU %.4f tc-IoU %.4f (%.0fs)\n", id.c_str(), static_cast<unsigned long long>(s.seed),
                s.report.metrics.iou, s.report.consistency.mean_consecutive_iou, s.train_seconds);
    std::fflush(stdout);
  });
  write_text(report, eval::ablation_csv(rows));
  int failed = 0;
  for (const auto& r : rows)
    if (!r.ok()) {
      std::fprintf(stderr, "config %s failed: %s\n", r.config_id.c_str(), r.error.c_str());
      ++failed;
    }
  std::printf("wrote %zu rows to %s\n", rows.size(), report.string().c_str());
  return failed ? 1 : 0;
}

int cmd_gradcheck(const std::string& op) {
  std::vector<std::string> ops = op.empty() ? gradcheck_ops() : std::vector<std::string>{op};
  int failures = 0;
  for (const auto& name : ops) {
    double worst = 0;
    for (std::uint64_t seed = 0; seed < 3; ++seed) worst = std::max(worst, grad_check(name, seed));
    const bool ok = worst <= 1e-4;
    failures += !ok;
    std::printf("%-28s max rel err %.3e  %s\n", name.c_str(), worst, ok ? "PASS" : "FAIL");
  }
  return failures ? 1 : 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Temporal binary freespace segmentation with a flow-free memory"};
  app.require_subcommand(1);

  auto* gen = app.add_subcommand("gen", "Generate a synthetic road-sequence dataset");
  fs::path gen_out;
  std::size_t gen_sequences = 25, gen_frames = 40;
  std::string gen_size = "128x128";
  std::uint64_t gen_seed = 0;
  double gen_occlusion = 0.5;
  gen->add_option("--out", gen_out, "Output directory")->required();
  gen->add_option("--sequences", gen_sequences, "Number of sequences")->capture_default_str();
  gen->add_option("--frames", gen_frames, "Frames per sequence")->capture_default_str();
  gen->add_option("--size", gen_size, "Frame size HxW")->capture_default_str();
  gen->add_option("--seed", gen_seed, "Generator seed")->capture_default_str();
  gen->add_option("--occlusion-prob", gen_occlusion, "Per-sequence occlusion probability")->capture_default_str();

  auto* train = app.add_subcommand("train", "Train a model and write a checkpoint");
  fs::path train_data, train_out, train_config, train_log;
  pipeline::TrainConfig tc;
  bool no_adt = false, no_memory = false, no_sgmc = false, last_only = false, no_augment = false;
  train->add_option("--data", train_data, "Dataset root")->required();
  train->add_option("--out", train_out, "Checkpoint path")->required();
  train->add_option("--config", train_config, "JSON config (applied before the flags below)");
  train->add_option("--log", train_log, "Per-epoch metrics CSV (default: CKPT.log.csv)");
  train->add_option("--epochs", tc.epochs)->capture_default_str();
  train->add_option("--lr", tc.learning_rate)->capture_default_str();
  train->add_option("--batch-size", tc.batch_size)->capture_default_str();
  train->add_option("--queue-len", tc.queue_len)->capture_default_str();
  train->add_option("--tau", tc.tau)->capture_default_str();
  train->add_option("--seed", tc.seed)->capture_default_str();
  train->add_option("--time-budget", tc.time_budget_seconds, "Stop after this many seconds (0: none)");
  train->add_flag("--no-adt", no_adt, "Foreground task only");
  train->add_flag("--no-memory", no_memory, "Single-frame model");
  train->add_flag("--no-sgmc", no_sgmc, "Never append a semantic token");
  train->add_flag("--last-frame-only", last_only, "Supervise only the final frame of each clip");
  train->add_flag("--no-augment", no_augment, "Disable clip augmentation");

  auto* ev = app.add_subcommand("eval", "Evaluate a checkpoint on a dataset split");
  fs::path ev_data, ev_ckpt, ev_report;
  std::string ev_split = "test";
  bool ev_macro = false;
  ev->add_option("--data", ev_data, "Dataset root")->required();
  ev->add_option("--ckpt", ev_ckpt, "Checkpoint")->required();
  ev->add_option("--split", ev_split)->check(CLI::IsMember({"train", "test"}))->capture_default_str();
  ev->add_option("--report", ev_report, "Report JSON path")->required();
  ev->add_flag("--macro", ev_macro, "Average metrics per frame instead of accumulating counts");

  auto* inf = app.add_subcommand("infer", "Stream one sequence and write binary masks");
  fs::path inf_ckpt, inf_seq, inf_out;
  bool inf_fps = false;
  inf->add_option("--ckpt", inf_ckpt, "Checkpoint")->required();
  inf->add_option("--sequence", inf_seq, "Sequence directory (frames/ and timestamps.txt)")->required();
  inf->add_option("--out", inf_out, "Output mask directory")->required();
  inf->add_flag("--fps-report", inf_fps, "Print and save per-frame latency and mean FPS");

  auto* ab = app.add_subcommand("ablate", "Train and evaluate a grid of configurations over seeds");
  fs::path ab_data, ab_grid, ab_report;
  ab->add_option("--data", ab_data, "Dataset root")->required();
  ab->add_option("--grid", ab_grid, "Grid JSON: list of overrides, or {base, grid, seeds}")->required();
  ab->add_option("--report", ab_report, "CSV table path")->required();

  auto* gc = app.add_subcommand("gradcheck", "Finite-difference gradient check of the differentiable ops");
  std::string gc_op;
  gc->add_option("--op", gc_op, "Single op to check (default: all)");

  CLI11_PARSE(app, argc, argv);

  try {
    if (*gen) return cmd_gen(gen_out, gen_sequences, gen_frames, gen_size, gen_seed, gen_occlusion);
    if (*train) {
      pipeline::TrainConfig config;
      if (!train_config.empty()) config = pipeline::apply_override(config, read_json(train_config));
      for (const auto* opt : train->get_options()) {
        if (opt->count() == 0) continue;
        const auto& n = opt->get_name();
        if (n == "--epochs") config.epochs = tc.epochs;
        if (n == "--lr") config.learning_rate = tc.learning_rate;
        if (n == "--batch-size") config.batch_size = tc.batch_size;
        if (n == "--queue-len") config.queue_len = tc.queue_len;
        if (n == "--tau") config.tau = tc.tau;
        if (n == "--seed") config.seed = tc.seed;
        if (n == "--time-budget") config.time_budget_seconds = tc.time_budget_seconds;
      }
      if (no_adt) config.adt_enabled = false;
      if (no_memory) config.memory_enabled = false;
      if (no_sgmc) config.sgmc_enabled = false;
      if (last_only) config.supervise_all_frames = false;
      if (no_augment) config.augment = false;
      return cmd_train(config, train_data, train_out, train_log);
    }
    if (*ev) return cmd_eval(ev_data, ev_ckpt, ev_split, ev_report, ev_macro);
    if (*inf) return cmd_infer(inf_ckpt, inf_seq, inf_out, inf_fps);
    if (*ab) return cmd_ablate(ab_data, ab_grid, ab_report);
    if (*gc) return cmd_gradcheck(gc_op);
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
  return 0;
}

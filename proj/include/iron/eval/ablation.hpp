#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "iron/eval/evaluate.hpp"
#include "iron/pipeline/config_json.hpp"

namespace iron::eval {

struct SeedResult {
  std::uint64_t seed = 0;
  EvalReport report;
  double train_seconds = 0;
};

struct AblationRow {
  std::string config_id;
  pipeline::TrainConfig config;
  std::vector<SeedResult> seeds;
  EvalReport mean;  // averaged over seeds
  std::string error;

  bool ok() const { return error.empty(); }
  double iou_min() const;
  double iou_max() const;
};

inline double AblationRow::iou_min() const {
  double v = 1;
  for (const auto& s : seeds) v = std::min(v, s.report.metrics.iou);
  return seeds.empty() ? 0 : v;
}

inline double AblationRow::iou_max() const {
  double v = 0;
  for (const auto& s : seeds) v = std::max(v, s.report.metrics.iou);
  return v;
}

inline std::string flags_label(const pipeline::TrainConfig& c) {
  std::string s;
  auto add = [&](bool on, const char* name) {
    if (!on) return;
    if (!s.empty()) s += "+";
    s += name;
  };
  add(c.memory_enabled, "MA");
  add(c.adt_enabled, "ADT");
  add(c.sgmc_enabled, "SGMC");
  return s.empty() ? "none" : s;
}

inline EvalReport mean_report(const std::vector<SeedResult>& seeds) {
  EvalReport m;
  if (seeds.empty()) return m;
  for (const auto& s : seeds) {
    const auto& r = s.report;
    m.metrics.precision += r.metrics.precision, m.metrics.recall += r.metrics.recall;
    m.metrics.f1 += r.metrics.f1, m.metrics.iou += r.metrics.iou;
    m.metrics.undefined = m.metrics.undefined || r.metrics.undefined;
    m.consistency.mean_consecutive_iou += r.consistency.mean_consecutive_iou;
    m.consistency.flicker_rate += r.consistency.flicker_rate;
    m.mean_fps += r.mean_fps;
    m.sequences = r.sequences, m.frames = r.frames;
  }
  const double n = static_cast<double>(seeds.size());
  m.metrics.precision /= n, m.metrics.recall /= n, m.metrics.f1 /= n, m.metrics.iou /= n;
  m.consistency.mean_consecutive_iou /= n, m.consistency.flicker_rate /= n, m.mean_fps /= n;
  return m;
}

using AblationProgress = std::function<void(const std::string& config_id, const SeedResult&)>;

/// Trains and evaluates the base config and every override with the same
/// seed set. An empty grid runs the base config alone. A failing
/// configuration becomes a row with `error` set; the others still run.
inline std::vector<AblationRow> run_ablation(const pipeline::TrainConfig& base, const std::vector<nlohmann::json>& grid,
                                             const std::vector<data::SequenceClip>& train_sequences,
                                             const std::vector<data::SequenceClip>& test_sequences,
                                             const std::vector<std::uint64_t>& seeds = {0, 1, 2},
                                             const AblationProgress& progress = {}) {
  std::vector<nlohmann::json> overrides = grid;
  if (overrides.empty()) overrides.push_back({{"id", "base"}});
  std::vector<AblationRow> rows;
  for (std::size_t i = 0; i < overrides.size(); ++i) {
    AblationRow row;
    const auto& o = overrides[i];
    row.config_id = o.is_object() && o.contains("id") ? o.at("id").get<std::string>() : "config" + std::to_string(i);
    try {
      if (!o.is_object()) throw std::invalid_argument("override must be a JSON object");
      row.config = pipeline::apply_override(base, o);
      row.config.validate();
      for (std::uint64_t seed : seeds) {
        auto config = row.config;
        config.seed = seed;
        auto trained = pipeline::train(config, train_sequences);
        SeedResult sr{seed, evaluate(*trained.model, test_sequences, config.flags()), trained.seconds};
        if (progress) progress(row.config_id, sr);
        row.seeds.push_back(std::move(sr));
      }
      row.mean = mean_report(row.seeds);
    } catch (const std::exception& e) {
      row.error = e.what();
    }
    rows.push_back(std::move(row));
  }
  return rows;
}

namespace detail {

inline std::string fixed(double v, int digits = 4) {
  std::ostringstream s;
  s.setf(std::ios::fixed);
  s.precision(digits);
  s << v;
  return s.str();
}

inline std::string csv_field(std::string s) {
  if (s.find_first_of(",\"\n") == std::string::npos) return s;
  std::string q = "\"";
  for (char c : s) q += c == '"' ? std::string("\"\"") : std::string(1, c);
  return q + "\"";
}

}  // namespace detail

inline std::string ablation_csv(const std::vector<AblationRow>& rows) {
  std::ostringstream out;
  out << "config_id,flags,L,precision,recall,f1,iou,tc_iou,flicker,fps,seeds,iou_min,iou_max,iou_per_seed,"
         "tc_iou_per_seed,error\n";
  for (const auto& r : rows) {
    std::string per_iou, per_tc;
    for (const auto& s : r.seeds) {
      if (!per_iou.empty()) per_iou += ";", per_tc += ";";
      per_iou += detail::fixed(s.report.metrics.iou);
      per_tc += detail::fixed(s.report.consistency.mean_consecutive_iou);
    }
    const auto& m = r.mean;
    out << detail::csv_field(r.config_id) << ',' << flags_label(r.config) << ',' << r.config.queue_len << ','
        << detail::fixed(m.metrics.precision) << ',' << detail::fixed(m.metrics.recall) << ','
        << detail::fixed(m.metrics.f1) << ',' << detail::fixed(m.metrics.iou) << ','
        << detail::fixed(m.consistency.mean_consecutive_iou) << ',' << detail::fixed(m.consistency.flicker_rate)
        << ',' << detail::fixed(m.mean_fps, 1) << ',' << r.seeds.size() << ',' << detail::fixed(r.iou_min()) << ','
        << detail::fixed(r.iou_max()) << ',' << per_iou << ',' << per_tc << ',' << detail::csv_field(r.error)
        << '\n';
  }
  return out.str();
}

/// Fraction in [0, 1] to a percentage rounded to 2 decimals.
inline double percent(double fraction) { return std::round(fraction * 10000.0) / 100.0; }

inline nlohmann::json report_json(const EvalReport& r, const nlohmann::json& config_echo) {
  return {{"precision", percent(r.metrics.precision)},
          {"recall", percent(r.metrics.recall)},
          {"f1", percent(r.metrics.f1)},
          {"iou", percent(r.metrics.iou)},
          {"metrics_undefined", r.metrics.undefined},
          {"temporal_consistency",
           {{"mean_consecutive_iou", percent(r.consistency.mean_consecutive_iou)},
            {"flicker_rate", percent(r.consistency.flicker_rate)}}},
          {"mean_fps", std::round(r.mean_fps * 100.0) / 100.0},
          {"sequences", r.sequences},
          {"frames", r.frames},
          {"config", config_echo}};
}

}  // namespace iron::eval

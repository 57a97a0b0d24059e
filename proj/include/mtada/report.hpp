#pragma once

#include <cmath>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <ostream>
#include <set>
#include <span>
#include <string>
#include <tuple>
#include <vector>

#include "mtada/config.hpp"
#include "mtada/data.hpp"
#include "mtada/errors.hpp"
#include "mtada/experiment.hpp"

namespace mtada {

/// One completed run as read back from its output directory.
struct RunSummary {
  std::string source;                        // directory or label
  std::map<std::string, std::string> config;  // config_map of the echo
  std::map<int, std::vector<double>> accuracy;  // stage -> per-target accuracy
};

struct AggregateRow {
  std::string sampler;
  std::string mode;
  int stage = 0;
  std::size_t runs = 0;
  double mean = 0.0;
  double std = 0.0;  // sample standard deviation, 0 for a single run
  std::optional<double> delta_vs_random;
};

inline std::string mode_label(const std::map<std::string, std::string>& cfg) {
  const std::string& mode = cfg.at("mode");
  return mode == "decomposed" ? mode + "@" + cfg.at("alpha") : mode;
}

inline RunSummary summarize(const ExperimentConfig& cfg, std::span<const StageReport> stages, std::string source) {
  RunSummary r;
  r.source = std::move(source);
  r.config = config_map(cfg);
  for (const auto& s : stages)
    for (const auto& t : s.targets) r.accuracy[s.stage].push_back(t.accuracy);
  return r;
}

/// Reads config.echo and stages.csv of a run directory.
inline RunSummary read_run_dir(const std::filesystem::path& dir) {
  RunSummary r;
  r.source = dir.string();
  r.config = config_map(load_config(dir / "config.echo"));
  std::ifstream in(dir / "stages.csv");
  if (!in) throw ParseError("cannot open " + (dir / "stages.csv").string());
  std::string line;
  std::getline(in, line);
  if (!line.starts_with("stage,target,accuracy")) throw ParseError((dir / "stages.csv").string() + ": bad header");
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    const auto f = detail::split_fields(line);
    if (f.size() != 5)
      throw ParseError((dir / "stages.csv").string() + " line " + std::to_string(line_no) + ": expected 5 columns");
    r.accuracy[detail::parse_number<int>(f[0], line_no)].push_back(detail::parse_number<double>(f[2], line_no));
  }
  return r;
}

/// Lines "key: a=..., b=..." for every key other than the per-run ones
/// (seed, data, sampler, mode) that differs from the first run.
inline std::vector<std::string> config_differences(std::span<const RunSummary> runs) {
  std::vector<std::string> out;
  if (runs.empty()) return out;
  static const std::set<std::string> per_run{"seed", "data", "sampler", "mode"};
  const auto& ref = runs.front();
  for (const auto& [key, value] : ref.config) {
    if (per_run.count(key)) continue;
    for (const auto& r : runs) {
      const auto it = r.config.find(key);
      const std::string other = it == r.config.end() ? "<missing>" : it->second;
      if (other != value) {
        out.push_back(key + ": " + ref.source + "=" + value + ", " + r.source + "=" + other);
        break;
      }
    }
  }
  return out;
}

/// Mean and spread of the target-averaged accuracy per (sampler, mode,
/// stage), plus the difference to random sampling under the same mode.
inline std::vector<AggregateRow> aggregate(std::span<const RunSummary> runs) {
  if (runs.empty()) throw ConfigError("report: no runs");
  const auto diff = config_differences(runs);
  if (!diff.empty()) {
    std::string msg = "report: runs use inconsistent configs";
    for (const auto& d : diff) msg += "\n  " + d;
    throw ConfigError(msg);
  }
  std::map<std::tuple<std::string, std::string, int>, std::vector<double>> groups;
  for (const auto& r : runs)
    for (const auto& [stage, acc] : r.accuracy) {
      double s = 0.0;
      for (double a : acc) s += a;
      groups[{r.config.at("sampler"), mode_label(r.config), stage}].push_back(s / static_cast<double>(acc.size()));
    }
  std::vector<AggregateRow> rows;
  for (const auto& [key, values] : groups) {
    AggregateRow row;
    std::tie(row.sampler, row.mode, row.stage) = key;
    row.runs = values.size();
    for (double v : values) row.mean += v;
    row.mean /= static_cast<double>(values.size());
    if (values.size() > 1) {
      double ss = 0.0;
      for (double v : values) ss += (v - row.mean) * (v - row.mean);
      row.std = std::sqrt(ss / static_cast<double>(values.size() - 1));
    }
    rows.push_back(row);
  }
  for (auto& row : rows)
    for (const auto& other : rows)
      if (other.sampler == "random" && other.mode == row.mode && other.stage == row.stage)
        row.delta_vs_random = row.mean - other.mean;
  return rows;
}

inline void write_report_csv(std::span<const AggregateRow> rows, std::ostream& out) {
  out << "sampler,mode,stage,runs,mean_accuracy,std_accuracy,delta_vs_random\n";
  for (const auto& r : rows) {
    out << r.sampler << ',' << r.mode << ',' << r.stage << ',' << r.runs << ',' << format_double(r.mean) << ','
        << format_double(r.std) << ',';
    if (r.delta_vs_random) out << format_double(*r.delta_vs_random);
    out << '\n';
  }
}

}  // namespace mtada

#pragma once

// Combined-uncertainty sweep over beta from stored per-sample vacuity and
// dissonance dumps.

#include <algorithm>
#include <filesystem>
#include <map>
#include <regex>
#include <sstream>
#include <string>
#include <vector>

#include <fmt/format.h>

#include "cedl/evidential.hpp"
#include "cedl/experiment/run.hpp"
#include "cedl/metrics.hpp"

namespace cedl::experiment {

struct UncertaintyRow {
  std::size_t sample_id = 0;
  int true_label = 0;
  int data_task = 0;
  std::string split;
  double vacuity = 0.0;
  double dissonance = 0.0;
};

/// One uncertainty dump per evaluation step, keyed by task id.
using UncertaintyDumps = std::map<int, std::vector<UncertaintyRow>>;

inline std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> cells;
  std::stringstream ss(line);
  for (std::string cell; std::getline(ss, cell, ',');) cells.push_back(cell);
  return cells;
}

inline std::vector<UncertaintyRow> read_uncertainty_csv(const fs::path& path) {
  std::ifstream is(path);
  if (!is) throw ConfigError("results_dir", "cannot read " + path.string());
  std::string header;
  std::getline(is, header);
  const auto cols = split_csv_line(header);
  std::map<std::string, std::size_t> at;
  for (std::size_t i = 0; i < cols.size(); ++i) at[cols[i]] = i;
  for (const char* need : {"sample_id", "true_label", "data_task", "split", "vacuity", "dissonance"}) {
    if (!at.count(need)) throw ConfigError("results_dir", path.string() + " lacks column '" + need + "'");
  }
  std::vector<UncertaintyRow> rows;
  for (std::string line; std::getline(is, line);) {
    if (line.empty()) continue;
    const auto c = split_csv_line(line);
    if (c.size() != cols.size()) throw ConfigError("results_dir", path.string() + " has a malformed row");
    rows.push_back({std::stoull(c[at["sample_id"]]), std::stoi(c[at["true_label"]]), std::stoi(c[at["data_task"]]),
                    c[at["split"]], std::stod(c[at["vacuity"]]), std::stod(c[at["dissonance"]])});
  }
  return rows;
}

inline UncertaintyDumps read_uncertainty_dumps(const fs::path& run_dir) {
  const auto dir = run_dir / "uncertainty";
  if (!fs::is_directory(dir)) throw ConfigError("results_dir", "no uncertainty dumps under " + run_dir.string());
  UncertaintyDumps dumps;
  const std::regex name("task_([0-9]+)\\.csv");
  for (const auto& entry : fs::directory_iterator(dir)) {
    std::smatch m;
    const auto file = entry.path().filename().string();
    if (std::regex_match(file, m, name)) dumps[std::stoi(m[1])] = read_uncertainty_csv(entry.path());
  }
  if (dumps.empty()) throw ConfigError("results_dir", "no uncertainty dumps under " + run_dir.string());
  return dumps;
}

struct SweepPoint {
  double beta = 0.0;
  int task_id = 0;
  double fpr95 = 0.0;
};

struct BoxStats {
  double beta = 0.0;
  double mean = 0.0, median = 0.0, q1 = 0.0, q3 = 0.0, min = 0.0, max = 0.0;
  std::size_t n = 0;
};

/// Linear-interpolated quantile of sorted data.
inline double quantile(const std::vector<double>& sorted, double q) {
  const double pos = q * static_cast<double>(sorted.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(pos));
  const auto hi = std::min(lo + 1, sorted.size() - 1);
  return sorted[lo] + (pos - static_cast<double>(lo)) * (sorted[hi] - sorted[lo]);
}

inline BoxStats box_stats(double beta, std::vector<double> values) {
  BoxStats b;
  b.beta = beta;
  b.n = values.size();
  if (values.empty()) return b;
  std::sort(values.begin(), values.end());
  b.mean = std::accumulate(values.begin(), values.end(), 0.0) / static_cast<double>(values.size());
  b.median = quantile(values, 0.5);
  b.q1 = quantile(values, 0.25);
  b.q3 = quantile(values, 0.75);
  b.min = values.front();
  b.max = values.back();
  return b;
}

/// IND_f vs OOD FPR95 of score -CU(beta) for every step that has both sets.
inline std::vector<SweepPoint> sweep_beta(const UncertaintyDumps& dumps, const std::vector<double>& grid) {
  require(!grid.empty(), "sweep_beta: empty beta grid");
  std::vector<SweepPoint> out;
  for (double beta : grid) {
    for (const auto& [task_id, rows] : dumps) {
      std::vector<double> ind_f, ood;
      for (const auto& r : rows) {
        const double score = -combined_uncertainty(r.vacuity, r.dissonance, beta);
        if (r.split == "IND_f") ind_f.push_back(score);
        if (r.split == "OOD") ood.push_back(score);
      }
      if (ind_f.empty() || ood.empty()) continue;
      out.push_back({beta, task_id, fpr_at_tpr(ind_f, ood, 0.95)});
    }
  }
  return out;
}

inline std::vector<BoxStats> sweep_box(const std::vector<SweepPoint>& points, const std::vector<double>& grid) {
  std::vector<BoxStats> out;
  for (double beta : grid) {
    std::vector<double> v;
    for (const auto& p : points) {
      if (p.beta == beta) v.push_back(p.fpr95);
    }
    out.push_back(box_stats(beta, std::move(v)));
  }
  return out;
}

/// Runs the sweep for a results directory and writes sweep_beta.csv and
/// sweep_beta_box.csv. An empty grid uses the config's grid.
inline std::vector<BoxStats> cmd_sweep_beta(const fs::path& run_dir, std::vector<double> grid = {}) {
  if (!fs::exists(run_dir / "config.yaml")) {
    throw ConfigError("results_dir", "'" + run_dir.string() + "' has no config.yaml");
  }
  const auto cfg = load_config(run_dir / "config.yaml");
  if (grid.empty()) grid = cfg.evaluation.beta_grid;
  for (double b : grid) {
    if (b < 0.0 || b > 1.0) throw ConfigError("grid", "beta values must lie in [0, 1]");
  }
  const auto points = sweep_beta(read_uncertainty_dumps(run_dir), grid);
  const int step_size = cfg.dataset.classes_per_task;
  std::string raw = "beta,task,step_size,fpr95\n";
  for (const auto& p : points) raw += fmt::format("{},{},{},{:.6f}\n", p.beta, p.task_id, step_size, p.fpr95);
  write_text(run_dir / "sweep_beta.csv", raw);
  const auto box = sweep_box(points, grid);
  std::string table = "beta,step_size,mean,median,q1,q3,min,max,n\n";
  for (const auto& b : box) {
    table += fmt::format("{},{},{:.6f},{:.6f},{:.6f},{:.6f},{:.6f},{:.6f},{}\n", b.beta, step_size, b.mean,
                         b.median, b.q1, b.q3, b.min, b.max, b.n);
  }
  write_text(run_dir / "sweep_beta_box.csv", table);
  return box;
}

}  // namespace cedl::experiment

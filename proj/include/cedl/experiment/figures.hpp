#pragma once

// Figure emission from a results directory: per-sample uncertainty scatters,
// per-task uncertainty averages, and beta-sweep box plots.

#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include <fmt/format.h>

#include "cedl/experiment/canvas.hpp"
#include "cedl/experiment/sweep.hpp"

namespace cedl::experiment {

namespace detail {

inline plot::Color split_color(const std::string& split) {
  if (split == "IND_f") return plot::kPalette[0];
  if (split == "IND_c") return plot::kPalette[2];
  return plot::kPalette[3];
}

inline void split_legend(plot::Canvas& c, double x, double y) {
  const std::pair<const char*, const char*> entries[] = {{"IND_f", "old"}, {"IND_c", "current"}, {"OOD", "unseen"}};
  for (const auto& [split, label] : entries) {
    c.circle(x, y + 3, 3, split_color(split));
    c.text(x + 8, y, label);
    y += 12;
  }
}

inline std::vector<fs::path> fig3(const UncertaintyDumps& dumps, const fs::path& out) {
  std::vector<fs::path> written;
  for (const auto& [task_id, rows] : dumps) {
    for (const bool vac : {true, false}) {
      plot::Canvas c(640, 320);
      const auto axes = plot::draw_axes(c, 70, 40, 540, 230, 0, static_cast<double>(rows.size()), 0.0, 1.0,
                                        fmt::format("After task {}: {}", task_id, vac ? "vacuity" : "dissonance"),
                                        "test sample", vac ? "vacuity" : "dissonance", 5, 5, true);
      std::size_t divider = 0;
      for (std::size_t i = 0; i < rows.size(); ++i) {
        const auto& r = rows[i];
        if (r.split != "OOD") divider = i + 1;
        c.circle(axes.x(static_cast<double>(i) + 0.5), axes.y(vac ? r.vacuity : r.dissonance), 1.5,
                 split_color(r.split));
      }
      if (divider > 0 && divider < rows.size()) {
        const double px = axes.x(static_cast<double>(divider));
        c.line(px, 40, px, 270, plot::kBlack, 1.5, true);
        c.text(px - 4, 44, "IND", 1, plot::Anchor::kEnd);
        c.text(px + 4, 44, "OOD");
      }
      split_legend(c, 560, 4);
      const auto stem = out / fmt::format("fig3_task{}_{}", task_id, vac ? "vacuity" : "dissonance");
      c.save(stem);
      written.push_back(stem);
    }
  }
  return written;
}

// Mean uncertainty of data task k evaluated after step t: means[t][k].
inline std::map<int, std::map<int, std::pair<double, double>>> task_means(const UncertaintyDumps& dumps) {
  std::map<int, std::map<int, std::pair<double, double>>> out;
  for (const auto& [step, rows] : dumps) {
    std::map<int, std::tuple<double, double, int>> acc;
    for (const auto& r : rows) {
      auto& [v, d, n] = acc[r.data_task];
      v += r.vacuity;
      d += r.dissonance;
      ++n;
    }
    for (const auto& [k, t] : acc) {
      const auto [v, d, n] = t;
      out[step][k] = {v / n, d / n};
    }
  }
  return out;
}

inline void line_panel(plot::Canvas& c, double left, double top, const std::string& title, const std::string& xlabel,
                       const std::map<int, std::map<int, double>>& series, const std::string& series_prefix,
                       int x_min, int x_max) {
  double y_max = 0.0;
  for (const auto& [_, pts] : series) {
    for (const auto& [__, v] : pts) y_max = std::max(y_max, v);
  }
  y_max = y_max > 0.0 ? std::min(1.0, y_max * 1.1) : 1.0;
  const auto axes = plot::draw_axes(c, left, top, 280, 180, x_min, x_max, 0.0, y_max, title, xlabel, "mean",
                                    std::max(1, x_max - x_min), 4, true);
  std::size_t idx = 0;
  for (const auto& [key, pts] : series) {
    const auto color = plot::kPalette[idx % plot::kPalette.size()];
    bool first = true;
    double px = 0, py = 0;
    for (const auto& [x, v] : pts) {
      const double nx = axes.x(x), ny = axes.y(v);
      if (!first) c.line(px, py, nx, ny, color, 2.0);
      c.circle(nx, ny, 3, color);
      px = nx;
      py = ny;
      first = false;
    }
    c.text(left + 290, top + 12.0 * static_cast<double>(idx), fmt::format("{} {}", series_prefix, key), 1,
           plot::Anchor::kStart, color);
    ++idx;
  }
}

inline fs::path fig4(const UncertaintyDumps& dumps, const fs::path& out) {
  const auto means = task_means(dumps);
  const int first_step = means.begin()->first, last_step = means.rbegin()->first;
  int first_task = 1 << 30, last_task = 0;
  for (const auto& [_, m] : means) {
    first_task = std::min(first_task, m.begin()->first);
    last_task = std::max(last_task, m.rbegin()->first);
  }
  // Orientation 1: one line per data task over evaluation steps.
  std::map<int, std::map<int, double>> vac_by_task, diss_by_task, vac_by_step, diss_by_step;
  for (const auto& [step, m] : means) {
    for (const auto& [task, vd] : m) {
      vac_by_task[task][step] = vd.first;
      diss_by_task[task][step] = vd.second;
      vac_by_step[step][task] = vd.first;
      diss_by_step[step][task] = vd.second;
    }
  }
  plot::Canvas c(900, 560);
  line_panel(c, 70, 40, "Vacuity by step", "evaluation step", vac_by_task, "data task", first_step, last_step);
  line_panel(c, 520, 40, "Dissonance by step", "evaluation step", diss_by_task, "data task", first_step, last_step);
  line_panel(c, 70, 320, "Vacuity by data task", "data task", vac_by_step, "step", first_task, last_task);
  line_panel(c, 520, 320, "Dissonance by data task", "data task", diss_by_step, "step", first_task, last_task);
  const auto stem = out / "fig4";
  c.save(stem);
  return stem;
}

inline std::vector<BoxStats> read_box_csv(const fs::path& path) {
  std::ifstream is(path);
  if (!is) throw ConfigError("results_dir", "cannot read " + path.string());
  std::string line;
  std::getline(is, line);
  std::vector<BoxStats> out;
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    const auto c = split_csv_line(line);
    if (c.size() != 9) throw ConfigError("results_dir", path.string() + " has a malformed row");
    out.push_back({std::stod(c[0]), std::stod(c[2]), std::stod(c[3]), std::stod(c[4]), std::stod(c[5]),
                   std::stod(c[6]), std::stod(c[7]), std::stoull(c[8])});
  }
  return out;
}

inline fs::path fig5(const fs::path& run_dir, const fs::path& out) {
  const auto box_path = run_dir / "sweep_beta_box.csv";
  const auto box = fs::exists(box_path) ? read_box_csv(box_path) : cmd_sweep_beta(run_dir);
  plot::Canvas c(640, 340);
  const auto axes = plot::draw_axes(c, 70, 40, 540, 240, -0.1, 1.1, 0.0, 1.0, "IND_f vs OOD FPR95 over beta",
                                    "beta", "FPR95", 12, 5);
  const double half = 540.0 / (static_cast<double>(std::max<std::size_t>(box.size(), 1)) * 3.0);
  for (const auto& b : box) {
    if (b.n == 0) continue;
    const double x = axes.x(b.beta);
    c.line(x, axes.y(b.min), x, axes.y(b.q1), plot::kBlack);
    c.line(x, axes.y(b.q3), x, axes.y(b.max), plot::kBlack);
    c.line(x - half / 2, axes.y(b.min), x + half / 2, axes.y(b.min));
    c.line(x - half / 2, axes.y(b.max), x + half / 2, axes.y(b.max));
    c.rect(x - half, axes.y(b.q3), 2 * half, std::max(1.0, axes.y(b.q1) - axes.y(b.q3)), plot::kPalette[0]);
    c.line(x - half, axes.y(b.median), x + half, axes.y(b.median), plot::kPalette[1], 2.0);
    c.line(x - half, axes.y(b.mean), x + half, axes.y(b.mean), plot::kPalette[2], 1.0, true);
  }
  const auto stem = out / "fig5";
  c.save(stem);
  return stem;
}

}  // namespace detail

inline const std::vector<std::string>& figure_ids() {
  static const std::vector<std::string> ids{"fig3", "fig4", "fig5"};
  return ids;
}

/// Emits the named figure as SVG and PNG under <run_dir>/figures; returns the
/// file stems written.
inline std::vector<fs::path> cmd_plot(const fs::path& run_dir, const std::string& figure_id) {
  const auto& ids = figure_ids();
  if (std::find(ids.begin(), ids.end(), figure_id) == ids.end()) {
    throw ConfigError("figure", "unknown figure '" + figure_id + "' (expected fig3, fig4 or fig5)");
  }
  if (!fs::is_directory(run_dir)) throw ConfigError("results_dir", "'" + run_dir.string() + "' is not a directory");
  const auto dumps = read_uncertainty_dumps(run_dir);
  const auto out = run_dir / "figures";
  fs::create_directories(out);
  if (figure_id == "fig3") return detail::fig3(dumps, out);
  if (figure_id == "fig4") return {detail::fig4(dumps, out)};
  return {detail::fig5(run_dir, out)};
}

}  // namespace cedl::experiment

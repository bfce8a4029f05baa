#pragma once

// Experiment execution: train the evidential stream (and optionally the
// cross-entropy baseline), evaluate every step, and write the results tree.

#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <fmt/format.h>
#include <json.hpp>

#include "cedl/experiment/config.hpp"
#include "cedl/metrics.hpp"
#include "cedl/ood_scores.hpp"
#include "cedl/trainer.hpp"

namespace cedl::experiment {

namespace fs = std::filesystem;

inline void write_text(const fs::path& path, const std::string& text) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("cannot write " + path.string());
  os << text;
}

inline std::string read_text(const fs::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("cannot read " + path.string());
  std::ostringstream ss;
  ss << is.rdbuf();
  return ss.str();
}

struct StepEvaluation {
  int task_id = 0;
  double accuracy = 0.0;
  double accuracy_bc = 0.0;
  std::optional<double> baseline_accuracy;
  std::map<std::string, std::vector<DetectionReport>> reports;  // by method
};

struct EvaluationSummary {
  std::vector<StepEvaluation> steps;
  std::map<std::string, std::vector<AveragedReport>> averages;  // by method
  double aca = 0.0, aia = 0.0, aca_bc = 0.0, aia_bc = 0.0;
};

namespace detail {

inline std::string metric(double v) { return fmt::format("{:.6f}", v); }

inline std::string task_list(const std::vector<int>& tasks) {
  std::string s;
  for (std::size_t i = 0; i < tasks.size(); ++i) s += (i ? ";" : "") + std::to_string(tasks[i]);
  return s;
}

inline Matrix logits_for(const EvidentialClassifier& model, const Matrix& x, bool bias_corrected) {
  const Matrix z = model.infer(x);
  return bias_corrected ? bias_corrected_logits(z, weight_norms(model)) : z;
}

}  // namespace detail

/// Evaluates the models after 1-based `step` and writes the per-step dumps.
inline StepEvaluation evaluate_step(const ExperimentConfig& cfg, const TaskStream& stream, std::size_t step,
                                    const EvidentialClassifier& cedl, const EvidentialClassifier* baseline,
                                    const fs::path& run_dir) {
  const auto& ev = cfg.evaluation;
  const auto opts = ev.score_options();
  const int task_id = stream.tasks[step - 1].task_id;
  const bool ood_positive = ev.aupr_positive == "OOD";
  StepEvaluation out;
  out.task_id = task_id;
  const auto seen = test_samples(stream, stream.tasks.front().task_id, task_id);
  out.accuracy = accuracy(cedl, seen, false);
  out.accuracy_bc = accuracy(cedl, seen, true);
  if (baseline) out.baseline_accuracy = accuracy(*baseline, seen, cfg.trainer.apply_bc);

  std::vector<Matrix> inputs;
  for (const auto& t : stream.tasks) inputs.push_back(to_batch(t.test_set));

  std::string unc = "sample_id,true_label,data_task,split,vacuity,dissonance\n";
  for (std::size_t k = 0; k < stream.tasks.size(); ++k) {
    const auto u = uncertainties(detail::logits_for(cedl, inputs[k], ev.uncertainty_from_bc_logits),
                                 cfg.trainer.logit_clamp);
    const char* role = split_name(split_role(k + 1, step));
    for (std::size_t i = 0; i < u.size(); ++i) {
      const auto& s = stream.tasks[k].test_set[i];
      unc += fmt::format("{},{},{},{},{:.17g},{:.17g}\n", s.id, s.label, stream.tasks[k].task_id, role, u[i].first,
                         u[i].second);
    }
  }
  write_text(run_dir / "uncertainty" / fmt::format("task_{}.csv", task_id), unc);

  nlohmann::json report_json = nlohmann::json::array();
  for (const auto& method : ev.score_methods) {
    const bool use_baseline = !is_evidential_method(method) && ev.scored_model_for_baselines == "baseline";
    const EvidentialClassifier& model = use_baseline ? *baseline : cedl;
    SplitScores split;
    std::string dump = "sample_id,true_label,split,score\n";
    for (std::size_t k = 0; k < stream.tasks.size(); ++k) {
      const auto scores = score_samples(method, model, inputs[k], opts).scores;
      const auto role = split_role(k + 1, step);
      auto& dst = role == SplitRole::kIndF ? split.ind_f : role == SplitRole::kIndC ? split.ind_c : split.ood;
      dst.insert(dst.end(), scores.begin(), scores.end());
      for (std::size_t i = 0; i < scores.size(); ++i) {
        const auto& s = stream.tasks[k].test_set[i];
        dump += fmt::format("{},{},{},{:.17g}\n", s.id, s.label, split_name(role), scores[i]);
      }
    }
    write_text(run_dir / "scores" / fmt::format("task_{}", task_id) / (method + ".csv"), dump);
    auto reports = protocol_reports(split, task_id, ood_positive);
    for (const auto& r : reports) {
      auto j = to_json(r);
      j["method"] = method;
      j["scored_model"] = use_baseline ? "baseline" : "cedl";
      report_json.push_back(j);
    }
    out.reports[method] = std::move(reports);
  }
  write_text(run_dir / "reports" / fmt::format("task_{}.json", task_id), report_json.dump(2) + "\n");
  return out;
}

/// Evaluates every step and writes the aggregate tables.
inline EvaluationSummary evaluate_run(const ExperimentConfig& cfg, const TaskStream& stream,
                                      const std::vector<EvidentialClassifier>& cedl,
                                      const std::vector<EvidentialClassifier>* baseline, const fs::path& run_dir) {
  require(cedl.size() == stream.tasks.size(), "evaluate_run: one model per task is required");
  const bool needs_baseline = std::any_of(cfg.evaluation.score_methods.begin(), cfg.evaluation.score_methods.end(),
                                          [](const auto& m) { return !is_evidential_method(m); }) &&
                              cfg.evaluation.scored_model_for_baselines == "baseline";
  require(!needs_baseline || (baseline && baseline->size() == cedl.size()),
          "evaluate_run: baseline models are missing");
  EvaluationSummary summary;
  for (std::size_t step = 1; step <= stream.tasks.size(); ++step) {
    summary.steps.push_back(evaluate_step(cfg, stream, step, cedl[step - 1],
                                          baseline ? &(*baseline)[step - 1] : nullptr, run_dir));
  }

  const int step_size = cfg.dataset.classes_per_task;
  std::string per_task = "method,task,comparison,auroc,aupr,fpr95,n_pos,n_neg\n";
  std::string table = "method,comparison,step_size,auroc,aupr,fpr95,tasks\n";
  for (const auto& method : cfg.evaluation.score_methods) {
    std::vector<DetectionReport> all;
    for (const auto& s : summary.steps) {
      for (const auto& r : s.reports.at(method)) {
        per_task += fmt::format("{},{},{},{},{},{},{},{}\n", method, r.task_id, r.comparison_id,
                                detail::metric(r.auroc), detail::metric(r.aupr), detail::metric(r.fpr95), r.n_pos,
                                r.n_neg);
        all.push_back(r);
      }
    }
    summary.averages[method] = average_reports(all);
    for (const auto& a : summary.averages[method]) {
      table += fmt::format("{},{},{},{},{},{},{}\n", method, a.comparison_id, step_size, detail::metric(a.auroc),
                           detail::metric(a.aupr), detail::metric(a.fpr95), detail::task_list(a.tasks));
    }
  }
  write_text(run_dir / "metrics_per_task.csv", per_task);
  write_text(run_dir / "metrics_table.csv", table);

  std::vector<double> acc, acc_bc, acc_base;
  std::string acc_csv = baseline ? "task,accuracy,accuracy_bc,baseline_accuracy\n" : "task,accuracy,accuracy_bc\n";
  for (const auto& s : summary.steps) {
    acc.push_back(s.accuracy);
    acc_bc.push_back(s.accuracy_bc);
    acc_csv += fmt::format("{},{},{}", s.task_id, detail::metric(s.accuracy), detail::metric(s.accuracy_bc));
    if (s.baseline_accuracy) {
      acc_base.push_back(*s.baseline_accuracy);
      acc_csv += "," + detail::metric(*s.baseline_accuracy);
    }
    acc_csv += "\n";
  }
  write_text(run_dir / "accuracy.csv", acc_csv);
  summary.aca = aca(acc);
  summary.aia = aia(acc);
  summary.aca_bc = aca(acc_bc);
  summary.aia_bc = aia(acc_bc);
  std::string s = "quantity,value\n";
  s += "aca," + detail::metric(summary.aca) + "\n";
  s += "aia," + detail::metric(summary.aia) + "\n";
  s += "aca_bc," + detail::metric(summary.aca_bc) + "\n";
  s += "aia_bc," + detail::metric(summary.aia_bc) + "\n";
  if (!acc_base.empty()) {
    s += "baseline_aca," + detail::metric(aca(acc_base)) + "\n";
    s += "baseline_aia," + detail::metric(aia(acc_base)) + "\n";
  }
  write_text(run_dir / "summary.csv", s);
  return summary;
}

inline nlohmann::json manifest(const ExperimentConfig& cfg, const std::string& canonical) {
  const auto& d = cfg.dataset;
  return {{"run_name", cfg.run_name},
          {"config_hash", fmt::format("{:016x}", fnv1a(canonical))},
          {"seed", cfg.seed},
          {"shuffle_seed", d.shuffle_seed},
          {"code_version", kCodeVersion},
          {"dataset", d.id},
          {"n_tasks", d.n_tasks},
          {"classes_per_task", d.classes_per_task},
          {"averaging",
           "OOD comparisons average tasks 1..T-1 (no OOD data after the final task); INDc_vs_INDf averages tasks 2..T"}};
}

/// Hook run after each task: accuracy and vacuity detection for metrics.json.
inline nlohmann::json task_hook_report(const EvidentialClassifier& model, const TaskStream& stream, std::size_t index,
                                       const ExperimentConfig& cfg) {
  const auto step = index + 1;
  const auto seen = test_samples(stream, stream.tasks.front().task_id, stream.tasks[index].task_id);
  nlohmann::json reports = nlohmann::json::array();
  for (const auto& r : protocol_eval(model, stream, step, "vacuity", cfg.evaluation.score_options())) {
    reports.push_back(to_json(r));
  }
  return {{"accuracy", accuracy(model, seen, cfg.trainer.apply_bc)}, {"vacuity_reports", reports}};
}

struct RunOutput {
  fs::path run_dir;
  StreamRun cedl;
  std::optional<StreamRun> baseline;
  EvaluationSummary evaluation;
};

/// Runs the configured experiment end to end.
inline RunOutput run_experiment(const ExperimentConfig& cfg, bool resume = false,
                                const std::function<void(const std::string&)>& progress = {}) {
  const auto run_dir = cfg.run_dir();
  fs::create_directories(run_dir);
  const auto canonical = to_yaml(cfg);
  write_text(run_dir / "config.yaml", canonical);
  write_text(run_dir / "manifest.json", manifest(cfg, canonical).dump(2) + "\n");

  const auto stream = build_stream(cfg);
  RunOutput out{run_dir, {}, std::nullopt, {}};
  RunOptions opts;
  opts.out_dir = run_dir;
  opts.resume = resume;
  opts.after_task = [&](const EvidentialClassifier& m, std::size_t i) {
    if (progress) progress(fmt::format("cedl: task {} done", stream.tasks[i].task_id));
    return task_hook_report(m, stream, i, cfg);
  };
  out.cedl = run_stream(stream, cfg.backbone, cfg.trainer, opts);
  const bool need_baseline = cfg.evaluation.baseline_model;
  if (need_baseline) {
    RunOptions bopts;
    bopts.out_dir = run_dir / "baseline";
    bopts.resume = resume;
    bopts.after_task = [&](const EvidentialClassifier& m, std::size_t i) {
      if (progress) progress(fmt::format("baseline: task {} done", stream.tasks[i].task_id));
      const auto seen = test_samples(stream, stream.tasks.front().task_id, stream.tasks[i].task_id);
      return nlohmann::json{{"accuracy", accuracy(m, seen)}};
    };
    out.baseline = run_stream(stream, cfg.backbone, baseline_trainer(cfg), bopts);
  }
  out.evaluation = evaluate_run(cfg, stream, out.cedl.snapshots, out.baseline ? &out.baseline->snapshots : nullptr,
                                run_dir);
  return out;
}

/// Loads the per-task checkpoints under `dir` (task_<t>/checkpoint.bin).
inline std::vector<EvidentialClassifier> load_snapshots(const fs::path& dir, const TaskStream& stream) {
  std::vector<EvidentialClassifier> models;
  for (const auto& t : stream.tasks) {
    const auto path = dir / fmt::format("task_{}", t.task_id) / "checkpoint.bin";
    if (!fs::exists(path)) throw ConfigError("results_dir", "missing checkpoint " + path.string());
    models.push_back(load_checkpoint(path.string()));
  }
  return models;
}

/// Recomputes every evaluation output of an existing results directory.
inline EvaluationSummary evaluate_results(const fs::path& run_dir) {
  if (!fs::exists(run_dir / "config.yaml")) {
    throw ConfigError("results_dir", "'" + run_dir.string() + "' has no config.yaml");
  }
  const auto cfg = load_config(run_dir / "config.yaml");
  const auto stream = build_stream(cfg);
  const auto cedl = load_snapshots(run_dir, stream);
  std::optional<std::vector<EvidentialClassifier>> baseline;
  if (cfg.evaluation.baseline_model) baseline = load_snapshots(run_dir / "baseline", stream);
  return evaluate_run(cfg, stream, cedl, baseline ? &*baseline : nullptr, run_dir);
}

}  // namespace cedl::experiment

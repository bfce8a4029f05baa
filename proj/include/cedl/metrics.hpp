#pragma once

// Detection metrics over score arrays, classification accuracy summaries, and
// the four-way continual detection protocol.

#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "cedl/backbone.hpp"
#include "cedl/data.hpp"
#include "cedl/error.hpp"
#include "cedl/ood_scores.hpp"

namespace cedl {

namespace detail {

inline void require_both(std::span<const double> pos, std::span<const double> neg, const char* who) {
  require(!pos.empty() && !neg.empty(), std::string(who) + ": positive and negative sets must be non-empty");
}

}  // namespace detail

/// P(score_pos > score_neg) + 0.5 P(equal).
inline double auroc(std::span<const double> pos, std::span<const double> neg) {
  detail::require_both(pos, neg, "auroc");
  std::vector<double> sorted(neg.begin(), neg.end());
  std::sort(sorted.begin(), sorted.end());
  double wins = 0.0;
  for (double p : pos) {
    const auto lo = std::lower_bound(sorted.begin(), sorted.end(), p);
    const auto hi = std::upper_bound(lo, sorted.end(), p);
    wins += static_cast<double>(lo - sorted.begin()) + 0.5 * static_cast<double>(hi - lo);
  }
  return wins / (static_cast<double>(pos.size()) * static_cast<double>(neg.size()));
}

/// Average precision: sum over descending distinct thresholds of
/// (R_k - R_{k-1}) * P_k, with "score >= threshold" predicted positive.
inline double aupr(std::span<const double> pos, std::span<const double> neg) {
  detail::require_both(pos, neg, "aupr");
  std::vector<std::pair<double, bool>> all;
  all.reserve(pos.size() + neg.size());
  for (double p : pos) all.emplace_back(p, true);
  for (double n : neg) all.emplace_back(n, false);
  std::sort(all.begin(), all.end(), [](const auto& a, const auto& b) { return a.first > b.first; });
  const auto total_pos = static_cast<double>(pos.size());
  double tp = 0.0, fp = 0.0, prev_recall = 0.0, area = 0.0;
  for (std::size_t i = 0; i < all.size();) {
    const double threshold = all[i].first;
    for (; i < all.size() && all[i].first == threshold; ++i) (all[i].second ? tp : fp) += 1.0;
    const double recall = tp / total_pos;
    area += (recall - prev_recall) * (tp / (tp + fp));
    prev_recall = recall;
  }
  return area;
}

/// AUPR with the negative set treated as the positive class (scores negated).
inline double aupr_flipped(std::span<const double> pos, std::span<const double> neg) {
  std::vector<double> p2, n2;
  for (double v : neg) p2.push_back(-v);
  for (double v : pos) n2.push_back(-v);
  return aupr(p2, n2);
}

/// Smallest FPR over observed thresholds whose TPR reaches `tpr_target`.
inline double fpr_at_tpr(std::span<const double> pos, std::span<const double> neg, double tpr_target = 0.95) {
  detail::require_both(pos, neg, "fpr_at_tpr");
  require(tpr_target > 0.0 && tpr_target <= 1.0, "fpr_at_tpr: target must lie in (0, 1]");
  std::vector<double> sorted(pos.begin(), pos.end());
  std::sort(sorted.begin(), sorted.end(), std::greater<>());
  const auto n_pos = sorted.size();
  std::size_t needed = 1;
  while (static_cast<double>(needed) < tpr_target * static_cast<double>(n_pos)) ++needed;
  const double threshold = sorted[needed - 1];
  const auto admitted = std::count_if(neg.begin(), neg.end(), [&](double v) { return v >= threshold; });
  return static_cast<double>(admitted) / static_cast<double>(neg.size());
}

// --- accuracy -----------------------------------------------------------------

/// Top-1 accuracy of `model` over `samples`, optionally on bias-corrected logits.
inline double accuracy(const EvidentialClassifier& model, const std::vector<const Sample*>& samples,
                       bool bias_corrected = false) {
  require(!samples.empty(), "accuracy: no samples");
  std::size_t correct = 0;
  const auto norms = bias_corrected ? weight_norms(model) : WeightNorms{};
  for (std::size_t start = 0; start < samples.size(); start += 256) {
    const std::size_t len = std::min<std::size_t>(256, samples.size() - start);
    Matrix logits = model.infer(to_batch(std::span(samples).subspan(start, len)));
    if (bias_corrected) logits = bias_corrected_logits(logits, norms);
    for (Eigen::Index i = 0; i < logits.rows(); ++i) {
      Eigen::Index arg = 0;
      logits.row(i).maxCoeff(&arg);
      correct += model.seen_classes()[static_cast<std::size_t>(arg)] == samples[start + static_cast<std::size_t>(i)]->label;
    }
  }
  return static_cast<double>(correct) / static_cast<double>(samples.size());
}

/// Accuracy over all seen classes after the final task.
inline double aca(std::span<const double> per_task_accuracy) {
  require(!per_task_accuracy.empty(), "aca: empty accuracy history");
  return per_task_accuracy.back();
}

inline double aia(std::span<const double> per_task_accuracy) {
  require(!per_task_accuracy.empty(), "aia: empty accuracy history");
  return std::accumulate(per_task_accuracy.begin(), per_task_accuracy.end(), 0.0) /
         static_cast<double>(per_task_accuracy.size());
}

// --- protocol -----------------------------------------------------------------

inline const std::vector<std::string>& comparison_ids() {
  static const std::vector<std::string> ids{"IND_vs_OOD", "INDc_vs_OOD", "INDf_vs_OOD", "INDc_vs_INDf"};
  return ids;
}

struct DetectionReport {
  std::string comparison_id;
  int task_id = 0;
  double auroc = 0.0;
  double aupr = 0.0;
  double fpr95 = 0.0;
  std::size_t n_pos = 0;
  std::size_t n_neg = 0;
};

inline nlohmann::json to_json(const DetectionReport& r) {
  return {{"comparison_id", r.comparison_id}, {"task_id", r.task_id}, {"auroc", r.auroc}, {"aupr", r.aupr},
          {"fpr95", r.fpr95},                 {"n_pos", r.n_pos},     {"n_neg", r.n_neg}};
}

/// Test-set scores of one task step, partitioned by origin.
struct SplitScores {
  std::vector<double> ind_f;  // classes of earlier tasks
  std::vector<double> ind_c;  // classes of the current task
  std::vector<double> ood;    // classes of later tasks
};

inline DetectionReport detection_report(const std::string& id, int task_id, std::span<const double> pos,
                                        std::span<const double> neg, bool aupr_ood_positive = false) {
  return {id,
          task_id,
          auroc(pos, neg),
          aupr_ood_positive ? aupr_flipped(pos, neg) : aupr(pos, neg),
          fpr_at_tpr(pos, neg, 0.95),
          pos.size(),
          neg.size()};
}

/// The four comparisons, skipping any whose sets are empty.
inline std::vector<DetectionReport> protocol_reports(const SplitScores& s, int task_id,
                                                     bool aupr_ood_positive = false) {
  std::vector<DetectionReport> out;
  std::vector<double> ind = s.ind_f;
  ind.insert(ind.end(), s.ind_c.begin(), s.ind_c.end());
  if (!s.ood.empty()) {
    out.push_back(detection_report("IND_vs_OOD", task_id, ind, s.ood, aupr_ood_positive));
    if (!s.ind_c.empty()) out.push_back(detection_report("INDc_vs_OOD", task_id, s.ind_c, s.ood, aupr_ood_positive));
    if (!s.ind_f.empty()) out.push_back(detection_report("INDf_vs_OOD", task_id, s.ind_f, s.ood, aupr_ood_positive));
  }
  if (!s.ind_c.empty() && !s.ind_f.empty()) {
    out.push_back(detection_report("INDc_vs_INDf", task_id, s.ind_c, s.ind_f, aupr_ood_positive));
  }
  return out;
}

enum class SplitRole { kIndF, kIndC, kOod };

inline const char* split_name(SplitRole r) {
  switch (r) {
    case SplitRole::kIndF:
      return "IND_f";
    case SplitRole::kIndC:
      return "IND_c";
    case SplitRole::kOod:
      return "OOD";
  }
  return "";
}

/// Role of task `sample_task` (1-based position) when evaluating after `step`.
inline SplitRole split_role(std::size_t sample_task, std::size_t step) {
  return sample_task < step ? SplitRole::kIndF : sample_task == step ? SplitRole::kIndC : SplitRole::kOod;
}

/// Scores every test sample of `stream` with `method` and partitions them by
/// role relative to 1-based step `step`.
inline SplitScores protocol_scores(const EvidentialClassifier& model, const TaskStream& stream, std::size_t step,
                                   const std::string& method, const ScoreOptions& opt = {}) {
  require(step >= 1 && step <= stream.tasks.size(), "protocol_eval: step out of range");
  SplitScores out;
  for (std::size_t k = 0; k < stream.tasks.size(); ++k) {
    const auto& test = stream.tasks[k].test_set;
    if (test.empty()) continue;
    const auto scores = score_samples(method, model, to_batch(test), opt).scores;
    auto& dst = split_role(k + 1, step) == SplitRole::kIndF   ? out.ind_f
                : split_role(k + 1, step) == SplitRole::kIndC ? out.ind_c
                                                              : out.ood;
    dst.insert(dst.end(), scores.begin(), scores.end());
  }
  return out;
}

inline std::vector<DetectionReport> protocol_eval(const EvidentialClassifier& model, const TaskStream& stream,
                                                  std::size_t step, const std::string& method,
                                                  const ScoreOptions& opt = {}, bool aupr_ood_positive = false) {
  return protocol_reports(protocol_scores(model, stream, step, method, opt), stream.tasks[step - 1].task_id,
                          aupr_ood_positive);
}

struct AveragedReport {
  std::string comparison_id;
  double auroc = 0.0;
  double aupr = 0.0;
  double fpr95 = 0.0;
  std::vector<int> tasks;  // task ids that contributed
};

/// Per-comparison mean over the tasks where the comparison exists: tasks
/// 1..T-1 for the OOD comparisons, 2..T for INDc_vs_INDf.
inline std::vector<AveragedReport> average_reports(const std::vector<DetectionReport>& reports) {
  std::vector<AveragedReport> out;
  for (const auto& id : comparison_ids()) {
    AveragedReport avg{id, 0.0, 0.0, 0.0, {}};
    for (const auto& r : reports) {
      if (r.comparison_id != id) continue;
      avg.auroc += r.auroc;
      avg.aupr += r.aupr;
      avg.fpr95 += r.fpr95;
      avg.tasks.push_back(r.task_id);
    }
    if (avg.tasks.empty()) continue;
    const auto n = static_cast<double>(avg.tasks.size());
    avg.auroc /= n;
    avg.aupr /= n;
    avg.fpr95 /= n;
    out.push_back(std::move(avg));
  }
  return out;
}

}  // namespace cedl

// Acceptance suite: one PASS/FAIL line per criterion, non-zero exit if any fail.
//
// Usage: cedl_acceptance <toy_config.yaml>

#include <fmt/format.h>

#include <chrono>
#include <cmath>
#include <filesystem>
#include <functional>
#include <iostream>
#include <limits>
#include <map>
#include <numeric>
#include <optional>
#include <random>
#include <set>
#include <string>
#include <vector>

#include <unistd.h>

#include "cedl/evidential.hpp"
#include "cedl/experiment/config.hpp"
#include "cedl/experiment/run.hpp"
#include "cedl/experiment/sweep.hpp"
#include "cedl/losses.hpp"
#include "cedl/metrics.hpp"
#include "cedl/ood_scores.hpp"
#include "gradcheck.hpp"

namespace {

using namespace cedl;
using namespace cedl::experiment;
using cedl::testing_support::numeric_gradient;
using cedl::testing_support::random_matrix;
using cedl::testing_support::relative_error;
using Clock = std::chrono::steady_clock;

struct Outcome {
  bool pass = false;
  std::string detail;
};

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

// --- 1: metric oracles ---------------------------------------------------------

double all_pairs_auroc(const std::vector<double>& pos, const std::vector<double>& neg) {
  double wins = 0.0;
  for (double p : pos) {
    for (double n : neg) wins += p > n ? 1.0 : (p == n ? 0.5 : 0.0);
  }
  return wins / (static_cast<double>(pos.size()) * static_cast<double>(neg.size()));
}

// Smallest FPR over every threshold drawn from the pooled scores whose TPR
// (fraction of positives with score >= threshold) reaches the target.
double sweep_fpr(const std::vector<double>& pos, const std::vector<double>& neg, double target) {
  std::set<double> thresholds(pos.begin(), pos.end());
  thresholds.insert(neg.begin(), neg.end());
  double best = 1.0;
  for (double t : thresholds) {
    const auto tp = std::count_if(pos.begin(), pos.end(), [&](double v) { return v >= t; });
    if (static_cast<double>(tp) < target * static_cast<double>(pos.size())) continue;
    const auto fp = std::count_if(neg.begin(), neg.end(), [&](double v) { return v >= t; });
    best = std::min(best, static_cast<double>(fp) / static_cast<double>(neg.size()));
  }
  return best;
}

Outcome metric_oracles() {
  const auto t0 = Clock::now();
  std::mt19937_64 rng(20240101);
  std::uniform_int_distribution<std::size_t> size(1, 200);
  std::uniform_int_distribution<int> levels(2, 40);
  double worst_auroc = 0.0, worst_fpr = 0.0;
  for (int trial = 0; trial < 200; ++trial) {
    const auto np = size(rng), nn = size(rng);
    std::vector<double> pos(np), neg(nn);
    // Every other set is quantised so ties are exercised.
    const bool quantised = trial % 2 == 0;
    const int q = levels(rng);
    std::normal_distribution<double> p_dist(0.5, 1.0), n_dist(0.0, 1.0);
    auto draw = [&](std::normal_distribution<double>& d) {
      const double v = d(rng);
      return quantised ? std::round(v * q) / q : v;
    };
    for (auto& v : pos) v = draw(p_dist);
    for (auto& v : neg) v = draw(n_dist);
    worst_auroc = std::max(worst_auroc, std::abs(auroc(pos, neg) - all_pairs_auroc(pos, neg)));
    worst_fpr = std::max(worst_fpr, std::abs(fpr_at_tpr(pos, neg, 0.95) - sweep_fpr(pos, neg, 0.95)));
  }
  const double elapsed = seconds_since(t0);
  return {worst_auroc <= 1e-9 && worst_fpr <= 1e-9 && elapsed < 10.0,
          fmt::format("max |auroc - oracle| = {:.3g}, max |fpr95 - oracle| = {:.3g}, {:.2f} s", worst_auroc, worst_fpr,
                      elapsed)};
}

// --- 2: closed-form losses -------------------------------------------------------

Outcome closed_form_losses() {
  Matrix alpha(1, 2), y(1, 2);
  alpha << 2.0, 1.0;
  y << 1.0, 0.0;
  const double ece = ece_loss(alpha, y);
  // With y = [1, 0] the true-class entry is reset to 1, so alpha = [1, 2] is alpha~ itself.
  Matrix alpha_k(1, 2);
  alpha_k << 1.0, 2.0;
  const double ekl = ekl_loss(alpha_k, y, full_mask(2));
  const double ece_err = std::abs(ece - (std::log(3.0) - std::log(2.0)));
  const double ekl_err = std::abs(ekl - (std::log(2.0) - 0.5));
  return {ece_err <= 1e-6 && ekl_err <= 1e-6,
          fmt::format("ECE = {:.9f} (err {:.2g}), EKL = {:.9f} (err {:.2g})", ece, ece_err, ekl, ekl_err)};
}

// --- 3: gradient checks ----------------------------------------------------------

Outcome gradient_checks() {
  const auto t0 = Clock::now();
  std::mt19937_64 rng(77);
  std::uniform_int_distribution<int> rows(1, 8), cols(2, 7);
  double worst = 0.0;
  for (int batch = 0; batch < 50; ++batch) {
    const auto n = rows(rng), c = cols(rng);
    // Stay clear of the clamp kink so central differences are valid.
    const Matrix z = random_matrix(n, c, rng, -3.0, 3.0);
    std::vector<std::size_t> labels(static_cast<std::size_t>(n));
    for (auto& l : labels) l = std::uniform_int_distribution<std::size_t>(0, static_cast<std::size_t>(c) - 1)(rng);
    const Matrix y = one_hot(labels, static_cast<std::size_t>(c));
    const auto first_new = std::uniform_int_distribution<std::size_t>(0, static_cast<std::size_t>(c) - 2)(rng);
    const auto mask = new_class_mask(static_cast<std::size_t>(c), first_new);
    const KDConfig kd{2.0, std::uniform_int_distribution<std::size_t>(1, static_cast<std::size_t>(c))(rng)};
    const Matrix teacher = random_matrix(n, c, rng, -3.0, 3.0);

    const auto ece = ece_loss_with_grad(z, y);
    const auto ece_fd = numeric_gradient([&](const Matrix& m) { return ece_loss_with_grad(m, y).value; }, z);
    const auto ekl = ekl_loss_with_grad(z, y, mask);
    const auto ekl_fd = numeric_gradient([&](const Matrix& m) { return ekl_loss_with_grad(m, y, mask).value; }, z);
    const auto kdl = kd_loss_with_grad(z, teacher, kd);
    const auto kd_fd = numeric_gradient([&](const Matrix& m) { return kd_loss(m, teacher, kd); }, z);
    worst = std::max({worst, relative_error(ece.grad, ece_fd), relative_error(ekl.grad, ekl_fd),
                      relative_error(kdl.grad, kd_fd)});
  }
  const double elapsed = seconds_since(t0);
  return {worst <= 1e-4 && elapsed < 30.0,
          fmt::format("max relative error {:.3g} over 50 batches, {:.2f} s", worst, elapsed)};
}

// --- 4: algebraic identities -----------------------------------------------------

Outcome algebraic_identities() {
  std::mt19937_64 rng(4);
  std::uniform_int_distribution<int> classes(2, 12);
  std::exponential_distribution<double> ev(0.2);
  double worst_sum = 0.0;
  double worst_single = 0.0;
  bool endpoints = true;
  for (int i = 0; i < 10000; ++i) {
    std::vector<double> e(static_cast<std::size_t>(classes(rng)));
    for (auto& v : e) v = ev(rng);
    const auto op = opinion_from_evidence(e);
    const auto b = op.beliefs();
    const double total = std::accumulate(b.begin(), b.end(), 0.0) + vacuity(op);
    worst_sum = std::max(worst_sum, std::abs(total - 1.0));

    std::vector<double> single(e.size(), 0.0);
    single[static_cast<std::size_t>(i) % e.size()] = e[0];
    worst_single = std::max(worst_single, std::abs(dissonance(opinion_from_evidence(single))));

    const double v = vacuity(op), d = dissonance(op);
    endpoints = endpoints && combined_uncertainty(v, d, 1.0) == v && combined_uncertainty(v, d, 0.0) == 1.0 - d;
  }
  return {worst_sum <= 1e-9 && worst_single == 0.0 && endpoints,
          fmt::format("max |sum(b) + vac - 1| = {:.3g}, max single-belief dissonance = {}, CU endpoints {}", worst_sum,
                      worst_single, endpoints ? "exact" : "differ")};
}

// --- toy run shared by 5-9 -------------------------------------------------------

struct ToyRun {
  ExperimentConfig cfg;
  RunOutput out;
  double seconds = 0.0;
};

ToyRun run_toy(const std::string& config_path, const fs::path& output_dir) {
  auto cfg = load_config(config_path);
  cfg.output_dir = output_dir.string();
  const auto t0 = Clock::now();
  auto out = run_experiment(cfg);
  return {cfg, std::move(out), seconds_since(t0)};
}

const DetectionReport* find_report(const StepEvaluation& step, const std::string& method, const std::string& cmp) {
  const auto it = step.reports.find(method);
  if (it == step.reports.end()) return nullptr;
  for (const auto& r : it->second) {
    if (r.comparison_id == cmp) return &r;
  }
  return nullptr;
}

Outcome toy_vacuity_detection(const ToyRun& run) {
  const auto& steps = run.out.evaluation.steps;
  bool ok = run.seconds <= 120.0 && steps.size() == 3;
  std::string detail = fmt::format("run {:.1f} s;", run.seconds);
  for (std::size_t i = 0; i + 1 < steps.size(); ++i) {
    const auto* vac = find_report(steps[i], "vacuity", "IND_vs_OOD");
    const auto* diss = find_report(steps[i], "dissonance", "IND_vs_OOD");
    if (vac == nullptr || diss == nullptr) return {false, "missing IND_vs_OOD reports"};
    ok = ok && vac->auroc >= 0.85 && vac->auroc > diss->auroc;
    detail += fmt::format(" task {}: vacuity {:.4f} vs dissonance {:.4f};", steps[i].task_id, vac->auroc, diss->auroc);
  }
  detail.pop_back();
  return {ok, detail};
}

Outcome toy_uncertainty_ordering(const ToyRun& run) {
  const auto dumps = read_uncertainty_dumps(run.out.run_dir);
  bool ok = dumps.size() == 3;
  std::string detail;
  for (const auto& [task, rows] : dumps) {
    std::map<std::string, std::pair<double, int>> acc;
    for (const auto& r : rows) {
      acc[r.split].first += r.vacuity;
      acc[r.split].second += 1;
    }
    auto mean = [&](const std::string& s) { return acc.count(s) ? acc[s].first / acc[s].second : std::numeric_limits<double>::quiet_NaN(); };
    const double cur = mean("IND_c"), old = mean("IND_f"), unseen = mean("OOD");
    if (acc.count("OOD")) ok = ok && cur < unseen;
    if (task == 2) ok = ok && cur < old && old < unseen;
    detail += fmt::format(" task {}: current {:.4f}, old {:.4f}, unseen {:.4f};", task, cur, old, unseen);
  }
  detail.pop_back();
  return {ok, detail.substr(1)};
}

Outcome baseline_identities(const ToyRun& run) {
  std::mt19937_64 rng(7);
  // Identities on a freshly initialised toy model.
  auto model = make_classifier(ArchSpec{"mlp-toy", 2, {}, {16}}, 5);
  expand_head(model, std::vector<int>{0, 1, 2});
  const Matrix x = random_matrix(64, 2, rng, -4, 4);
  const auto logits = model.infer(x);
  const bool odin_eq = odin_score(model, x, 1.0, 0.0).scores == msp_score(logits).scores;
  const bool bc_eq = msp_bc_score(logits, WeightNorms{{1.0, 1.0, 1.0}}).scores == msp_score(logits).scores;

  // Finite scores for every baseline on every step of the toy run.
  bool finite = true;
  const auto stream = build_stream(run.cfg);
  const auto samples = test_samples(stream, 1, static_cast<int>(stream.tasks.size()));
  const Matrix xs = to_batch(samples);
  const auto& snapshots = run.out.baseline ? run.out.baseline->snapshots : run.out.cedl.snapshots;
  const auto opt = run.cfg.evaluation.score_options();
  const std::vector<std::string> baselines{"msp", "odin", "energy", "entropy", "msp_bc"};
  for (std::size_t t = 0; t < snapshots.size(); ++t) {
    for (const auto& m : baselines) {
      try {
        const auto s = score_samples(m, snapshots[t], xs, opt);
        finite = finite && s.scores.size() == samples.size() &&
                 std::all_of(s.scores.begin(), s.scores.end(), [](double v) { return std::isfinite(v); });
      } catch (const std::exception&) {
        finite = false;
      }
    }
  }

  // Orientation on a trivially separable set: peaked logits are IND, flat logits OOD.
  std::normal_distribution<double> noise(0.0, 0.3);
  Matrix ind(100, 4), ood(100, 4);
  for (Eigen::Index i = 0; i < 100; ++i) {
    for (Eigen::Index c = 0; c < 4; ++c) {
      ind(i, c) = (c == i % 4 ? 9.0 : 0.0) + noise(rng);
      ood(i, c) = noise(rng);
    }
  }
  const WeightNorms ones{{1.0, 1.0, 1.0, 1.0}};
  std::map<std::string, double> aurocs{
      {"msp", auroc(msp_score(ind).scores, msp_score(ood).scores)},
      {"energy", auroc(energy_score(ind).scores, energy_score(ood).scores)},
      {"entropy", auroc(entropy_score(ind).scores, entropy_score(ood).scores)},
      {"msp_bc", auroc(msp_bc_score(ind, ones).scores, msp_bc_score(ood, ones).scores)},
  };
  // ODIN perturbs inputs, so it needs a model: a bias-free ReLU net is positively
  // homogeneous, making scaled-up inputs the confident ones.
  auto homogeneous = make_classifier(ArchSpec{"mlp-toy", 2, {}, {16}}, 0);
  expand_head(homogeneous, std::vector<int>{0, 1, 2});
  homogeneous.head().weight().value = random_matrix(3, 16, rng, -3, 3);
  const Matrix base = random_matrix(100, 2, rng, -1, 1);
  aurocs["odin"] = auroc(odin_score(homogeneous, 50.0 * base).scores, odin_score(homogeneous, 0.01 * base).scores);
  bool oriented = true;
  std::string list;
  for (const auto& [m, a] : aurocs) {
    oriented = oriented && a >= 0.5;
    list += fmt::format(" {} {:.3f}", m, a);
  }
  return {odin_eq && bc_eq && finite && oriented,
          fmt::format("ODIN(eps=0,T=1) == MSP: {}; MSP-BC(norms=1) == MSP: {}; finite toy scores: {}; AUROC{}",
                      odin_eq ? "yes" : "no", bc_eq ? "yes" : "no", finite ? "yes" : "no", list)};
}

Outcome beta_sweep(const ToyRun& run) {
  const auto box = cmd_sweep_beta(run.out.run_dir);
  const auto& grid = run.cfg.evaluation.beta_grid;
  bool all_points = box.size() == grid.size();
  for (std::size_t i = 0; all_points && i < grid.size(); ++i) all_points = box[i].beta == grid[i] && box[i].n > 0;
  const auto at = [&](double beta) {
    for (const auto& b : box) {
      if (b.beta == beta) return b.mean;
    }
    return std::numeric_limits<double>::quiet_NaN();
  };
  const double f1 = at(1.0), f0 = at(0.0);
  return {all_points && f1 < f0,
          fmt::format("IND_f vs OOD FPR95 at beta=1 {:.4f}, at beta=0 {:.4f}; {} of {} grid points present", f1, f0,
                      box.size(), grid.size())};
}

Outcome determinism(const ToyRun& first, const ToyRun& second) {
  bool same = true;
  std::string diff;
  for (const char* table : {"metrics_per_task.csv", "metrics_table.csv", "accuracy.csv", "summary.csv"}) {
    const bool eq = read_text(first.out.run_dir / table) == read_text(second.out.run_dir / table);
    same = same && eq;
    if (!eq) diff += std::string(" ") + table;
  }
  return {same, same ? "metric tables byte-identical across two runs" : "differing:" + diff};
}

}  // namespace

int main(int argc, char** argv) {
  if (argc != 2) {
    std::cerr << "usage: cedl_acceptance <toy_config.yaml>\n";
    return 2;
  }
  const std::string config = argv[1];
  const auto scratch = fs::temp_directory_path() / fmt::format("cedl_acceptance_{}", ::getpid());
  fs::remove_all(scratch);

  std::vector<std::pair<std::string, std::function<Outcome()>>> criteria;
  std::optional<ToyRun> run_a, run_b;
  std::string toy_error;
  try {
    run_a = run_toy(config, scratch / "a");
    run_b = run_toy(config, scratch / "b");
  } catch (const std::exception& e) {
    toy_error = e.what();
  }
  auto needs_toy = [&](auto fn) {
    return [&, fn]() -> Outcome {
      if (!run_a || !run_b) return {false, "toy run failed: " + toy_error};
      return fn();
    };
  };

  criteria.emplace_back("metric oracle equivalence", metric_oracles);
  criteria.emplace_back("closed-form loss values", closed_form_losses);
  criteria.emplace_back("gradient checks", gradient_checks);
  criteria.emplace_back("algebraic identities", algebraic_identities);
  criteria.emplace_back("toy vacuity detection", needs_toy([&] { return toy_vacuity_detection(*run_a); }));
  criteria.emplace_back("uncertainty ordering", needs_toy([&] { return toy_uncertainty_ordering(*run_a); }));
  criteria.emplace_back("posthoc baseline identities", needs_toy([&] { return baseline_identities(*run_a); }));
  criteria.emplace_back("beta sweep", needs_toy([&] { return beta_sweep(*run_a); }));
  criteria.emplace_back("determinism", needs_toy([&] { return determinism(*run_a, *run_b); }));

  int failures = 0;
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    Outcome o;
    try {
      o = criteria[i].second();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    failures += o.pass ? 0 : 1;
    std::cout << fmt::format("{} {}. {}: {}", o.pass ? "PASS" : "FAIL", i + 1, criteria[i].first, o.detail)
              << std::endl;
  }
  fs::remove_all(scratch);
  return failures == 0 ? 0 : 1;
}

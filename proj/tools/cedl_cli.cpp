// Command-line runner: run, eval, sweep-beta, plot.
//
// Exit codes: 0 success, 1 runtime failure, 2 configuration or usage error.

#include <CLI11.hpp>

#include <fstream>
#include <iostream>

#include "cedl/experiment/config.hpp"
#include "cedl/experiment/figures.hpp"
#include "cedl/experiment/run.hpp"
#include "cedl/experiment/sweep.hpp"

namespace {

constexpr int kOk = 0;
constexpr int kRuntimeFailure = 1;
constexpr int kUsageError = 2;

void print_table(const std::filesystem::path& path) {
  std::ifstream is(path);
  for (std::string line; std::getline(is, line);) std::cout << line << '\n';
}

int dispatch(int argc, char** argv) {
  CLI::App app{"Continual evidential learning experiments"};
  app.require_subcommand(1);

  std::string config_path;
  bool resume = false;
  bool quiet = false;
  auto* run = app.add_subcommand("run", "Train and evaluate the experiment described by a YAML config");
  run->add_option("config", config_path, "Experiment config file")->required();
  run->add_flag("--resume", resume, "Continue from the last complete task checkpoint");
  run->add_flag("-q,--quiet", quiet, "Suppress progress output");

  std::string results_dir;
  auto* eval = app.add_subcommand("eval", "Recompute evaluation outputs from stored checkpoints");
  eval->add_option("results_dir", results_dir, "Run directory (<output_dir>/<run_name>)")->required();

  std::vector<double> grid;
  auto* sweep = app.add_subcommand("sweep-beta", "FPR95 of the combined uncertainty over a beta grid");
  sweep->add_option("results_dir", results_dir, "Run directory")->required();
  sweep->add_option("--grid", grid, "Beta values in [0, 1] (default: the config's grid)");

  std::string figure;
  auto* plot = app.add_subcommand("plot", "Emit a figure as SVG and PNG");
  plot->add_option("results_dir", results_dir, "Run directory")->required();
  plot->add_option("--figure", figure, "Figure id")->required()->check(CLI::IsMember({"fig3", "fig4", "fig5"}));

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kOk : kUsageError;
  }

  using namespace cedl::experiment;
  if (run->parsed()) {
    const auto cfg = load_config(config_path);
    auto progress = [&](const std::string& msg) {
      if (!quiet) std::cerr << msg << '\n';
    };
    const auto out = run_experiment(cfg, resume, progress);
    std::cout << "results: " << out.run_dir.string() << '\n';
    print_table(out.run_dir / "metrics_table.csv");
    print_table(out.run_dir / "summary.csv");
  } else if (eval->parsed()) {
    evaluate_results(results_dir);
    print_table(std::filesystem::path(results_dir) / "metrics_table.csv");
  } else if (sweep->parsed()) {
    cmd_sweep_beta(results_dir, grid);
    print_table(std::filesystem::path(results_dir) / "sweep_beta_box.csv");
  } else if (plot->parsed()) {
    for (const auto& stem : cmd_plot(results_dir, figure)) std::cout << stem.string() << ".{svg,png}\n";
  }
  return kOk;
}

}  // namespace

int main(int argc, char** argv) {
  try {
    return dispatch(argc, argv);
  } catch (const cedl::ConfigError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return kUsageError;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kRuntimeFailure;
  }
}

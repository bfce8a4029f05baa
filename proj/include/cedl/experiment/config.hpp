#pragma once

// Experiment configuration: YAML parsing with field-level errors, canonical
// re-serialisation, and a stable hash of the canonical text.

#include <cstdint>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <yaml-cpp/yaml.h>

#include "cedl/backbone.hpp"
#include "cedl/data.hpp"
#include "cedl/error.hpp"
#include "cedl/ood_scores.hpp"
#include "cedl/trainer.hpp"

namespace cedl::experiment {

inline constexpr const char* kCodeVersion = "1.0.0";
inline constexpr const char* kDataRootEnv = "CEDL_DATA_ROOT";

struct DatasetConfig {
  std::string id = "toy";  // toy | cifar100
  std::string path;        // cifar100 only
  int n_tasks = 3;
  int classes_per_task = 2;    // toy only; cifar100 derives it from n_tasks
  int samples_per_class = 200; // toy only
  std::uint64_t shuffle_seed = 1993;
  ToyGeometry toy{};
};

struct EvaluationConfig {
  std::vector<std::string> score_methods{"vacuity", "dissonance", "combined", "msp",
                                         "odin",    "energy",     "entropy",  "msp_bc"};
  bool baseline_model = true;
  std::string scored_model_for_baselines = "baseline";  // baseline | cedl
  double baseline_kd_weight = 1.0;
  double odin_temperature = 1000.0;
  double odin_epsilon = 0.0014;
  double energy_temperature = 1.0;
  double combined_beta = 0.5;
  std::string dissonance_orientation = "negative";  // negative: score = -dissonance
  bool uncertainty_from_bc_logits = false;
  std::vector<double> beta_grid = default_beta_grid();
  std::string aupr_positive = "IND";  // IND | OOD

  static std::vector<double> default_beta_grid() {
    std::vector<double> g;
    for (int i = 0; i <= 10; ++i) g.push_back(i / 10.0);
    return g;
  }

  ScoreOptions score_options() const {
    ScoreOptions o;
    o.odin_temperature = odin_temperature;
    o.odin_epsilon = odin_epsilon;
    o.energy_temperature = energy_temperature;
    o.evidential.beta = combined_beta;
    o.evidential.dissonance_negated = dissonance_orientation == "negative";
    o.uncertainty_from_bc_logits = uncertainty_from_bc_logits;
    return o;
  }
};

struct ExperimentConfig {
  std::string run_name = "run";
  std::string output_dir = "results";
  std::uint64_t seed = 0;
  DatasetConfig dataset{};
  ArchSpec backbone{"mlp-toy", 2, {}, {32, 32}};
  TrainerConfig trainer{};
  EvaluationConfig evaluation{};

  std::filesystem::path run_dir() const { return std::filesystem::path(output_dir) / run_name; }
};

namespace detail {

inline void check_keys(const YAML::Node& node, const std::string& section, const std::set<std::string>& allowed) {
  if (!node) return;
  if (!node.IsMap()) throw ConfigError(section.empty() ? "<root>" : section, "must be a mapping");
  for (const auto& kv : node) {
    const auto key = kv.first.as<std::string>();
    if (!allowed.count(key)) throw ConfigError(section.empty() ? key : section + "." + key, "unknown key");
  }
}

template <typename T>
void read(const YAML::Node& node, const std::string& key, const std::string& field, T& out) {
  if (!node || !node[key]) return;
  try {
    out = node[key].as<T>();
  } catch (const YAML::Exception&) {
    throw ConfigError(field, "has the wrong type");
  }
}

inline LossWeights read_weights(const YAML::Node& node, const std::string& field, LossWeights fallback) {
  if (!node) return fallback;
  std::vector<double> v;
  try {
    v = node.as<std::vector<double>>();
  } catch (const YAML::Exception&) {
    throw ConfigError(field, "must be a list [ece, ekl, kd]");
  }
  if (v.size() != 3) throw ConfigError(field, "must have exactly three entries [ece, ekl, kd]");
  return {v[0], v[1], v[2]};
}

}  // namespace detail

inline void validate(ExperimentConfig& cfg) {
  if (cfg.run_name.empty() || cfg.run_name.find('/') != std::string::npos) {
    throw ConfigError("run_name", "must be a non-empty name without '/'");
  }
  auto& d = cfg.dataset;
  if (d.id != "toy" && d.id != "cifar100") throw ConfigError("dataset.id", "must be 'toy' or 'cifar100'");
  if (d.n_tasks < 1) throw ConfigError("dataset.n_tasks", "must be at least 1");
  if (d.id == "toy") {
    if (d.classes_per_task < 2) throw ConfigError("dataset.classes_per_task", "must be at least 2");
    if (d.samples_per_class < 2) throw ConfigError("dataset.samples_per_class", "must be at least 2");
    if (!(d.toy.neighbour_distance > 0.0)) throw ConfigError("dataset.toy_neighbour_distance", "must be positive");
    if (!(d.toy.stddev > 0.0)) throw ConfigError("dataset.toy_stddev", "must be positive");
  } else {
    if (100 % d.n_tasks != 0) throw ConfigError("dataset.n_tasks", "must divide 100");
    d.classes_per_task = 100 / d.n_tasks;
    if (const char* root = std::getenv(kDataRootEnv); root != nullptr && *root != '\0') d.path = root;
    if (d.path.empty()) throw ConfigError("dataset.path", "is required for cifar100");
    if (!std::filesystem::exists(std::filesystem::path(d.path) / "train.bin") ||
        !std::filesystem::exists(std::filesystem::path(d.path) / "test.bin")) {
      throw ConfigError("dataset.path", "'" + d.path + "' does not contain train.bin and test.bin");
    }
  }
  const auto ids = backbone_ids();
  if (std::find(ids.begin(), ids.end(), cfg.backbone.id) == ids.end()) {
    throw ConfigError("backbone.id", "unknown backbone '" + cfg.backbone.id + "'");
  }
  if (cfg.backbone.id == "mlp-toy") {
    if (d.id != "toy") throw ConfigError("backbone.id", "mlp-toy only accepts the toy dataset");
    if (cfg.backbone.hidden.empty()) throw ConfigError("backbone.hidden", "needs at least one layer width");
    cfg.backbone.input_size = 2;
  } else {
    if (d.id != "cifar100") throw ConfigError("backbone.id", "resnet32 needs image inputs");
    cfg.backbone.image = {3, 32, 32};
    cfg.backbone.input_size = cfg.backbone.image.size();
  }
  if (cfg.trainer.augment.id != "none" && d.id == "toy") {
    throw ConfigError("trainer.augment.policy", "image augmentation cannot be applied to toy vectors");
  }
  cfg.trainer.seed = cfg.seed;
  cfg.trainer.validate();

  auto& e = cfg.evaluation;
  if (e.score_methods.empty()) throw ConfigError("evaluation.score_methods", "must not be empty");
  for (const auto& m : e.score_methods) {
    if (!is_score_method(m)) throw ConfigError("evaluation.score_methods", "unknown method '" + m + "'");
  }
  if (e.scored_model_for_baselines != "baseline" && e.scored_model_for_baselines != "cedl") {
    throw ConfigError("evaluation.scored_model_for_baselines", "must be 'baseline' or 'cedl'");
  }
  if (e.scored_model_for_baselines == "baseline" && !e.baseline_model) {
    throw ConfigError("evaluation.scored_model_for_baselines", "'baseline' requires baseline_model: true");
  }
  if (!(e.odin_temperature > 0.0)) throw ConfigError("evaluation.odin.temperature", "must be positive");
  if (e.odin_epsilon < 0.0) throw ConfigError("evaluation.odin.epsilon", "must be non-negative");
  if (!(e.energy_temperature > 0.0)) throw ConfigError("evaluation.energy_temperature", "must be positive");
  if (e.combined_beta < 0.0 || e.combined_beta > 1.0) throw ConfigError("evaluation.combined_beta", "must lie in [0, 1]");
  if (e.dissonance_orientation != "negative" && e.dissonance_orientation != "positive") {
    throw ConfigError("evaluation.dissonance_orientation", "must be 'negative' or 'positive'");
  }
  if (e.aupr_positive != "IND" && e.aupr_positive != "OOD") {
    throw ConfigError("evaluation.aupr_positive", "must be 'IND' or 'OOD'");
  }
  if (e.beta_grid.empty()) throw ConfigError("evaluation.beta_grid", "must not be empty");
  for (double b : e.beta_grid) {
    if (b < 0.0 || b > 1.0) throw ConfigError("evaluation.beta_grid", "values must lie in [0, 1]");
  }
  if (e.baseline_kd_weight < 0.0) throw ConfigError("evaluation.baseline_kd_weight", "must be non-negative");
}

inline ExperimentConfig parse_config(const YAML::Node& root) {
  using detail::check_keys;
  using detail::read;
  ExperimentConfig cfg;
  check_keys(root, "", {"run_name", "output_dir", "seed", "dataset", "backbone", "trainer", "evaluation"});
  read(root, "run_name", "run_name", cfg.run_name);
  read(root, "output_dir", "output_dir", cfg.output_dir);
  read(root, "seed", "seed", cfg.seed);

  const auto ds = root["dataset"];
  check_keys(ds, "dataset",
             {"id", "path", "n_tasks", "classes_per_task", "samples_per_class", "shuffle_seed",
              "toy_neighbour_distance", "toy_stddev"});
  read(ds, "id", "dataset.id", cfg.dataset.id);
  read(ds, "path", "dataset.path", cfg.dataset.path);
  read(ds, "n_tasks", "dataset.n_tasks", cfg.dataset.n_tasks);
  read(ds, "classes_per_task", "dataset.classes_per_task", cfg.dataset.classes_per_task);
  read(ds, "samples_per_class", "dataset.samples_per_class", cfg.dataset.samples_per_class);
  read(ds, "shuffle_seed", "dataset.shuffle_seed", cfg.dataset.shuffle_seed);
  read(ds, "toy_neighbour_distance", "dataset.toy_neighbour_distance", cfg.dataset.toy.neighbour_distance);
  read(ds, "toy_stddev", "dataset.toy_stddev", cfg.dataset.toy.stddev);

  const auto bb = root["backbone"];
  check_keys(bb, "backbone", {"id", "hidden"});
  read(bb, "id", "backbone.id", cfg.backbone.id);
  read(bb, "hidden", "backbone.hidden", cfg.backbone.hidden);

  const auto tr = root["trainer"];
  auto& t = cfg.trainer;
  check_keys(tr, "trainer",
             {"epochs", "batch_size", "lr", "momentum", "weight_decay", "kd_temperature", "loss_weights_first_task",
              "loss_weights_later", "apply_wa", "apply_bc", "ekl_mask_new_only", "augment", "augment_replay",
              "buffer_per_class", "logit_clamp"});
  read(tr, "epochs", "trainer.epochs", t.epochs);
  read(tr, "batch_size", "trainer.batch_size", t.batch_size);
  read(tr, "lr", "trainer.lr", t.lr);
  read(tr, "momentum", "trainer.momentum", t.momentum);
  read(tr, "weight_decay", "trainer.weight_decay", t.weight_decay);
  read(tr, "kd_temperature", "trainer.kd_temperature", t.kd_temperature);
  if (tr) {
    t.first_task = detail::read_weights(tr["loss_weights_first_task"], "trainer.loss_weights_first_task", t.first_task);
    t.later = detail::read_weights(tr["loss_weights_later"], "trainer.loss_weights_later", t.later);
  }
  read(tr, "apply_wa", "trainer.apply_wa", t.apply_wa);
  read(tr, "apply_bc", "trainer.apply_bc", t.apply_bc);
  read(tr, "ekl_mask_new_only", "trainer.ekl_mask_new_only", t.ekl_mask_new_only);
  read(tr, "augment_replay", "trainer.augment_replay", t.augment_replay);
  read(tr, "buffer_per_class", "trainer.buffer_per_class", t.buffer_per_class);
  read(tr, "logit_clamp", "trainer.logit_clamp", t.logit_clamp);
  if (tr) {
    const auto aug = tr["augment"];
    check_keys(aug, "trainer.augment", {"policy", "n", "m"});
    read(aug, "policy", "trainer.augment.policy", t.augment.id);
    read(aug, "n", "trainer.augment.n", t.augment.num_ops);
    read(aug, "m", "trainer.augment.m", t.augment.magnitude);
  }

  const auto ev = root["evaluation"];
  auto& e = cfg.evaluation;
  check_keys(ev, "evaluation",
             {"score_methods", "baseline_model", "scored_model_for_baselines", "baseline_kd_weight", "odin",
              "energy_temperature", "combined_beta", "dissonance_orientation", "uncertainty_from_bc_logits",
              "beta_grid", "aupr_positive"});
  read(ev, "score_methods", "evaluation.score_methods", e.score_methods);
  read(ev, "baseline_model", "evaluation.baseline_model", e.baseline_model);
  read(ev, "scored_model_for_baselines", "evaluation.scored_model_for_baselines", e.scored_model_for_baselines);
  read(ev, "baseline_kd_weight", "evaluation.baseline_kd_weight", e.baseline_kd_weight);
  read(ev, "energy_temperature", "evaluation.energy_temperature", e.energy_temperature);
  read(ev, "combined_beta", "evaluation.combined_beta", e.combined_beta);
  read(ev, "dissonance_orientation", "evaluation.dissonance_orientation", e.dissonance_orientation);
  read(ev, "uncertainty_from_bc_logits", "evaluation.uncertainty_from_bc_logits", e.uncertainty_from_bc_logits);
  read(ev, "aupr_positive", "evaluation.aupr_positive", e.aupr_positive);
  if (ev) {
    const auto odin = ev["odin"];
    check_keys(odin, "evaluation.odin", {"temperature", "epsilon"});
    read(odin, "temperature", "evaluation.odin.temperature", e.odin_temperature);
    read(odin, "epsilon", "evaluation.odin.epsilon", e.odin_epsilon);
    const auto grid = ev["beta_grid"];
    if (grid && grid.IsMap()) {
      check_keys(grid, "evaluation.beta_grid", {"points"});
      int points = 11;
      read(grid, "points", "evaluation.beta_grid.points", points);
      if (points < 2) throw ConfigError("evaluation.beta_grid.points", "must be at least 2");
      e.beta_grid.clear();
      for (int i = 0; i < points; ++i) e.beta_grid.push_back(static_cast<double>(i) / (points - 1));
    } else {
      read(ev, "beta_grid", "evaluation.beta_grid", e.beta_grid);
    }
  }
  validate(cfg);
  return cfg;
}

inline ExperimentConfig load_config(const std::filesystem::path& path) {
  if (!std::filesystem::exists(path)) throw ConfigError("<file>", "config file '" + path.string() + "' not found");
  YAML::Node root;
  try {
    root = YAML::LoadFile(path.string());
  } catch (const YAML::Exception& e) {
    throw ConfigError("<file>", std::string("YAML parse error: ") + e.what());
  }
  return parse_config(root);
}

/// Canonical YAML text of the fully resolved config.
inline std::string to_yaml(const ExperimentConfig& cfg) {
  YAML::Emitter out;
  out.SetDoublePrecision(17);
  auto weights = [&](const LossWeights& w) {
    out << YAML::Flow << YAML::BeginSeq << w.ece << w.ekl << w.kd << YAML::EndSeq;
  };
  out << YAML::BeginMap;
  out << YAML::Key << "run_name" << YAML::Value << cfg.run_name;
  out << YAML::Key << "output_dir" << YAML::Value << cfg.output_dir;
  out << YAML::Key << "seed" << YAML::Value << cfg.seed;
  const auto& d = cfg.dataset;
  out << YAML::Key << "dataset" << YAML::Value << YAML::BeginMap;
  out << YAML::Key << "id" << YAML::Value << d.id;
  if (d.id == "cifar100") out << YAML::Key << "path" << YAML::Value << d.path;
  out << YAML::Key << "n_tasks" << YAML::Value << d.n_tasks;
  out << YAML::Key << "shuffle_seed" << YAML::Value << d.shuffle_seed;
  if (d.id == "toy") {
    out << YAML::Key << "classes_per_task" << YAML::Value << d.classes_per_task;
    out << YAML::Key << "samples_per_class" << YAML::Value << d.samples_per_class;
    out << YAML::Key << "toy_neighbour_distance" << YAML::Value << d.toy.neighbour_distance;
    out << YAML::Key << "toy_stddev" << YAML::Value << d.toy.stddev;
  }
  out << YAML::EndMap;
  out << YAML::Key << "backbone" << YAML::Value << YAML::BeginMap;
  out << YAML::Key << "id" << YAML::Value << cfg.backbone.id;
  if (cfg.backbone.id == "mlp-toy") {
    out << YAML::Key << "hidden" << YAML::Value << YAML::Flow << cfg.backbone.hidden;
  }
  out << YAML::EndMap;
  const auto& t = cfg.trainer;
  out << YAML::Key << "trainer" << YAML::Value << YAML::BeginMap;
  out << YAML::Key << "epochs" << YAML::Value << t.epochs;
  out << YAML::Key << "batch_size" << YAML::Value << t.batch_size;
  out << YAML::Key << "lr" << YAML::Value << t.lr;
  out << YAML::Key << "momentum" << YAML::Value << t.momentum;
  out << YAML::Key << "weight_decay" << YAML::Value << t.weight_decay;
  out << YAML::Key << "kd_temperature" << YAML::Value << t.kd_temperature;
  out << YAML::Key << "loss_weights_first_task" << YAML::Value;
  weights(t.first_task);
  out << YAML::Key << "loss_weights_later" << YAML::Value;
  weights(t.later);
  out << YAML::Key << "apply_wa" << YAML::Value << t.apply_wa;
  out << YAML::Key << "apply_bc" << YAML::Value << t.apply_bc;
  out << YAML::Key << "ekl_mask_new_only" << YAML::Value << t.ekl_mask_new_only;
  out << YAML::Key << "augment" << YAML::Value << YAML::Flow << YAML::BeginMap;
  out << YAML::Key << "policy" << YAML::Value << t.augment.id;
  out << YAML::Key << "n" << YAML::Value << t.augment.num_ops;
  out << YAML::Key << "m" << YAML::Value << t.augment.magnitude;
  out << YAML::EndMap;
  out << YAML::Key << "augment_replay" << YAML::Value << t.augment_replay;
  out << YAML::Key << "buffer_per_class" << YAML::Value << t.buffer_per_class;
  out << YAML::Key << "logit_clamp" << YAML::Value << t.logit_clamp;
  out << YAML::EndMap;
  const auto& e = cfg.evaluation;
  out << YAML::Key << "evaluation" << YAML::Value << YAML::BeginMap;
  out << YAML::Key << "score_methods" << YAML::Value << YAML::Flow << e.score_methods;
  out << YAML::Key << "baseline_model" << YAML::Value << e.baseline_model;
  out << YAML::Key << "scored_model_for_baselines" << YAML::Value << e.scored_model_for_baselines;
  out << YAML::Key << "baseline_kd_weight" << YAML::Value << e.baseline_kd_weight;
  out << YAML::Key << "odin" << YAML::Value << YAML::Flow << YAML::BeginMap;
  out << YAML::Key << "temperature" << YAML::Value << e.odin_temperature;
  out << YAML::Key << "epsilon" << YAML::Value << e.odin_epsilon;
  out << YAML::EndMap;
  out << YAML::Key << "energy_temperature" << YAML::Value << e.energy_temperature;
  out << YAML::Key << "combined_beta" << YAML::Value << e.combined_beta;
  out << YAML::Key << "dissonance_orientation" << YAML::Value << e.dissonance_orientation;
  out << YAML::Key << "uncertainty_from_bc_logits" << YAML::Value << e.uncertainty_from_bc_logits;
  out << YAML::Key << "beta_grid" << YAML::Value << YAML::Flow << e.beta_grid;
  out << YAML::Key << "aupr_positive" << YAML::Value << e.aupr_positive;
  out << YAML::EndMap;
  out << YAML::EndMap;
  return std::string(out.c_str()) + "\n";
}

/// 64-bit FNV-1a.
inline std::uint64_t fnv1a(std::string_view text) {
  std::uint64_t h = 1469598103934665603ull;
  for (unsigned char c : text) {
    h ^= c;
    h *= 1099511628211ull;
  }
  return h;
}

inline TaskStream build_stream(const ExperimentConfig& cfg) {
  const auto& d = cfg.dataset;
  if (d.id == "toy") return make_toy_stream(d.n_tasks, d.classes_per_task, d.samples_per_class, d.shuffle_seed, d.toy);
  return split_tasks(load_cifar100(d.path), d.n_tasks, d.shuffle_seed);
}

/// Trainer settings for the softmax cross-entropy baseline model.
inline TrainerConfig baseline_trainer(const ExperimentConfig& cfg) {
  TrainerConfig t = cfg.trainer;
  t.loss = LossKind::kCrossEntropy;
  t.first_task = {1.0, 0.0, 0.0};
  t.later = {1.0, 0.0, cfg.evaluation.baseline_kd_weight};
  return t;
}

}  // namespace cedl::experiment

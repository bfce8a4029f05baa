#pragma once

// Class-incremental training loop: per-task loss minimisation with replay and
// distillation, then weight aligning; plus a whole-stream driver with
// checkpointing and resume.

#include <filesystem>
#include <fstream>
#include <functional>
#include <numeric>
#include <optional>
#include <random>
#include <string>
#include <unordered_map>
#include <vector>

#include <json.hpp>

#include "cedl/augment.hpp"
#include "cedl/backbone.hpp"
#include "cedl/data.hpp"
#include "cedl/losses.hpp"
#include "cedl/nn/optim.hpp"
#include "cedl/rehearsal.hpp"

namespace cedl {

enum class LossKind { kEvidential, kCrossEntropy };

struct TrainerConfig {
  LossKind loss = LossKind::kEvidential;
  LossWeights first_task{0.5, 0.5, 0.0};
  LossWeights later{0.45, 0.5, 0.05};
  double kd_temperature = 2.0;
  int epochs = 120;
  std::size_t batch_size = 128;
  double lr = 0.1;
  double momentum = 0.9;
  double weight_decay = 5e-4;
  std::uint64_t seed = 0;
  bool apply_wa = true;
  bool apply_bc = false;  // task reports and baseline accuracy use norm-corrected logits
  bool ekl_mask_new_only = true;
  AugmentPolicy augment{};
  bool augment_replay = true;
  double logit_clamp = kDefaultLogitClamp;
  std::size_t buffer_per_class = 20;

  void validate() const {
    if (epochs < 1) throw ConfigError("trainer.epochs", "must be at least 1");
    if (batch_size < 1) throw ConfigError("trainer.batch_size", "must be at least 1");
    if (!(lr > 0.0)) throw ConfigError("trainer.lr", "must be positive");
    if (momentum < 0.0 || momentum >= 1.0) throw ConfigError("trainer.momentum", "must lie in [0, 1)");
    if (weight_decay < 0.0) throw ConfigError("trainer.weight_decay", "must be non-negative");
    if (!(kd_temperature > 0.0)) throw ConfigError("trainer.kd_temperature", "must be positive");
    if (!is_known_policy(augment.id)) throw ConfigError("trainer.augment", "unknown policy '" + augment.id + "'");
    try {
      first_task.validate();
      later.validate();
    } catch (const InvalidInput& e) {
      throw ConfigError("trainer.loss_weights", e.what());
    }
  }
};

struct EpochRecord {
  int task = 0;
  int epoch = 0;
  double loss = 0.0;
  double ece = 0.0;
  double ekl = 0.0;
  double kd = 0.0;
  double lr = 0.0;
};

inline nlohmann::json to_json(const EpochRecord& r) {
  return {{"task", r.task}, {"epoch", r.epoch}, {"loss", r.loss}, {"ece", r.ece},
          {"ekl", r.ekl},   {"kd", r.kd},       {"lr", r.lr}};
}

struct TaskTrainResult {
  std::vector<EpochRecord> log;
  double final_loss = 0.0;
  bool kd_used = false;
  bool wa_applied = false;
  double wa_gamma = 1.0;
};

namespace detail {

inline std::mt19937_64 epoch_rng(std::uint64_t seed, int task_id, int epoch) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(task_id), static_cast<std::uint32_t>(epoch)};
  return std::mt19937_64(seq);
}

}  // namespace detail

/// Trains `model` on `task` at 1-based position `stage` in the stream. The head
/// must already end with the task's classes; `teacher` must be the frozen
/// previous-task model when stage >= 2.
inline TaskTrainResult train_task(EvidentialClassifier& model, const TaskSpec& task, const RehearsalBuffer& buffer,
                                  const EvidentialClassifier* teacher, const TrainerConfig& cfg, int stage) {
  cfg.validate();
  require(stage >= 1, "train_task: stage must be at least 1");
  require(!task.train_set.empty(), "train_task: task has no training data");
  const std::size_t num_classes = model.num_classes();
  const std::size_t new_count = task.class_ids.size();
  require(new_count >= 1 && new_count <= num_classes, "train_task: head is not expanded for this task");
  const std::size_t old_count = num_classes - new_count;
  for (std::size_t i = 0; i < new_count; ++i) {
    require(model.seen_classes()[old_count + i] == task.class_ids[i],
            "train_task: head must end with the task's classes");
  }
  if (stage >= 2) {
    require(teacher != nullptr, "train_task: a teacher model is required from the second task on");
    require(teacher->num_classes() == old_count, "train_task: teacher head does not cover the old classes");
    require(old_count >= 1, "train_task: no old classes to distil at stage >= 2");
  }

  const LossWeights& w = stage == 1 ? cfg.first_task : cfg.later;
  const bool use_kd = stage >= 2;
  const KDConfig kd_cfg{cfg.kd_temperature, old_count};
  const ClassMask mask = cfg.ekl_mask_new_only && stage >= 2 ? new_class_mask(num_classes, old_count)
                                                             : full_mask(num_classes);

  std::vector<const Sample*> pool;
  std::vector<bool> is_replay;
  for (const auto& s : task.train_set) {
    pool.push_back(&s);
    is_replay.push_back(false);
  }
  for (const auto& [_, exemplars] : buffer.store) {
    for (const auto& s : exemplars) {
      pool.push_back(&s);
      is_replay.push_back(true);
    }
  }
  std::unordered_map<int, std::size_t> head_index;
  for (std::size_t i = 0; i < num_classes; ++i) head_index[model.seen_classes()[i]] = i;
  std::vector<std::size_t> labels(pool.size());
  for (std::size_t i = 0; i < pool.size(); ++i) {
    const auto it = head_index.find(pool[i]->label);
    require(it != head_index.end(), "train_task: sample label is not in the head");
    labels[i] = it->second;
  }

  nn::Sgd opt(model.parameters(), cfg.momentum, cfg.weight_decay);
  TaskTrainResult result;
  std::vector<std::size_t> order(pool.size());
  const nn::ImageShape image = model.arch().image;

  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    const double lr = nn::cosine_lr(cfg.lr, epoch, cfg.epochs);
    auto rng = detail::epoch_rng(cfg.seed, task.task_id, epoch);
    std::iota(order.begin(), order.end(), 0);
    std::shuffle(order.begin(), order.end(), rng);

    EpochRecord rec{task.task_id, epoch, 0.0, 0.0, 0.0, 0.0, lr};
    for (std::size_t start = 0; start < order.size(); start += cfg.batch_size) {
      const std::size_t len = std::min(cfg.batch_size, order.size() - start);
      std::vector<const Sample*> batch_samples(len);
      std::vector<std::size_t> batch_labels(len);
      for (std::size_t i = 0; i < len; ++i) {
        batch_samples[i] = pool[order[start + i]];
        batch_labels[i] = labels[order[start + i]];
      }
      const Matrix raw = to_batch(batch_samples);
      Matrix x = augment(raw, image, cfg.augment, rng());
      if (!cfg.augment_replay) {
        for (std::size_t i = 0; i < len; ++i) {
          if (is_replay[order[start + i]]) x.row(static_cast<Eigen::Index>(i)) = raw.row(static_cast<Eigen::Index>(i));
        }
      }
      const Matrix y = one_hot(batch_labels, num_classes);

      const Matrix logits = model.forward(x, Mode::kTrain);
      Matrix grad = Matrix::Zero(logits.rows(), logits.cols());
      double ece = 0.0, ekl = 0.0, kd = 0.0;
      if (cfg.loss == LossKind::kEvidential) {
        const auto l1 = ece_loss_with_grad(logits, y, cfg.logit_clamp);
        const auto l2 = ekl_loss_with_grad(logits, y, mask, cfg.logit_clamp);
        ece = l1.value;
        ekl = l2.value;
        grad += w.ece * l1.grad + w.ekl * l2.grad;
      } else {
        const auto ce = softmax_ce_with_grad(logits, y);
        ece = ce.value;
        grad += w.ece * ce.grad;
      }
      if (use_kd) {
        const auto l3 = kd_loss_with_grad(logits, teacher->infer(x), kd_cfg);
        kd = l3.value;
        if (w.kd != 0.0) grad += w.kd * l3.grad;
      }
      const double total = cfg.loss == LossKind::kEvidential ? total_loss(ece, ekl, kd, w) : w.ece * ece + w.kd * kd;

      opt.zero_grad();
      model.backward(grad);
      opt.step(lr);

      const double share = static_cast<double>(len) / static_cast<double>(order.size());
      rec.loss += share * total;
      rec.ece += share * ece;
      rec.ekl += share * ekl;
      rec.kd += share * kd;
    }
    result.log.push_back(rec);
  }
  result.final_loss = result.log.back().loss;
  result.kd_used = use_kd;

  if (cfg.apply_wa && stage >= 2) {
    const std::vector<int> old_ids(model.seen_classes().begin(),
                                   model.seen_classes().begin() + static_cast<long>(old_count));
    result.wa_gamma = weight_align(model, old_ids, task.class_ids);
    result.wa_applied = true;
  }
  return result;
}

// --- whole stream -----------------------------------------------------------

struct TaskReport {
  int task_id = 0;
  TaskTrainResult training;
  std::size_t buffer_size = 0;
  bool resumed = false;  // loaded from disk instead of trained
};

struct StreamRun {
  std::vector<EvidentialClassifier> snapshots;  // model after each task
  RehearsalBuffer buffer;
  std::vector<TaskReport> reports;
};

struct RunOptions {
  std::filesystem::path out_dir;  // empty: nothing is persisted
  bool resume = false;
  /// Evaluation hook, called after every task with the frozen model and its
  /// 0-based task index. The returned object is stored in metrics.json.
  std::function<nlohmann::json(const EvidentialClassifier&, std::size_t)> after_task;
  std::function<void(const EpochRecord&)> on_epoch;
};

namespace detail {

inline std::filesystem::path task_dir(const std::filesystem::path& root, int task_id) {
  return root / ("task_" + std::to_string(task_id));
}

inline nlohmann::json read_json(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw std::runtime_error("cannot read " + path.string());
  return nlohmann::json::parse(is);
}

inline void write_json(const std::filesystem::path& path, const nlohmann::json& j) {
  std::ofstream os(path);
  if (!os) throw std::runtime_error("cannot write " + path.string());
  os << j.dump(2) << '\n';
}

inline bool task_complete(const std::filesystem::path& root, int task_id) {
  const auto dir = task_dir(root, task_id);
  return std::filesystem::exists(dir / "checkpoint.bin") && std::filesystem::exists(dir / "buffer_manifest.json") &&
         std::filesystem::exists(dir / "metrics.json");
}

inline TaskTrainResult training_from_json(const nlohmann::json& j) {
  TaskTrainResult t;
  for (const auto& r : j.at("epochs")) {
    t.log.push_back({r.at("task"), r.at("epoch"), r.at("loss"), r.at("ece"), r.at("ekl"), r.at("kd"), r.at("lr")});
  }
  t.final_loss = j.at("final_loss");
  t.kd_used = j.at("kd_used");
  t.wa_applied = j.at("wa_applied");
  t.wa_gamma = j.at("wa_gamma");
  return t;
}

}  // namespace detail

/// Runs every task of `stream` in order: snapshot teacher, expand head, train,
/// refresh the buffer, persist, evaluate. With `resume`, completed tasks found
/// under out_dir are loaded instead of retrained.
inline StreamRun run_stream(const TaskStream& stream, const ArchSpec& arch, const TrainerConfig& cfg,
                            const RunOptions& options = {}) {
  cfg.validate();
  require(!stream.tasks.empty(), "run_stream: empty stream");
  const bool persist = !options.out_dir.empty();
  if (persist) std::filesystem::create_directories(options.out_dir);
  require(!options.resume || persist, "run_stream: resume needs an output directory");

  StreamRun run;
  run.buffer.per_class_capacity = cfg.buffer_per_class;
  std::optional<EvidentialClassifier> model;

  std::size_t first_todo = 0;
  if (options.resume) {
    while (first_todo < stream.tasks.size() && detail::task_complete(options.out_dir, stream.tasks[first_todo].task_id)) {
      ++first_todo;
    }
    for (std::size_t i = 0; i < first_todo; ++i) {
      const auto dir = detail::task_dir(options.out_dir, stream.tasks[i].task_id);
      run.snapshots.push_back(load_checkpoint((dir / "checkpoint.bin").string()));
      const auto metrics = detail::read_json(dir / "metrics.json");
      TaskReport report{stream.tasks[i].task_id, detail::training_from_json(metrics.at("training")),
                        metrics.at("buffer_size"), true};
      run.reports.push_back(std::move(report));
    }
    if (first_todo > 0) {
      model = run.snapshots.back();
      run.buffer = restore_buffer(
          detail::read_json(detail::task_dir(options.out_dir, stream.tasks[first_todo - 1].task_id) /
                            "buffer_manifest.json"),
          stream);
    }
  }
  if (!model) model = make_classifier(arch, cfg.seed);

  std::ofstream log;
  if (persist) {
    // Keep log lines of the tasks that were loaded, drop anything later.
    std::vector<std::string> kept;
    const auto log_path = options.out_dir / "train_log.jsonl";
    if (options.resume && std::filesystem::exists(log_path)) {
      std::ifstream is(log_path);
      std::string line;
      while (std::getline(is, line)) {
        if (line.empty()) continue;
        const auto rec = nlohmann::json::parse(line);
        if (rec.at("task").get<int>() <= (first_todo > 0 ? stream.tasks[first_todo - 1].task_id : 0)) {
          kept.push_back(line);
        }
      }
    }
    log.open(log_path, std::ios::trunc);
    for (const auto& line : kept) log << line << '\n';
  }

  for (std::size_t i = first_todo; i < stream.tasks.size(); ++i) {
    const auto& task = stream.tasks[i];
    const int stage = static_cast<int>(i) + 1;
    std::optional<EvidentialClassifier> teacher;
    if (stage >= 2) teacher = *model;
    expand_head(*model, task.class_ids);

    TaskReport report{task.task_id, train_task(*model, task, run.buffer, teacher ? &*teacher : nullptr, cfg, stage),
                      0, false};
    for (const auto& rec : report.training.log) {
      if (log.is_open()) log << to_json(rec).dump() << '\n';
      if (options.on_epoch) options.on_epoch(rec);
    }
    update_buffer(run.buffer, task, *model);
    report.buffer_size = run.buffer.size();

    nlohmann::json evaluation = nlohmann::json::object();
    if (options.after_task) evaluation = options.after_task(*model, i);
    if (persist) {
      const auto dir = detail::task_dir(options.out_dir, task.task_id);
      std::filesystem::create_directories(dir);
      save_checkpoint(*model, (dir / "checkpoint.bin").string());
      detail::write_json(dir / "buffer_manifest.json", buffer_manifest(run.buffer));
      nlohmann::json epochs = nlohmann::json::array();
      for (const auto& rec : report.training.log) epochs.push_back(to_json(rec));
      detail::write_json(dir / "metrics.json",
                         {{"task_id", task.task_id},
                          {"stage", stage},
                          {"buffer_size", report.buffer_size},
                          {"training",
                           {{"epochs", epochs},
                            {"final_loss", report.training.final_loss},
                            {"kd_used", report.training.kd_used},
                            {"wa_applied", report.training.wa_applied},
                            {"wa_gamma", report.training.wa_gamma}}},
                          {"evaluation", evaluation}});
      log.flush();
    }
    run.snapshots.push_back(*model);
    run.reports.push_back(std::move(report));
  }
  return run;
}

}  // namespace cedl

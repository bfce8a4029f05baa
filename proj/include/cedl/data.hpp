#pragma once

// Class-incremental task streams: CIFAR-100 from the published binary
// archives, or 2-D Gaussian toy clusters for desk-scale runs.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <numbers>
#include <numeric>
#include <random>
#include <span>
#include <string>
#include <unordered_set>
#include <vector>

#include "cedl/error.hpp"
#include "cedl/nn/tensor.hpp"

namespace cedl {

struct Sample {
  std::vector<float> x;
  int label = 0;
  std::size_t id = 0;  // unique within its split (train or test) of the dataset
};

/// A labelled dataset with train/test splits.
struct Dataset {
  std::string id;
  int num_classes = 0;
  std::size_t input_size = 0;
  nn::ImageShape image{};  // zero for vector inputs
  std::vector<Sample> train;
  std::vector<Sample> test;
};

struct TaskSpec {
  int task_id = 1;
  std::vector<int> class_ids;
  std::vector<Sample> train_set;
  std::vector<Sample> test_set;
};

struct TaskStream {
  std::string dataset_id;
  std::vector<TaskSpec> tasks;
  int total_classes = 0;
  std::uint64_t shuffle_seed = 0;
  std::size_t input_size = 0;
  nn::ImageShape image{};
};

/// Stacks samples into a row-major batch.
inline nn::Matrix to_batch(std::span<const Sample* const> samples) {
  require(!samples.empty(), "to_batch: empty sample list");
  const auto width = samples.front()->x.size();
  nn::Matrix batch(static_cast<Eigen::Index>(samples.size()), static_cast<Eigen::Index>(width));
  for (std::size_t i = 0; i < samples.size(); ++i) {
    require(samples[i]->x.size() == width, "to_batch: ragged samples");
    for (std::size_t j = 0; j < width; ++j) {
      batch(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = samples[i]->x[j];
    }
  }
  return batch;
}

inline nn::Matrix to_batch(std::span<const Sample> samples) {
  std::vector<const Sample*> ptrs;
  ptrs.reserve(samples.size());
  for (const auto& s : samples) ptrs.push_back(&s);
  return to_batch(ptrs);
}

/// Shuffles the class order with a seeded uniform permutation and cuts it into
/// `n_tasks` equal contiguous blocks.
inline TaskStream split_tasks(const Dataset& data, int n_tasks, std::uint64_t shuffle_seed) {
  require(n_tasks >= 1, "split_tasks: need at least one task");
  require(data.num_classes % n_tasks == 0, "split_tasks: " + std::to_string(data.num_classes) +
                                               " classes cannot be split into " + std::to_string(n_tasks) +
                                               " equal tasks");
  std::vector<int> order(static_cast<std::size_t>(data.num_classes));
  std::iota(order.begin(), order.end(), 0);
  std::mt19937_64 rng(shuffle_seed);
  std::shuffle(order.begin(), order.end(), rng);

  const auto per_task = static_cast<std::size_t>(data.num_classes / n_tasks);
  std::vector<int> task_of(order.size());
  TaskStream stream{data.id, {}, data.num_classes, shuffle_seed, data.input_size, data.image};
  for (int t = 0; t < n_tasks; ++t) {
    TaskSpec task;
    task.task_id = t + 1;
    task.class_ids.assign(order.begin() + static_cast<long>(t * per_task),
                          order.begin() + static_cast<long>((t + 1) * per_task));
    for (int c : task.class_ids) task_of[static_cast<std::size_t>(c)] = t;
    stream.tasks.push_back(std::move(task));
  }
  for (const auto& s : data.train) {
    require(s.label >= 0 && s.label < data.num_classes, "split_tasks: label out of range");
    stream.tasks[static_cast<std::size_t>(task_of[static_cast<std::size_t>(s.label)])].train_set.push_back(s);
  }
  for (const auto& s : data.test) {
    require(s.label >= 0 && s.label < data.num_classes, "split_tasks: label out of range");
    stream.tasks[static_cast<std::size_t>(task_of[static_cast<std::size_t>(s.label)])].test_set.push_back(s);
  }
  return stream;
}

// --- toy data -----------------------------------------------------------------

struct ToyGeometry {
  double neighbour_distance = 4.0;  // between adjacent class means on the circle
  double stddev = 0.4;
};

/// Pairwise margin check: for every pair of classes, the projections of their
/// points onto the line joining the two means do not overlap.
inline bool toy_clusters_separable(const Dataset& data, const std::vector<std::array<double, 2>>& means) {
  std::vector<std::vector<const Sample*>> by_class(means.size());
  for (const auto* split : {&data.train, &data.test}) {
    for (const auto& s : *split) by_class[static_cast<std::size_t>(s.label)].push_back(&s);
  }
  for (std::size_t a = 0; a < means.size(); ++a) {
    for (std::size_t b = a + 1; b < means.size(); ++b) {
      const double ux = means[b][0] - means[a][0];
      const double uy = means[b][1] - means[a][1];
      double max_a = -INFINITY;
      double min_b = INFINITY;
      for (const auto* s : by_class[a]) max_a = std::max(max_a, ux * s->x[0] + uy * s->x[1]);
      for (const auto* s : by_class[b]) min_b = std::min(min_b, ux * s->x[0] + uy * s->x[1]);
      if (!(max_a < min_b)) return false;
    }
  }
  return true;
}

/// Gaussian clusters with means evenly spaced on a circle, one per class;
/// each class is split 80/20 into train/test. Task k holds classes
/// [k * classes_per_task, (k + 1) * classes_per_task). Class c sits at slot
/// 2c on the circle, wrapping onto the odd slots once the even ones are
/// used, so consecutive classes are never circle neighbours.
inline TaskStream make_toy_stream(int n_tasks, int classes_per_task, int samples_per_class, std::uint64_t seed,
                                  const ToyGeometry& geometry = {}) {
  require(n_tasks >= 1 && samples_per_class >= 1, "make_toy_stream: counts must be positive");
  require(classes_per_task >= 2, "make_toy_stream: a task needs at least two classes");
  const int classes = n_tasks * classes_per_task;
  const double radius = geometry.neighbour_distance / (2.0 * std::sin(std::numbers::pi / classes));
  std::vector<std::array<double, 2>> means(static_cast<std::size_t>(classes));
  for (int c = 0; c < classes; ++c) {
    const int slot = (2 * c) % classes + (classes % 2 == 0 && 2 * c >= classes ? 1 : 0);
    const double angle = 2.0 * std::numbers::pi * slot / classes;
    means[static_cast<std::size_t>(c)] = {radius * std::cos(angle), radius * std::sin(angle)};
  }

  Dataset data{"toy", classes, 2, {}, {}, {}};
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> noise(0.0, geometry.stddev);
  const int n_train = static_cast<int>(std::floor(0.8 * samples_per_class));
  for (int c = 0; c < classes; ++c) {
    for (int i = 0; i < samples_per_class; ++i) {
      Sample s;
      s.label = c;
      s.x = {static_cast<float>(means[static_cast<std::size_t>(c)][0] + noise(rng)),
             static_cast<float>(means[static_cast<std::size_t>(c)][1] + noise(rng))};
      auto& split = i < n_train ? data.train : data.test;
      s.id = split.size();
      split.push_back(std::move(s));
    }
  }
  if (!toy_clusters_separable(data, means)) {
    throw std::runtime_error("make_toy_stream: generated clusters are not pairwise separable; increase spacing");
  }

  TaskStream stream{"toy", {}, classes, seed, 2, {}};
  for (int t = 0; t < n_tasks; ++t) {
    TaskSpec task;
    task.task_id = t + 1;
    for (int c = t * classes_per_task; c < (t + 1) * classes_per_task; ++c) task.class_ids.push_back(c);
    stream.tasks.push_back(std::move(task));
  }
  for (const auto& s : data.train) stream.tasks[static_cast<std::size_t>(s.label / classes_per_task)].train_set.push_back(s);
  for (const auto& s : data.test) stream.tasks[static_cast<std::size_t>(s.label / classes_per_task)].test_set.push_back(s);
  return stream;
}

enum class Split { kTrain, kTest };

/// Writes a toy stream as CSV with columns x1,x2,label,task_id.
inline void write_stream_csv(const TaskStream& stream, Split split, const std::string& path) {
  require(stream.input_size == 2, "write_stream_csv: only 2-D streams have a columnar form");
  std::ofstream os(path);
  if (!os) throw std::runtime_error("cannot write " + path);
  os.precision(9);
  os << "x1,x2,label,task_id\n";
  for (const auto& task : stream.tasks) {
    for (const auto& s : split == Split::kTrain ? task.train_set : task.test_set) {
      os << s.x[0] << ',' << s.x[1] << ',' << s.label << ',' << task.task_id << '\n';
    }
  }
}

// --- CIFAR-100 ---------------------------------------------------------------

namespace detail {

inline std::vector<Sample> read_cifar100_file(const std::filesystem::path& path) {
  constexpr std::size_t kPixels = 3 * 32 * 32;
  constexpr std::size_t kRecord = 2 + kPixels;
  std::ifstream is(path, std::ios::binary);
  if (!is) throw InvalidInput("CIFAR-100 archive not found: " + path.string());
  std::vector<unsigned char> buf(kRecord);
  std::vector<Sample> out;
  while (is.read(reinterpret_cast<char*>(buf.data()), static_cast<std::streamsize>(kRecord))) {
    Sample s;
    s.label = buf[1];  // fine label; buf[0] is the coarse label
    s.id = out.size();
    s.x.resize(kPixels);
    for (std::size_t i = 0; i < kPixels; ++i) s.x[i] = static_cast<float>(buf[2 + i]) / 255.0f;
    out.push_back(std::move(s));
  }
  if (is.gcount() != 0) throw InvalidInput("CIFAR-100 archive has a truncated record: " + path.string());
  return out;
}

}  // namespace detail

/// Reads train.bin / test.bin from the "cifar-100-binary" directory layout.
inline Dataset load_cifar100(const std::filesystem::path& dir) {
  Dataset data;
  data.id = "cifar100";
  data.num_classes = 100;
  data.image = {3, 32, 32};
  data.input_size = data.image.size();
  data.train = detail::read_cifar100_file(dir / "train.bin");
  data.test = detail::read_cifar100_file(dir / "test.bin");
  for (const auto* split : {&data.train, &data.test}) {
    for (const auto& s : *split) {
      if (s.label >= data.num_classes) throw InvalidInput("CIFAR-100 fine label out of range");
    }
  }
  return data;
}

/// Test samples of tasks [first, last] (1-based, inclusive).
inline std::vector<const Sample*> test_samples(const TaskStream& stream, int first, int last) {
  std::vector<const Sample*> out;
  for (const auto& task : stream.tasks) {
    if (task.task_id < first || task.task_id > last) continue;
    for (const auto& s : task.test_set) out.push_back(&s);
  }
  return out;
}

}  // namespace cedl

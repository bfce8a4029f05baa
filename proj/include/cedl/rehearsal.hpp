#pragma once

// Exemplar memory: herding selection and a growing per-class buffer.

#include <algorithm>
#include <fstream>
#include <limits>
#include <map>
#include <string>
#include <unordered_map>
#include <vector>

#include <json.hpp>

#include "cedl/backbone.hpp"
#include "cedl/data.hpp"
#include "cedl/error.hpp"

namespace cedl {

/// Greedy herding: at step k pick the unused row i minimising
/// ||mu - (sum_selected + f_i) / k||, where mu is the mean row. Ties go to the
/// lowest index. Returns min(m, n) indices in selection order.
inline std::vector<std::size_t> herding_select(const Matrix& features, std::size_t m) {
  require(features.rows() > 0, "herding_select: empty feature set");
  require(m >= 1, "herding_select: m must be at least 1");
  const auto n = static_cast<std::size_t>(features.rows());
  const nn::RowVector mu = features.colwise().mean();
  nn::RowVector running = nn::RowVector::Zero(features.cols());
  std::vector<bool> used(n, false);
  std::vector<std::size_t> picked;
  const std::size_t target = std::min(m, n);
  picked.reserve(target);
  for (std::size_t k = 1; k <= target; ++k) {
    std::size_t best = n;
    double best_dist = std::numeric_limits<double>::infinity();
    for (std::size_t i = 0; i < n; ++i) {
      if (used[i]) continue;
      const double d = (mu - (running + features.row(static_cast<Eigen::Index>(i))) / static_cast<double>(k)).norm();
      if (d < best_dist) {
        best_dist = d;
        best = i;
      }
    }
    used[best] = true;
    running += features.row(static_cast<Eigen::Index>(best));
    picked.push_back(best);
  }
  return picked;
}

struct RehearsalBuffer {
  std::size_t per_class_capacity = 20;
  std::map<int, std::vector<Sample>> store;

  std::size_t size() const {
    std::size_t n = 0;
    for (const auto& [_, v] : store) n += v.size();
    return n;
  }
};

/// Eval-mode penultimate features in chunks, each row L2-normalised.
inline Matrix normalised_features(const EvidentialClassifier& model, const std::vector<const Sample*>& samples,
                                  std::size_t chunk = 256) {
  Matrix out(static_cast<Eigen::Index>(samples.size()), static_cast<Eigen::Index>(model.feature_size()));
  for (std::size_t start = 0; start < samples.size(); start += chunk) {
    const std::size_t len = std::min(chunk, samples.size() - start);
    const Matrix f = model.features(to_batch(std::span(samples).subspan(start, len)));
    out.middleRows(static_cast<Eigen::Index>(start), static_cast<Eigen::Index>(len)) = f;
  }
  for (Eigen::Index r = 0; r < out.rows(); ++r) {
    const double norm = out.row(r).norm();
    if (norm > 0.0) out.row(r) /= norm;
  }
  return out;
}

/// Adds herded exemplars for every class of `task`; existing classes are kept.
inline void update_buffer(RehearsalBuffer& buffer, const TaskSpec& task, const EvidentialClassifier& model) {
  if (buffer.per_class_capacity == 0) return;
  for (int c : task.class_ids) {
    std::vector<const Sample*> members;
    for (const auto& s : task.train_set) {
      if (s.label == c) members.push_back(&s);
    }
    if (members.empty()) continue;
    const auto picks = herding_select(normalised_features(model, members), buffer.per_class_capacity);
    auto& slot = buffer.store[c];
    slot.clear();
    for (auto i : picks) slot.push_back(*members[i]);
  }
}

inline nlohmann::json buffer_manifest(const RehearsalBuffer& buffer) {
  nlohmann::json classes = nlohmann::json::object();
  for (const auto& [c, samples] : buffer.store) {
    auto& ids = classes[std::to_string(c)] = nlohmann::json::array();
    for (const auto& s : samples) ids.push_back(s.id);
  }
  return {{"per_class_capacity", buffer.per_class_capacity}, {"size", buffer.size()}, {"classes", classes}};
}

/// Rebuilds a buffer from its manifest, looking exemplars up by train-sample id.
inline RehearsalBuffer restore_buffer(const nlohmann::json& manifest, const TaskStream& stream) {
  std::unordered_map<std::size_t, const Sample*> by_id;
  for (const auto& t : stream.tasks) {
    for (const auto& s : t.train_set) by_id.emplace(s.id, &s);
  }
  RehearsalBuffer buffer;
  buffer.per_class_capacity = manifest.at("per_class_capacity").get<std::size_t>();
  for (const auto& [key, ids] : manifest.at("classes").items()) {
    auto& slot = buffer.store[std::stoi(key)];
    for (const auto& id : ids) {
      const auto it = by_id.find(id.get<std::size_t>());
      if (it == by_id.end()) throw InvalidInput("buffer manifest references unknown sample " + id.dump());
      slot.push_back(*it->second);
    }
  }
  return buffer;
}

}  // namespace cedl

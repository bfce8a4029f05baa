#pragma once

#include <cstddef>
#include <cstdint>
#include <random>

#include <Eigen/Dense>

namespace cedl::nn {

/// Batches are row-major: one sample per row, features flattened in CHW order.
using Matrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using RowVector = Eigen::Matrix<double, 1, Eigen::Dynamic>;

enum class Mode { kTrain, kEval };

/// Spatial layout of an image sample.
struct ImageShape {
  std::size_t channels = 0;
  std::size_t height = 0;
  std::size_t width = 0;

  std::size_t size() const noexcept { return channels * height * width; }
  bool operator==(const ImageShape&) const = default;
};

/// A trainable tensor and its accumulated gradient. `decay` marks whether
/// weight decay applies.
struct Parameter {
  Matrix value;
  Matrix grad;
  bool decay = true;

  void zero_grad() { grad.setZero(value.rows(), value.cols()); }
};

using Rng = std::mt19937_64;

/// He-normal initialisation with the given fan-in.
inline void he_normal(Matrix& m, std::size_t fan_in, Rng& rng) {
  std::normal_distribution<double> dist(0.0, std::sqrt(2.0 / static_cast<double>(fan_in)));
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = dist(rng);
}

}  // namespace cedl::nn

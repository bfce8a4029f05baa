#pragma once

#include <cmath>
#include <numbers>
#include <vector>

#include "cedl/error.hpp"
#include "cedl/nn/tensor.hpp"

namespace cedl::nn {

/// SGD with heavy-ball momentum and L2 weight decay (PyTorch update order:
/// g += wd * w; v = mu * v + g; w -= lr * v).
class Sgd {
 public:
  Sgd(std::vector<Parameter*> params, double momentum, double weight_decay)
      : params_(std::move(params)), momentum_(momentum), weight_decay_(weight_decay) {
    velocity_.reserve(params_.size());
    for (const auto* p : params_) velocity_.push_back(Matrix::Zero(p->value.rows(), p->value.cols()));
  }

  void zero_grad() {
    for (auto* p : params_) p->zero_grad();
  }

  void step(double lr) {
    for (std::size_t i = 0; i < params_.size(); ++i) {
      auto& p = *params_[i];
      Matrix g = p.grad;
      if (p.decay && weight_decay_ != 0.0) g += weight_decay_ * p.value;
      velocity_[i] = momentum_ * velocity_[i] + g;
      p.value -= lr * velocity_[i];
    }
  }

 private:
  std::vector<Parameter*> params_;
  std::vector<Matrix> velocity_;
  double momentum_;
  double weight_decay_;
};

/// Cosine annealing from `base` to zero over `total` epochs, evaluated at the
/// start of 0-based `epoch`.
inline double cosine_lr(double base, int epoch, int total) {
  require(total >= 1 && epoch >= 0, "cosine_lr: invalid epoch range");
  return base * 0.5 * (1.0 + std::cos(std::numbers::pi * static_cast<double>(epoch) / static_cast<double>(total)));
}

}  // namespace cedl::nn

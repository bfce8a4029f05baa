#pragma once

// Training objectives for the evidential classifier. Forward values take
// Dirichlet parameters or logits directly; the *_with_grad variants also
// return d(loss)/d(logits) through the clamped-exp evidence map, which is
// what the trainer feeds into the backbone's backward pass.

#include <cmath>
#include <string>
#include <vector>

#include <boost/math/special_functions/digamma.hpp>
#include <boost/math/special_functions/trigamma.hpp>

#include "cedl/error.hpp"
#include "cedl/evidential.hpp"
#include "cedl/nn/tensor.hpp"

namespace cedl {

using nn::Matrix;
using nn::RowVector;

struct LossWeights {
  double ece = 0.5;  // lambda1
  double ekl = 0.5;  // lambda2
  double kd = 0.0;   // lambda3

  void validate() const {
    for (double w : {ece, ekl, kd}) {
      require(std::isfinite(w) && w >= 0.0, "LossWeights: weights must be finite and non-negative");
    }
  }
};

struct KDConfig {
  double temperature = 2.0;
  std::size_t old_class_count = 0;
};

/// Loss value together with its gradient with respect to the logits.
struct LossWithGrad {
  double value = 0.0;
  Matrix grad;
};

namespace detail {

inline std::size_t true_class(const Matrix& y, Eigen::Index row) {
  std::size_t label = 0;
  int hot = 0;
  for (Eigen::Index c = 0; c < y.cols(); ++c) {
    const double v = y(row, c);
    if (v == 1.0) {
      label = static_cast<std::size_t>(c);
      ++hot;
    } else if (v != 0.0) {
      hot = -1;
      break;
    }
  }
  if (hot != 1) throw InvalidInput("label row " + std::to_string(row) + " is not one-hot");
  return label;
}

inline void check_batch(const Matrix& a, const Matrix& y, const char* who) {
  if (a.rows() != y.rows() || a.cols() != y.cols() || a.rows() == 0) {
    throw InvalidInput(std::string(who) + ": dimension mismatch between parameters and labels");
  }
}

/// d(alpha)/d(logit) for alpha = exp(min(z, clamp)) + 1.
inline double evidence_slope(double logit, double clamp) { return logit < clamp ? std::exp(logit) : 0.0; }

inline Matrix alpha_from_logits(const Matrix& logits, double clamp) {
  Matrix alpha(logits.rows(), logits.cols());
  for (Eigen::Index i = 0; i < logits.rows(); ++i) {
    const auto e = evidence_from_logits(std::span<const double>(logits.row(i).data(), logits.cols()), clamp);
    for (Eigen::Index c = 0; c < logits.cols(); ++c) alpha(i, c) = e[static_cast<std::size_t>(c)] + 1.0;
  }
  return alpha;
}

inline RowVector log_softmax_row(const Eigen::Ref<const RowVector>& z, double temperature) {
  const RowVector scaled = z / temperature;
  const double m = scaled.maxCoeff();
  const double lse = m + std::log((scaled.array() - m).exp().sum());
  return (scaled.array() - lse).matrix();
}

inline RowVector softmax_row(const Eigen::Ref<const RowVector>& z, double temperature) {
  return log_softmax_row(z, temperature).array().exp().matrix();
}

}  // namespace detail

/// Evidential cross-entropy: mean over rows of log S - log alpha_y.
inline double ece_loss(const Matrix& alpha, const Matrix& y) {
  detail::check_batch(alpha, y, "ece_loss");
  double total = 0.0;
  for (Eigen::Index i = 0; i < alpha.rows(); ++i) {
    const auto j = static_cast<Eigen::Index>(detail::true_class(y, i));
    total += std::log(alpha.row(i).sum()) - std::log(alpha(i, j));
  }
  return total / static_cast<double>(alpha.rows());
}

/// Coordinates over which the KL regulariser runs.
using ClassMask = std::vector<bool>;

inline ClassMask full_mask(std::size_t num_classes) { return ClassMask(num_classes, true); }

/// Mask selecting head rows [first, num_classes).
inline ClassMask new_class_mask(std::size_t num_classes, std::size_t first) {
  ClassMask mask(num_classes, false);
  for (std::size_t c = first; c < num_classes; ++c) mask[c] = true;
  return mask;
}

namespace detail {

inline std::size_t mask_count(const ClassMask& mask) {
  std::size_t n = 0;
  for (bool m : mask) n += m ? 1 : 0;
  return n;
}

/// KL[Dir(a) || Dir(1)] over the masked coordinates of one row, with the
/// true-class parameter pinned to 1. Writes d(KL)/d(alpha_c) into dalpha when
/// non-null.
inline double ekl_row(const Matrix& alpha, Eigen::Index row, std::size_t label, const ClassMask& mask,
                      double* dalpha) {
  const auto k = static_cast<double>(mask_count(mask));
  double s = 0.0;
  for (Eigen::Index c = 0; c < alpha.cols(); ++c) {
    if (!mask[static_cast<std::size_t>(c)]) continue;
    s += static_cast<std::size_t>(c) == label ? 1.0 : alpha(row, c);
  }
  using boost::math::digamma;
  using boost::math::trigamma;
  const double psi_s = digamma(s);
  double kl = std::lgamma(s) - std::lgamma(k);
  for (Eigen::Index c = 0; c < alpha.cols(); ++c) {
    if (!mask[static_cast<std::size_t>(c)]) continue;
    const double a = static_cast<std::size_t>(c) == label ? 1.0 : alpha(row, c);
    kl += -std::lgamma(a) + (a - 1.0) * (digamma(a) - psi_s);
  }
  if (dalpha != nullptr) {
    const double tri_s = trigamma(s);
    for (Eigen::Index c = 0; c < alpha.cols(); ++c) {
      const auto cu = static_cast<std::size_t>(c);
      if (!mask[cu] || cu == label) {
        dalpha[c] = 0.0;
        continue;
      }
      const double a = alpha(row, c);
      dalpha[c] = (a - 1.0) * trigamma(a) - (s - k) * tri_s;
    }
  }
  return kl;
}

}  // namespace detail

/// KL regulariser on alpha with the true-class entry reset to 1. Rows whose
/// label lies outside the mask contribute zero; the reduction is the mean over
/// all rows.
inline double ekl_loss(const Matrix& alpha, const Matrix& y, const ClassMask& class_mask) {
  detail::check_batch(alpha, y, "ekl_loss");
  require(class_mask.size() == static_cast<std::size_t>(alpha.cols()), "ekl_loss: mask length mismatch");
  require(detail::mask_count(class_mask) >= 2, "ekl_loss: mask must select at least two classes");
  double total = 0.0;
  for (Eigen::Index i = 0; i < alpha.rows(); ++i) {
    const auto j = detail::true_class(y, i);
    if (!class_mask[j]) continue;
    total += detail::ekl_row(alpha, i, j, class_mask, nullptr);
  }
  return total / static_cast<double>(alpha.rows());
}

/// Distillation KL(teacher || student) over the first `old_class_count`
/// logits at temperature tau.
inline double kd_loss(const Matrix& student_logits, const Matrix& teacher_logits, const KDConfig& cfg) {
  require(cfg.old_class_count > 0, "kd_loss: old_class_count must be positive");
  require(cfg.temperature > 0.0, "kd_loss: temperature must be positive");
  require(student_logits.rows() == teacher_logits.rows() && student_logits.rows() > 0, "kd_loss: batch mismatch");
  const auto k = static_cast<Eigen::Index>(cfg.old_class_count);
  require(student_logits.cols() >= k && teacher_logits.cols() >= k, "kd_loss: too few logits for old classes");
  double total = 0.0;
  for (Eigen::Index i = 0; i < student_logits.rows(); ++i) {
    const RowVector log_pt = detail::log_softmax_row(teacher_logits.row(i).leftCols(k), cfg.temperature);
    const RowVector log_ps = detail::log_softmax_row(student_logits.row(i).leftCols(k), cfg.temperature);
    total += (log_pt.array().exp() * (log_pt - log_ps).array()).sum();
  }
  return total / static_cast<double>(student_logits.rows());
}

inline double total_loss(double ece, double ekl, double kd, const LossWeights& w) {
  return w.ece * ece + w.ekl * ekl + w.kd * kd;
}

// --- logit-space versions with analytic gradients -------------------------

inline LossWithGrad ece_loss_with_grad(const Matrix& logits, const Matrix& y, double clamp = kDefaultLogitClamp) {
  const Matrix alpha = detail::alpha_from_logits(logits, clamp);
  LossWithGrad out{ece_loss(alpha, y), Matrix::Zero(logits.rows(), logits.cols())};
  const double inv_n = 1.0 / static_cast<double>(logits.rows());
  for (Eigen::Index i = 0; i < logits.rows(); ++i) {
    const auto j = static_cast<Eigen::Index>(detail::true_class(y, i));
    const double s = alpha.row(i).sum();
    for (Eigen::Index c = 0; c < logits.cols(); ++c) {
      const double dalpha = 1.0 / s - (c == j ? 1.0 / alpha(i, c) : 0.0);
      out.grad(i, c) = inv_n * dalpha * detail::evidence_slope(logits(i, c), clamp);
    }
  }
  return out;
}

inline LossWithGrad ekl_loss_with_grad(const Matrix& logits, const Matrix& y, const ClassMask& class_mask,
                                       double clamp = kDefaultLogitClamp) {
  const Matrix alpha = detail::alpha_from_logits(logits, clamp);
  LossWithGrad out{ekl_loss(alpha, y, class_mask), Matrix::Zero(logits.rows(), logits.cols())};
  const double inv_n = 1.0 / static_cast<double>(logits.rows());
  std::vector<double> dalpha(static_cast<std::size_t>(logits.cols()));
  for (Eigen::Index i = 0; i < logits.rows(); ++i) {
    const auto j = detail::true_class(y, i);
    if (!class_mask[j]) continue;
    detail::ekl_row(alpha, i, j, class_mask, dalpha.data());
    for (Eigen::Index c = 0; c < logits.cols(); ++c) {
      out.grad(i, c) = inv_n * dalpha[static_cast<std::size_t>(c)] * detail::evidence_slope(logits(i, c), clamp);
    }
  }
  return out;
}

/// Gradient is taken with respect to the student logits only.
inline LossWithGrad kd_loss_with_grad(const Matrix& student_logits, const Matrix& teacher_logits,
                                      const KDConfig& cfg) {
  LossWithGrad out{kd_loss(student_logits, teacher_logits, cfg),
                   Matrix::Zero(student_logits.rows(), student_logits.cols())};
  const auto k = static_cast<Eigen::Index>(cfg.old_class_count);
  const double scale = 1.0 / (static_cast<double>(student_logits.rows()) * cfg.temperature);
  for (Eigen::Index i = 0; i < student_logits.rows(); ++i) {
    const RowVector pt = detail::softmax_row(teacher_logits.row(i).leftCols(k), cfg.temperature);
    const RowVector ps = detail::softmax_row(student_logits.row(i).leftCols(k), cfg.temperature);
    out.grad.row(i).leftCols(k) = scale * (ps - pt);
  }
  return out;
}

/// Softmax cross-entropy, used by the non-evidential baseline model.
inline LossWithGrad softmax_ce_with_grad(const Matrix& logits, const Matrix& y) {
  detail::check_batch(logits, y, "softmax_ce");
  LossWithGrad out{0.0, Matrix::Zero(logits.rows(), logits.cols())};
  const double inv_n = 1.0 / static_cast<double>(logits.rows());
  for (Eigen::Index i = 0; i < logits.rows(); ++i) {
    const auto j = static_cast<Eigen::Index>(detail::true_class(y, i));
    const RowVector log_p = detail::log_softmax_row(logits.row(i), 1.0);
    const RowVector p = log_p.array().exp().matrix();
    out.value -= log_p(j);
    out.grad.row(i) = inv_n * p;
    out.grad(i, j) -= inv_n;
  }
  out.value *= inv_n;
  return out;
}

/// One-hot rows for head-index labels.
inline Matrix one_hot(std::span<const std::size_t> labels, std::size_t num_classes) {
  Matrix y = Matrix::Zero(static_cast<Eigen::Index>(labels.size()), static_cast<Eigen::Index>(num_classes));
  for (std::size_t i = 0; i < labels.size(); ++i) {
    require(labels[i] < num_classes, "one_hot: label out of range");
    y(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(labels[i])) = 1.0;
  }
  return y;
}

}  // namespace cedl

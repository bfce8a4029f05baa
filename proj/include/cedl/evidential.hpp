#pragma once

// Dirichlet opinions built from classifier logits, and the subjective-logic
// uncertainty measures derived from them (vacuity, dissonance).

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include "cedl/error.hpp"

namespace cedl {

/// Exponent ceiling applied before exp() in the evidential head.
inline constexpr double kDefaultLogitClamp = 10.0;

/// Per-class evidence e_c = exp(min(z_c, clamp)).
inline std::vector<double> evidence_from_logits(std::span<const double> logits,
                                                double clamp = kDefaultLogitClamp) {
  require(clamp > 0.0, "evidence_from_logits: clamp must be positive");
  std::vector<double> evidence(logits.size());
  for (std::size_t c = 0; c < logits.size(); ++c) {
    if (!std::isfinite(logits[c])) {
      throw InvalidInput("evidence_from_logits: non-finite logit at index " + std::to_string(c));
    }
    evidence[c] = std::exp(std::min(logits[c], clamp));
  }
  return evidence;
}

/// Dirichlet opinion over C classes. Immutable once built; construct through
/// opinion_from_evidence().
class DirichletOpinion {
 public:
  std::span<const double> evidence() const noexcept { return evidence_; }
  std::span<const double> alpha() const noexcept { return alpha_; }
  std::span<const double> beliefs() const noexcept { return beliefs_; }
  double strength() const noexcept { return strength_; }
  std::size_t num_classes() const noexcept { return alpha_.size(); }

 private:
  friend DirichletOpinion opinion_from_evidence(std::span<const double> evidence);

  DirichletOpinion() = default;

  std::vector<double> evidence_;
  std::vector<double> alpha_;
  std::vector<double> beliefs_;
  double strength_ = 0.0;
};

inline DirichletOpinion opinion_from_evidence(std::span<const double> evidence) {
  require(evidence.size() >= 2, "opinion_from_evidence: need at least two classes");
  DirichletOpinion op;
  op.evidence_.assign(evidence.begin(), evidence.end());
  op.alpha_.resize(evidence.size());
  for (std::size_t c = 0; c < evidence.size(); ++c) {
    if (!(evidence[c] >= 0.0) || !std::isfinite(evidence[c])) {
      throw InvalidInput("opinion_from_evidence: evidence must be finite and non-negative");
    }
    op.alpha_[c] = evidence[c] + 1.0;
  }
  op.strength_ = std::accumulate(op.alpha_.begin(), op.alpha_.end(), 0.0);
  op.beliefs_.resize(evidence.size());
  for (std::size_t c = 0; c < evidence.size(); ++c) op.beliefs_[c] = evidence[c] / op.strength_;
  return op;
}

inline DirichletOpinion opinion_from_logits(std::span<const double> logits,
                                            double clamp = kDefaultLogitClamp) {
  const auto evidence = evidence_from_logits(logits, clamp);
  return opinion_from_evidence(evidence);
}

/// Lack of evidence: C / S.
inline double vacuity(const DirichletOpinion& op) {
  return static_cast<double>(op.num_classes()) / op.strength();
}

/// Relative mass balance between two beliefs; zero unless both are non-zero.
inline double belief_balance(double bi, double bc) {
  if (bi * bc == 0.0) return 0.0;
  return 1.0 - std::abs(bi - bc) / (bi + bc);
}

/// Conflict among the beliefs. A class whose competitors carry no belief
/// contributes nothing.
inline double dissonance(const DirichletOpinion& op) {
  const auto b = op.beliefs();
  double diss = 0.0;
  for (std::size_t c = 0; c < b.size(); ++c) {
    if (b[c] == 0.0) continue;
    double weighted = 0.0;
    double others = 0.0;
    for (std::size_t i = 0; i < b.size(); ++i) {
      if (i == c) continue;
      weighted += b[i] * belief_balance(b[i], b[c]);
      others += b[i];
    }
    if (others == 0.0) continue;
    diss += b[c] * weighted / others;
  }
  return diss;
}

/// beta * vac + (1 - beta) * (1 - diss). Larger values mean "more likely
/// unseen data".
inline double combined_uncertainty(double vac, double diss, double beta) {
  if (!(beta >= 0.0 && beta <= 1.0)) throw InvalidInput("combined_uncertainty: beta must lie in [0, 1]");
  require(vac >= 0.0 && vac <= 1.0, "combined_uncertainty: vacuity must lie in [0, 1]");
  require(diss >= 0.0 && diss <= 1.0, "combined_uncertainty: dissonance must lie in [0, 1]");
  return beta * vac + (1.0 - beta) * (1.0 - diss);
}

/// Index of the largest Dirichlet parameter; the lowest index wins ties.
inline std::size_t predict_class(const DirichletOpinion& op) {
  const auto a = op.alpha();
  return static_cast<std::size_t>(std::max_element(a.begin(), a.end()) - a.begin());
}

/// Log density of Dir(alpha) at the simplex point p.
inline double dirichlet_log_density(std::span<const double> p, std::span<const double> alpha) {
  require(p.size() == alpha.size() && !p.empty(), "dirichlet_log_density: size mismatch");
  double sum_p = 0.0;
  for (double v : p) {
    if (!(v > 0.0)) throw InvalidInput("dirichlet_log_density: p must be strictly positive");
    sum_p += v;
  }
  if (std::abs(sum_p - 1.0) > 1e-9) throw InvalidInput("dirichlet_log_density: p is not on the simplex");
  double strength = 0.0;
  double log_norm = 0.0;
  double log_kernel = 0.0;
  for (std::size_t c = 0; c < p.size(); ++c) {
    require(alpha[c] > 0.0, "dirichlet_log_density: alpha must be positive");
    strength += alpha[c];
    log_norm -= std::lgamma(alpha[c]);
    log_kernel += (alpha[c] - 1.0) * std::log(p[c]);
  }
  return std::lgamma(strength) + log_norm + log_kernel;
}

}  // namespace cedl

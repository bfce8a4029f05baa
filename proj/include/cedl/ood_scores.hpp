#pragma once

// Per-sample in-distribution confidence scores. Every method is oriented so
// that a higher score means "more in-distribution".

#include <cmath>
#include <string>
#include <vector>

#include "cedl/backbone.hpp"
#include "cedl/error.hpp"
#include "cedl/evidential.hpp"
#include "cedl/losses.hpp"

namespace cedl {

struct ScoreSet {
  std::vector<double> scores;
  std::string method_id;
  int task_id = 0;
};

/// Registry of scoring methods.
inline const std::vector<std::string>& score_method_ids() {
  static const std::vector<std::string> ids{"msp",        "odin",       "energy",  "entropy",
                                            "msp_bc",     "vacuity",    "dissonance", "combined"};
  return ids;
}

inline bool is_score_method(const std::string& id) {
  const auto& ids = score_method_ids();
  return std::find(ids.begin(), ids.end(), id) != ids.end();
}

inline bool is_evidential_method(const std::string& id) {
  return id == "vacuity" || id == "dissonance" || id == "combined";
}

namespace detail {

template <typename RowFn>
ScoreSet score_rows(const Matrix& logits, const std::string& method, RowFn&& fn) {
  ScoreSet out{{}, method, 0};
  out.scores.reserve(static_cast<std::size_t>(logits.rows()));
  for (Eigen::Index i = 0; i < logits.rows(); ++i) {
    const double s = fn(logits.row(i));
    if (!std::isfinite(s)) throw InvalidInput(method + ": non-finite score");
    out.scores.push_back(s);
  }
  return out;
}

inline double max_softmax(const Eigen::Ref<const RowVector>& z, double temperature) {
  return softmax_row(z, temperature).maxCoeff();
}

}  // namespace detail

inline ScoreSet msp_score(const Matrix& logits) {
  return detail::score_rows(logits, "msp", [](const auto& z) { return detail::max_softmax(z, 1.0); });
}

inline ScoreSet energy_score(const Matrix& logits, double temperature = 1.0) {
  require(temperature > 0.0, "energy_score: temperature must be positive");
  return detail::score_rows(logits, "energy", [&](const auto& z) {
    const double m = z.maxCoeff();
    return m + temperature * std::log(((z.array() - m) / temperature).exp().sum());
  });
}

inline ScoreSet entropy_score(const Matrix& logits) {
  return detail::score_rows(logits, "entropy", [](const auto& z) {
    const RowVector log_p = detail::log_softmax_row(z, 1.0);
    double h = 0.0;
    for (Eigen::Index c = 0; c < log_p.size(); ++c) {
      const double p = std::exp(log_p(c));
      if (p > 0.0) h -= p * log_p(c);
    }
    return -h;
  });
}

inline ScoreSet msp_bc_score(const Matrix& logits, const WeightNorms& norms) {
  auto out = msp_score(bias_corrected_logits(logits, norms));
  out.method_id = "msp_bc";
  return out;
}

/// ODIN: one signed-gradient input perturbation against the temperature-scaled
/// prediction, then temperature-scaled MSP. `model` is copied, never mutated.
inline ScoreSet odin_score(const EvidentialClassifier& model, const Matrix& x, double temperature = 1000.0,
                           double epsilon = 0.0014) {
  require(temperature > 0.0, "odin_score: temperature must be positive");
  require(epsilon >= 0.0, "odin_score: epsilon must be non-negative");
  Matrix perturbed = x;
  if (epsilon > 0.0) {
    EvidentialClassifier work = model;
    const Matrix logits = work.forward(x, Mode::kEval);
    Matrix grad(logits.rows(), logits.cols());
    for (Eigen::Index i = 0; i < logits.rows(); ++i) {
      const RowVector p = detail::softmax_row(logits.row(i), temperature);
      Eigen::Index label = 0;
      logits.row(i).maxCoeff(&label);
      grad.row(i) = p / temperature;
      grad(i, label) -= 1.0 / temperature;
    }
    const Matrix dx = work.backward(grad);
    perturbed = x - epsilon * dx.unaryExpr([](double g) { return static_cast<double>((g > 0.0) - (g < 0.0)); });
  }
  auto out = detail::score_rows(model.infer(perturbed), "odin",
                                [&](const auto& z) { return detail::max_softmax(z, temperature); });
  return out;
}

enum class EvidentialKind { kVacuity, kDissonance, kCombined };

inline EvidentialKind parse_evidential_kind(const std::string& id) {
  if (id == "vacuity") return EvidentialKind::kVacuity;
  if (id == "dissonance") return EvidentialKind::kDissonance;
  if (id == "combined") return EvidentialKind::kCombined;
  throw InvalidInput("unknown evidential score kind '" + id + "'");
}

struct EvidentialScoreOptions {
  double beta = 0.5;                    // combined uncertainty weight on vacuity
  bool dissonance_negated = true;       // score = -dissonance (else +dissonance)
  double logit_clamp = kDefaultLogitClamp;
};

/// Per-row (vacuity, dissonance) of the Dirichlet opinion built from logits.
inline std::vector<std::pair<double, double>> uncertainties(const Matrix& logits,
                                                            double clamp = kDefaultLogitClamp) {
  std::vector<std::pair<double, double>> out;
  out.reserve(static_cast<std::size_t>(logits.rows()));
  std::vector<double> row(static_cast<std::size_t>(logits.cols()));
  for (Eigen::Index i = 0; i < logits.rows(); ++i) {
    for (Eigen::Index c = 0; c < logits.cols(); ++c) row[static_cast<std::size_t>(c)] = logits(i, c);
    const auto op = opinion_from_logits(row, clamp);
    out.emplace_back(vacuity(op), dissonance(op));
  }
  return out;
}

inline ScoreSet evidential_score(const Matrix& logits, EvidentialKind kind, const EvidentialScoreOptions& opt = {}) {
  static const char* names[] = {"vacuity", "dissonance", "combined"};
  ScoreSet out{{}, names[static_cast<int>(kind)], 0};
  for (const auto& [vac, diss] : uncertainties(logits, opt.logit_clamp)) {
    switch (kind) {
      case EvidentialKind::kVacuity:
        out.scores.push_back(-vac);
        break;
      case EvidentialKind::kDissonance:
        out.scores.push_back(opt.dissonance_negated ? -diss : diss);
        break;
      case EvidentialKind::kCombined:
        out.scores.push_back(-combined_uncertainty(vac, diss, opt.beta));
        break;
    }
  }
  return out;
}

struct ScoreOptions {
  double odin_temperature = 1000.0;
  double odin_epsilon = 0.0014;
  double energy_temperature = 1.0;
  EvidentialScoreOptions evidential{};
  bool uncertainty_from_bc_logits = false;
};

/// Scores `x` with the named method against `model`.
inline ScoreSet score_samples(const std::string& method, const EvidentialClassifier& model, const Matrix& x,
                              const ScoreOptions& opt = {}) {
  if (!is_score_method(method)) throw InvalidInput("unknown score method '" + method + "'");
  if (method == "odin") return odin_score(model, x, opt.odin_temperature, opt.odin_epsilon);
  const Matrix logits = model.infer(x);
  if (method == "msp") return msp_score(logits);
  if (method == "energy") return energy_score(logits, opt.energy_temperature);
  if (method == "entropy") return entropy_score(logits);
  if (method == "msp_bc") return msp_bc_score(logits, weight_norms(model));
  const Matrix source = opt.uncertainty_from_bc_logits ? bias_corrected_logits(logits, weight_norms(model)) : logits;
  return evidential_score(source, parse_evidential_kind(method), opt.evidential);
}

}  // namespace cedl

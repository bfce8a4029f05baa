#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "cedl/metrics.hpp"
#include "cedl/ood_scores.hpp"
#include "gradcheck.hpp"

namespace cedl {
namespace {

using testing_support::random_matrix;

Matrix row(std::initializer_list<double> v) {
  Matrix m(1, static_cast<Eigen::Index>(v.size()));
  Eigen::Index i = 0;
  for (double x : v) m(0, i++) = x;
  return m;
}

TEST(Msp, Examples) {
  EXPECT_DOUBLE_EQ(msp_score(row({0, 0})).scores[0], 0.5);
  EXPECT_NEAR(msp_score(row({std::log(9.0), 0})).scores[0], 0.9, 1e-15);
  std::mt19937_64 rng(1);
  const Matrix z = random_matrix(10, 4, rng, -5, 5);
  const auto a = msp_score(z).scores;
  const auto b = msp_score((z.array() + 3.7).matrix()).scores;
  for (std::size_t i = 0; i < a.size(); ++i) EXPECT_NEAR(a[i], b[i], 1e-12);
}

TEST(Energy, Examples) {
  EXPECT_NEAR(energy_score(row({0, 0})).scores[0], std::log(2.0), 1e-15);
  EXPECT_NEAR(energy_score(row({500, 0, 0})).scores[0], 500.0, 1e-12);
  EXPECT_NEAR(energy_score(row({1.5, 1.5, 1.5}), 4.0).scores[0], 1.5 + 4.0 * std::log(3.0), 1e-12);
  std::mt19937_64 rng(2);
  const Matrix z = random_matrix(10, 3, rng, -5, 5);
  const auto a = energy_score(z).scores;
  const auto b = energy_score((z.array() + 2.0).matrix()).scores;
  for (std::size_t i = 0; i < a.size(); ++i) EXPECT_NEAR(a[i] + 2.0, b[i], 1e-12);
  EXPECT_THROW(energy_score(z, 0.0), InvalidInput);
}

TEST(Entropy, Examples) {
  EXPECT_NEAR(entropy_score(row({0, 0})).scores[0], -std::log(2.0), 1e-15);
  EXPECT_NEAR(entropy_score(row({60, 0, 0})).scores[0], 0.0, 1e-20);
  EXPECT_DOUBLE_EQ(entropy_score(row({1, 2, 3})).scores[0], entropy_score(row({3, 1, 2})).scores[0]);
}

TEST(MspBc, Examples) {
  std::mt19937_64 rng(3);
  const Matrix z = random_matrix(6, 3, rng, -3, 3);
  EXPECT_EQ(msp_bc_score(z, WeightNorms{{1, 1, 1}}).scores, msp_score(z).scores);
  EXPECT_NEAR(msp_bc_score(row({2, 2}), WeightNorms{{1, 2}}).scores[0], 1.0 / (1.0 + std::exp(-1.0)), 1e-15);
  EXPECT_NEAR(msp_bc_score(row({2, 2}), WeightNorms{{1, 2}}).scores[0], 0.7311, 1e-4);
  EXPECT_THROW(msp_bc_score(z, WeightNorms{{1, 0, 1}}), DegenerateModel);
}

EvidentialClassifier scored_model(std::uint64_t seed) {
  auto model = make_classifier(ArchSpec{"mlp-toy", 3, {}, {6}}, seed);
  expand_head(model, std::vector<int>{0, 1, 2});
  std::mt19937_64 rng(seed);
  model.head().weight().value = random_matrix(3, 6, rng, -2, 2);
  return model;
}

TEST(Odin, DegenerateParametersEqualMsp) {
  const auto model = scored_model(4);
  std::mt19937_64 rng(5);
  const Matrix x = random_matrix(8, 3, rng, -1, 1);
  EXPECT_EQ(odin_score(model, x, 1.0, 0.0).scores, msp_score(model.infer(x)).scores);
  EXPECT_THROW(odin_score(model, x, 1.0, -0.1), InvalidInput);
}

TEST(Odin, TemperatureOnlyByHand) {
  auto model = make_classifier(ArchSpec{"mlp-toy", 1, {}, {1}}, 0);
  expand_head(model, std::vector<int>{0, 1});
  model.head().weight().value.setZero();
  model.head().bias().value << 3.0, 1.0;
  const Matrix x = Matrix::Ones(1, 1);
  const double expected = 1.0 / (1.0 + std::exp(-2.0 / 1000.0));
  EXPECT_NEAR(odin_score(model, x, 1000.0, 0.0).scores[0], expected, 1e-15);
  // Zero head weights: logits do not depend on x, so the perturbation is inert.
  EXPECT_NEAR(odin_score(model, x, 1000.0, 0.5).scores[0], expected, 1e-15);
}

TEST(Odin, PerturbationFollowsNumericGradientSign) {
  const auto model = scored_model(6);
  std::mt19937_64 rng(7);
  const Matrix x = random_matrix(4, 3, rng, -1, 1);
  const double T = 10.0, eps = 0.01;
  const auto scores = odin_score(model, x, T, eps).scores;
  for (Eigen::Index i = 0; i < x.rows(); ++i) {
    const Matrix xi = x.row(i);
    Eigen::Index label = 0;
    model.infer(xi).row(0).maxCoeff(&label);
    const auto nll = [&](const Matrix& z) {
      const RowVector logits = model.infer(z).row(0) / T;
      const double m = logits.maxCoeff();
      return -(logits(label) - m - std::log((logits.array() - m).exp().sum()));
    };
    const Matrix g = testing_support::numeric_gradient(nll, xi);
    const Matrix moved = xi - eps * g.unaryExpr([](double v) { return v > 0 ? 1.0 : (v < 0 ? -1.0 : 0.0); });
    const RowVector p = (model.infer(moved).row(0) / T).array().exp().matrix();
    EXPECT_NEAR(scores[static_cast<std::size_t>(i)], p.maxCoeff() / p.sum(), 1e-12);
  }
}

TEST(Evidential, Examples) {
  EXPECT_DOUBLE_EQ(evidential_score(row({0, 0}), EvidentialKind::kVacuity).scores[0], -0.5);
  const auto huge = evidential_score(row({10, 0}), EvidentialKind::kVacuity).scores[0];
  EXPECT_LT(huge, 0.0);
  EXPECT_GT(huge, -1e-3);
  std::mt19937_64 rng(8);
  const Matrix z = random_matrix(20, 4, rng, -4, 4);
  const auto vac = evidential_score(z, EvidentialKind::kVacuity).scores;
  EvidentialScoreOptions beta_one;
  beta_one.beta = 1.0;
  const auto combined = evidential_score(z, EvidentialKind::kCombined, beta_one).scores;
  for (std::size_t i = 0; i < vac.size(); ++i) EXPECT_DOUBLE_EQ(vac[i], combined[i]);
  EvidentialScoreOptions flipped;
  flipped.dissonance_negated = false;
  EXPECT_EQ(evidential_score(z, EvidentialKind::kDissonance).scores[3],
            -evidential_score(z, EvidentialKind::kDissonance, flipped).scores[3]);
  EXPECT_THROW(parse_evidential_kind("aleatoric"), InvalidInput);
  EXPECT_THROW(score_samples("mahalanobis", scored_model(1), Matrix::Zero(1, 3)), InvalidInput);
}

class ScoreOrientation : public ::testing::TestWithParam<std::string> {};

TEST_P(ScoreOrientation, ConfidentRowsScoreHigher) {
  std::mt19937_64 rng(9);
  std::normal_distribution<double> noise(0.0, 0.3);
  Matrix ind(50, 3), ood(50, 3);
  for (Eigen::Index i = 0; i < 50; ++i) {
    for (Eigen::Index c = 0; c < 3; ++c) {
      ind(i, c) = (c == i % 3 ? 8.0 : 0.0) + noise(rng);
      ood(i, c) = noise(rng);
    }
  }
  const auto method = GetParam();
  auto score = [&](const Matrix& z) {
    if (method == "msp") return msp_score(z).scores;
    if (method == "energy") return energy_score(z).scores;
    if (method == "entropy") return entropy_score(z).scores;
    if (method == "msp_bc") return msp_bc_score(z, WeightNorms{{1.0, 1.0, 1.0}}).scores;
    return evidential_score(z, parse_evidential_kind(method)).scores;
  };
  EXPECT_GE(auroc(score(ind), score(ood)), 0.5);
}

INSTANTIATE_TEST_SUITE_P(LogitMethods, ScoreOrientation,
                         ::testing::Values("msp", "energy", "entropy", "msp_bc", "vacuity", "dissonance",
                                           "combined"));

TEST(ScoreOrientation, OdinOnSeparableModel) {
  // Bias-free ReLU nets are positively homogeneous, so scaling an input up
  // spreads its logits and raises its confidence.
  auto model = make_classifier(ArchSpec{"mlp-toy", 2, {}, {16}}, 0);
  expand_head(model, std::vector<int>{0, 1, 2});
  std::mt19937_64 rng(10);
  const Matrix base = random_matrix(30, 2, rng, -1, 1);
  const Matrix ind = 50.0 * base;
  const Matrix ood = 0.01 * base;
  model.head().weight().value = random_matrix(3, 16, rng, -3, 3);
  const auto a = odin_score(model, ind, 1000.0, 0.0014).scores;
  const auto b = odin_score(model, ood, 1000.0, 0.0014).scores;
  EXPECT_GE(auroc(a, b), 0.5);
}

// --- metrics ------------------------------------------------------------------

double brute_auroc(const std::vector<double>& pos, const std::vector<double>& neg) {
  double s = 0.0;
  for (double p : pos) {
    for (double n : neg) s += p > n ? 1.0 : (p == n ? 0.5 : 0.0);
  }
  return s / static_cast<double>(pos.size() * neg.size());
}

std::vector<double> draws(std::mt19937_64& rng, std::size_t n, int levels) {
  std::uniform_int_distribution<int> u(0, levels);
  std::vector<double> v(n);
  for (auto& x : v) x = u(rng) / static_cast<double>(levels);
  return v;
}

TEST(Auroc, Examples) {
  EXPECT_DOUBLE_EQ(auroc(std::vector<double>{3, 4}, std::vector<double>{1, 2}), 1.0);
  EXPECT_DOUBLE_EQ(auroc(std::vector<double>{0.9, 0.4}, std::vector<double>{0.6, 0.2}), 0.75);
  EXPECT_DOUBLE_EQ(auroc(std::vector<double>{1, 2, 2}, std::vector<double>{2, 1, 2}), 0.5);
  EXPECT_THROW(auroc(std::vector<double>{}, std::vector<double>{1}), InvalidInput);
}

TEST(Auroc, BruteForceOracleComplementAndMonotoneInvariance) {
  std::mt19937_64 rng(11);
  std::uniform_int_distribution<std::size_t> size(1, 200);
  for (int t = 0; t < 50; ++t) {
    const auto pos = draws(rng, size(rng), 20);
    const auto neg = draws(rng, size(rng), 20);
    EXPECT_DOUBLE_EQ(auroc(pos, neg), brute_auroc(pos, neg));
    EXPECT_NEAR(auroc(pos, neg) + auroc(neg, pos), 1.0, 1e-12);
    std::vector<double> tp, tn;
    for (double v : pos) tp.push_back(std::exp(3.0 * v) - 7.0);
    for (double v : neg) tn.push_back(std::exp(3.0 * v) - 7.0);
    EXPECT_DOUBLE_EQ(auroc(tp, tn), auroc(pos, neg));
    EXPECT_DOUBLE_EQ(aupr(tp, tn), aupr(pos, neg));
    EXPECT_DOUBLE_EQ(fpr_at_tpr(tp, tn), fpr_at_tpr(pos, neg));
  }
}

TEST(Aupr, Examples) {
  EXPECT_DOUBLE_EQ(aupr(std::vector<double>{3, 4}, std::vector<double>{1, 2}), 1.0);
  EXPECT_DOUBLE_EQ(aupr(std::vector<double>{0.8}, std::vector<double>{0.9}), 0.5);
  EXPECT_DOUBLE_EQ(aupr_flipped(std::vector<double>{0.8}, std::vector<double>{0.9}), 0.5);
  EXPECT_DOUBLE_EQ(aupr_flipped(std::vector<double>{0.9}, std::vector<double>{0.1}), 1.0);
  EXPECT_THROW(aupr(std::vector<double>{1}, std::vector<double>{}), InvalidInput);
}

TEST(Aupr, RandomBalancedScoresNearHalf) {
  std::mt19937_64 rng(12);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::vector<double> pos(10000), neg(10000);
  for (auto& v : pos) v = u(rng);
  for (auto& v : neg) v = u(rng);
  EXPECT_NEAR(aupr(pos, neg), 0.5, 0.05);
}

double brute_fpr(const std::vector<double>& pos, const std::vector<double>& neg, double target) {
  double best = 1.0;
  std::vector<double> thresholds = pos;
  thresholds.insert(thresholds.end(), neg.begin(), neg.end());
  for (double t : thresholds) {
    const double tpr = static_cast<double>(std::count_if(pos.begin(), pos.end(), [&](double v) { return v >= t; })) /
                       static_cast<double>(pos.size());
    const double fpr = static_cast<double>(std::count_if(neg.begin(), neg.end(), [&](double v) { return v >= t; })) /
                       static_cast<double>(neg.size());
    if (tpr >= target) best = std::min(best, fpr);
  }
  return best;
}

TEST(FprAtTpr, Examples) {
  EXPECT_DOUBLE_EQ(fpr_at_tpr(std::vector<double>{3, 4}, std::vector<double>{1, 2}), 0.0);
  EXPECT_DOUBLE_EQ(fpr_at_tpr(std::vector<double>{0.9, 0.8, 0.7, 0.6}, std::vector<double>{0.65, 0.3}), 0.5);
  std::vector<double> same(100);
  for (std::size_t i = 0; i < same.size(); ++i) same[i] = static_cast<double>(i);
  const double v = fpr_at_tpr(same, same);
  EXPECT_GE(v, 0.95);
  EXPECT_DOUBLE_EQ(v, brute_fpr(same, same, 0.95));
}

TEST(FprAtTpr, EnumerationOracleAndMonotoneInTarget) {
  std::mt19937_64 rng(13);
  std::uniform_int_distribution<std::size_t> size(1, 60);
  for (int t = 0; t < 50; ++t) {
    const auto pos = draws(rng, size(rng), 15);
    const auto neg = draws(rng, size(rng), 15);
    double prev = 2.0;
    for (double target : {1.0, 0.95, 0.9, 0.7, 0.5, 0.2}) {
      const double f = fpr_at_tpr(pos, neg, target);
      EXPECT_DOUBLE_EQ(f, brute_fpr(pos, neg, target));
      EXPECT_LE(f, prev);
      prev = f;
    }
  }
}

TEST(Accuracy, AcaAndAia) {
  EXPECT_DOUBLE_EQ(aca(std::vector<double>{0.9, 0.7, 0.5561}), 0.5561);
  EXPECT_DOUBLE_EQ(aca(std::vector<double>{0.8}), 0.8);
  EXPECT_DOUBLE_EQ(aia(std::vector<double>{1.0, 0.5}), 0.75);
  EXPECT_DOUBLE_EQ(aia(std::vector<double>{0.3}), 0.3);
  EXPECT_THROW(aia(std::vector<double>{}), InvalidInput);
}

TEST(Protocol, ReportCountsAcrossSteps) {
  const auto stream = make_toy_stream(5, 2, 20, 14);
  auto model = make_classifier(ArchSpec{"mlp-toy", 2, {}, {8}}, 1);
  std::vector<int> seen;
  std::vector<std::size_t> expected{2, 4, 4, 4, 1};
  for (std::size_t step = 1; step <= 5; ++step) {
    expand_head(model, stream.tasks[step - 1].class_ids);
    std::mt19937_64 rng(step);
    model.head().weight().value = random_matrix(static_cast<Eigen::Index>(2 * step), 8, rng, -1, 1);
    const auto reports = protocol_eval(model, stream, step, "vacuity");
    EXPECT_EQ(reports.size(), expected[step - 1]) << "step " << step;
    if (step == 5) EXPECT_EQ(reports[0].comparison_id, "INDc_vs_INDf");
    if (step == 1) {
      EXPECT_EQ(reports[0].comparison_id, "IND_vs_OOD");
      EXPECT_EQ(reports[1].comparison_id, "INDc_vs_OOD");
    }
    const auto s = protocol_scores(model, stream, step, "msp");
    EXPECT_EQ(s.ind_f.size(), 8 * (step - 1));
    EXPECT_EQ(s.ind_c.size(), 8u);
    EXPECT_EQ(s.ind_f.size() + s.ind_c.size() + s.ood.size(), 40u);
  }
}

TEST(Protocol, AveragesOnlyOverTasksWhereComparisonExists) {
  std::vector<DetectionReport> r{{"IND_vs_OOD", 1, 0.6, 0.5, 0.4, 1, 1},
                                 {"IND_vs_OOD", 2, 0.8, 0.7, 0.2, 1, 1},
                                 {"INDc_vs_INDf", 2, 0.3, 0.3, 0.9, 1, 1},
                                 {"INDc_vs_INDf", 3, 0.5, 0.5, 0.7, 1, 1}};
  const auto avg = average_reports(r);
  ASSERT_EQ(avg.size(), 2u);
  EXPECT_DOUBLE_EQ(avg[0].auroc, 0.7);
  EXPECT_EQ(avg[0].tasks, (std::vector<int>{1, 2}));
  EXPECT_EQ(avg[1].comparison_id, "INDc_vs_INDf");
  EXPECT_DOUBLE_EQ(avg[1].fpr95, 0.8);
}

}  // namespace
}  // namespace cedl

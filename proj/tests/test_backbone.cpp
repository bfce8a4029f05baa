#include <gtest/gtest.h>

#include <filesystem>
#include <random>

#include "cedl/backbone.hpp"
#include "gradcheck.hpp"

namespace cedl {
namespace {

using testing_support::random_matrix;

EvidentialClassifier toy_model(std::uint64_t seed = 1) {
  return make_classifier(ArchSpec{"mlp-toy", 2, {}, {8, 8}}, seed);
}

TEST(Backbone, RegistryProvidesBothArchitectures) {
  const auto ids = backbone_ids();
  EXPECT_NE(std::find(ids.begin(), ids.end(), "mlp-toy"), ids.end());
  EXPECT_NE(std::find(ids.begin(), ids.end(), "resnet32"), ids.end());
  EXPECT_THROW(make_classifier(ArchSpec{"vgg"}, 0), InvalidInput);
}

TEST(Backbone, ZeroHeadGivesZeroLogits) {
  auto model = toy_model();
  expand_head(model, std::vector<int>{3, 7, 9});
  std::mt19937_64 rng(1);
  const Matrix x = random_matrix(4, 2, rng, -5, 5);
  const Matrix logits = model.infer(x);
  EXPECT_EQ(logits.rows(), 4);
  EXPECT_EQ(logits.cols(), 3);
  EXPECT_TRUE(logits.isZero(0.0));
}

TEST(Backbone, ForwardShapeAndDeterminism) {
  auto model = toy_model();
  expand_head(model, std::vector<int>{0, 1});
  model.head().weight().value.setRandom();
  std::mt19937_64 rng(2);
  const Matrix x = random_matrix(6, 2, rng, -1, 1);
  const Matrix a = model.infer(x);
  const Matrix b = model.infer(x);
  EXPECT_EQ(a.rows(), 6);
  EXPECT_TRUE(a == b);
  EXPECT_TRUE(model.forward(x, Mode::kEval) == a);
  EXPECT_THROW(model.infer(random_matrix(2, 3, rng, 0, 1)), InvalidInput);
}

TEST(Backbone, InputGradientMatchesFiniteDifferences) {
  auto model = toy_model(4);
  expand_head(model, std::vector<int>{0, 1, 2});
  std::mt19937_64 rng(5);
  model.head().weight().value = random_matrix(3, 8, rng, -1, 1);
  const Matrix x = random_matrix(3, 2, rng, -1, 1);
  const Matrix w = random_matrix(3, 3, rng, -1, 1);
  model.forward(x, Mode::kEval);
  const Matrix dx = model.backward(w);
  const Matrix numeric = testing_support::numeric_gradient(
      [&](const Matrix& z) { return model.infer(z).cwiseProduct(w).sum(); }, x);
  EXPECT_LE(testing_support::relative_error(dx, numeric), 1e-6);
}

TEST(ExpandHead, PreservesExistingRows) {
  auto model = toy_model();
  std::vector<int> first(10);
  std::iota(first.begin(), first.end(), 0);
  expand_head(model, first);
  std::mt19937_64 rng(3);
  model.head().weight().value = random_matrix(10, 8, rng, -1, 1);
  model.head().bias().value = random_matrix(1, 10, rng, -1, 1);
  const Matrix x = random_matrix(5, 2, rng, -1, 1);
  const Matrix before = model.infer(x);
  const Matrix rows = model.head().weight().value;

  std::vector<int> next(10);
  std::iota(next.begin(), next.end(), 10);
  expand_head(model, next);
  EXPECT_EQ(model.num_classes(), 20u);
  EXPECT_TRUE(model.head().weight().value.topRows(10) == rows);
  EXPECT_TRUE(model.infer(x).leftCols(10).isApprox(before, 1e-12));
  EXPECT_EQ(model.index_of(15), 15u);
}

TEST(ExpandHead, EmptyAndDuplicate) {
  auto model = toy_model();
  expand_head(model, std::vector<int>{4, 5});
  expand_head(model, std::vector<int>{});
  EXPECT_EQ(model.num_classes(), 2u);
  EXPECT_THROW(expand_head(model, std::vector<int>{5, 6}), InvalidInput);
  EXPECT_THROW(expand_head(model, std::vector<int>{7, 7}), InvalidInput);
  EXPECT_EQ(model.num_classes(), 2u);
}

EvidentialClassifier head_with_rows(const Matrix& rows) {
  auto model = make_classifier(ArchSpec{"mlp-toy", 2, {}, {static_cast<std::size_t>(rows.cols())}}, 0);
  std::vector<int> ids(static_cast<std::size_t>(rows.rows()));
  std::iota(ids.begin(), ids.end(), 0);
  expand_head(model, ids);
  model.head().weight().value = rows;
  return model;
}

TEST(WeightAlign, Examples) {
  Matrix equal(2, 2);
  equal << 1, 0, 0, 1;
  auto m1 = head_with_rows(equal);
  EXPECT_DOUBLE_EQ(weight_align(m1, std::vector<int>{0}, std::vector<int>{1}), 1.0);
  EXPECT_TRUE(m1.head().weight().value == equal);

  Matrix doubled(2, 2);
  doubled << 3, 4, 6, 8;  // norms 5 and 10
  auto m2 = head_with_rows(doubled);
  EXPECT_DOUBLE_EQ(weight_align(m2, std::vector<int>{0}, std::vector<int>{1}), 0.5);
  EXPECT_TRUE(m2.head().weight().value.row(0) == doubled.row(0));
  EXPECT_NEAR(m2.head().weight().value.row(1).norm(), 5.0, 1e-12);

  Matrix mixed(4, 1);
  mixed << 1, 3, 2, -2;  // old {1, 3}, new {2, 2}
  auto m3 = head_with_rows(mixed);
  EXPECT_DOUBLE_EQ(weight_align(m3, std::vector<int>{0, 1}, std::vector<int>{2, 3}), 1.0);
}

TEST(WeightAlign, MeanNormsMatchAndOldRowsFixed) {
  std::mt19937_64 rng(7);
  const Matrix rows = random_matrix(6, 5, rng, -2, 2);
  auto model = head_with_rows(rows);
  model.head().weight().value.bottomRows(3) *= 4.0;
  const Matrix old_rows = model.head().weight().value.topRows(3);
  weight_align(model, std::vector<int>{0, 1, 2}, std::vector<int>{3, 4, 5});
  EXPECT_TRUE(model.head().weight().value.topRows(3) == old_rows);
  const auto norms = weight_norms(model).norms;
  EXPECT_NEAR((norms[0] + norms[1] + norms[2]) / 3.0, (norms[3] + norms[4] + norms[5]) / 3.0, 1e-6);
}

TEST(WeightAlign, ZeroNewNormIsDegenerate) {
  Matrix rows(2, 2);
  rows << 1, 1, 0, 0;
  auto model = head_with_rows(rows);
  EXPECT_THROW(weight_align(model, std::vector<int>{0}, std::vector<int>{1}), DegenerateModel);
}

TEST(BiasCorrection, Examples) {
  Matrix logits(1, 2);
  logits << 2, 2;
  const Matrix corrected = bias_corrected_logits(logits, WeightNorms{{1.0, 2.0}});
  EXPECT_EQ(corrected(0, 0), 2.0);
  EXPECT_EQ(corrected(0, 1), 1.0);
  EXPECT_TRUE(bias_corrected_logits(logits, WeightNorms{{1.0, 1.0}}) == logits);
  EXPECT_THROW(bias_corrected_logits(logits, WeightNorms{{1.0, 0.0}}), DegenerateModel);
}

TEST(BiasCorrection, EqualNormsPreserveArgmax) {
  std::mt19937_64 rng(8);
  std::uniform_real_distribution<double> knorm(0.1, 10.0);
  for (int t = 0; t < 100; ++t) {
    const Matrix logits = random_matrix(8, 5, rng, -10, 10);
    const Matrix c = bias_corrected_logits(logits, WeightNorms{std::vector<double>(5, knorm(rng))});
    for (Eigen::Index i = 0; i < logits.rows(); ++i) {
      Eigen::Index a = 0, b = 0;
      logits.row(i).maxCoeff(&a);
      c.row(i).maxCoeff(&b);
      EXPECT_EQ(a, b);
    }
  }
}

TEST(Checkpoint, RoundTripIsBitExact) {
  auto model = toy_model(11);
  expand_head(model, std::vector<int>{42, 17, 3});
  std::mt19937_64 rng(12);
  model.head().weight().value = random_matrix(3, 8, rng, -1, 1);
  model.head().bias().value = random_matrix(1, 3, rng, -1, 1);
  const auto path = (std::filesystem::temp_directory_path() / "cedl_ckpt_test.bin").string();
  save_checkpoint(model, path);
  auto loaded = load_checkpoint(path);
  EXPECT_EQ(loaded.seen_classes(), model.seen_classes());
  EXPECT_EQ(loaded.arch(), model.arch());
  const auto a = model.parameters();
  const auto b = loaded.parameters();
  ASSERT_EQ(a.size(), b.size());
  for (std::size_t i = 0; i < a.size(); ++i) {
    ASSERT_EQ(a[i]->value.size(), b[i]->value.size());
    EXPECT_EQ(std::memcmp(a[i]->value.data(), b[i]->value.data(), sizeof(double) * a[i]->value.size()), 0);
  }
  std::filesystem::remove(path);
}

TEST(Checkpoint, RejectsGarbage) {
  const auto path = (std::filesystem::temp_directory_path() / "cedl_ckpt_garbage.bin").string();
  {
    std::ofstream os(path);
    os << "hello";
  }
  EXPECT_THROW(load_checkpoint(path), std::runtime_error);
  std::filesystem::remove(path);
}

TEST(Resnet32, ForwardContractAndCheckpoint) {
  auto model = make_classifier(ArchSpec{"resnet32"}, 3);
  EXPECT_EQ(model.input_size(), 3u * 32u * 32u);
  EXPECT_EQ(model.feature_size(), 64u);
  expand_head(model, std::vector<int>{0, 1, 2, 3, 4});
  std::mt19937_64 rng(4);
  model.head().weight().value = random_matrix(5, 64, rng, -0.1, 0.1);
  const Matrix x = random_matrix(2, 3072, rng, 0, 1);
  const Matrix logits = model.infer(x);
  EXPECT_EQ(logits.rows(), 2);
  EXPECT_EQ(logits.cols(), 5);
  EXPECT_TRUE(logits.allFinite());
  EXPECT_TRUE(model.infer(x) == logits);

  // One training step path runs end to end.
  const Matrix train_logits = model.forward(x, Mode::kTrain);
  const Matrix dx = model.backward(Matrix::Ones(2, 5));
  EXPECT_EQ(dx.cols(), 3072);
  EXPECT_TRUE(train_logits.allFinite() && dx.allFinite());

  const auto path = (std::filesystem::temp_directory_path() / "cedl_resnet_ckpt.bin").string();
  save_checkpoint(model, path);
  const auto loaded = load_checkpoint(path);
  EXPECT_TRUE(loaded.infer(x) == model.infer(x));
  std::filesystem::remove(path);
}

}  // namespace
}  // namespace cedl

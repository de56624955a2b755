#include "lbn/losses.hpp"

#include <gtest/gtest.h>

#include <cmath>

#include "lbn/errors.hpp"
#include "test_util.hpp"

namespace lbn {
namespace {

// Scalar evaluations written directly from the definitions.
double entropy_of(const std::vector<double>& p) {
  double h = 0.0;
  for (double v : p) h -= v * std::log(v);
  return h;
}

TEST(Losses, EntropyExamples) {
  EXPECT_NEAR(em_loss(Tensor::matrix({{0.25, 0.25, 0.25, 0.25}})), std::log(4.0), 1e-12);
  EXPECT_EQ(em_loss(Tensor::matrix({{0, 1, 0}})), 0.0);
  EXPECT_NEAR(em_loss(Tensor::matrix({{0.7, 0.2, 0.1}})), 0.801819, 1e-6);
  EXPECT_NEAR(em_loss(Tensor::matrix({{0.7, 0.2, 0.1}})), entropy_of({0.7, 0.2, 0.1}), 1e-15);
}

TEST(Losses, EntropySumsOverQueries) {
  const auto p = Tensor::matrix({{0.5, 0.5}, {0.9, 0.1}});
  EXPECT_NEAR(em_loss(p), entropy_of({0.5, 0.5}) + entropy_of({0.9, 0.1}), 1e-15);
}

TEST(Losses, RangeExamples) {
  EXPECT_EQ(gs_loss(Tensor::matrix({{0.25, 0.25, 0.25, 0.25}})), 0.0);
  EXPECT_EQ(gs_loss(Tensor::matrix({{1, 0, 0}, {0, 1, 0}, {0, 0, 1}})), 3.0);
  EXPECT_NEAR(gs_loss(Tensor::matrix({{0.7, 0.2, 0.1}})), 0.6, 1e-15);
}

TEST(Losses, GsemIsTheSum) {
  const auto p = Tensor::matrix({{0.7, 0.2, 0.1}});
  EXPECT_NEAR(gsem_loss(p), 1.401819, 1e-6);
  EXPECT_NEAR(gsem_loss(p), entropy_of({0.7, 0.2, 0.1}) + 0.6, 1e-15);
}

TEST(Losses, TapeAndPlainValuesAgree) {
  Rng rng(1);
  const auto p = softmax(testing::random_tensor({4, 5}, rng, 2.0));
  ad::Tape tape;
  const auto v = tape.constant(p);
  EXPECT_EQ(em_loss(v).value, em_loss(p));
  EXPECT_EQ(gs_loss(v).value, gs_loss(p));
  EXPECT_EQ(gsem_loss(v).value, gsem_loss(p));
}

TEST(Losses, EntropyGradientThroughSoftmaxMatchesFiniteDifferences) {
  Rng rng(2);
  const auto logits = testing::random_tensor({3, 5}, rng);
  ad::Tape tape;
  const auto x = tape.leaf(logits);
  const auto g = tape.backward(gsem_loss(ad::softmax_rows(x)).node).of(x);
  const auto numeric = ad::finite_diff([](const Tensor& l) { return gsem_loss(softmax(l)); }, logits, 1e-6);
  EXPECT_LT(testing::max_rel_error(g, numeric, 1e-6), 1e-5);
}

TEST(Losses, EntropyDerivativeWithRespectToOneLogit) {
  // Cross-check: perturb one logit of fixed logits and compare against the
  // tape's entropy gradient.
  const auto logits = Tensor::matrix({{1.0, -0.5, 0.3, 2.0}});
  ad::Tape tape;
  const auto x = tape.leaf(logits);
  const double analytic = tape.backward(em_loss(ad::softmax_rows(x)).node).of(x)[2];
  const double h = 1e-6;
  auto plus = logits, minus = logits;
  plus[2] += h;
  minus[2] -= h;
  const double numeric = (em_loss(softmax(plus)) - em_loss(softmax(minus))) / (2 * h);
  EXPECT_LT(testing::rel_error(analytic, numeric), 1e-5);
}

TEST(Losses, KlExamples) {
  const auto p = Tensor::matrix({{0.5, 0.5}});
  const auto q = Tensor::matrix({{0.9, 0.1}});
  EXPECT_NEAR(kl_divergence(p, q), 0.510826, 1e-6);
  EXPECT_NEAR(kl_divergence(p, q), 0.5 * std::log(0.5 / 0.9) + 0.5 * std::log(0.5 / 0.1), 1e-15);
  EXPECT_EQ(kl_divergence(q, q), 0.0);
}

TEST(Losses, KlIsAveragedOverQueries) {
  const auto p = Tensor::matrix({{0.5, 0.5}, {0.5, 0.5}});
  const auto q = Tensor::matrix({{0.9, 0.1}, {0.5, 0.5}});
  EXPECT_NEAR(kl_divergence(p, q), 0.510826 / 2.0, 1e-6);
}

TEST(Losses, KlIsNonNegativeOnRandomRows) {
  Rng rng(3);
  for (int i = 0; i < 200; ++i) {
    const auto p = softmax(testing::random_tensor({4, 5}, rng, 3.0));
    const auto q = softmax(testing::random_tensor({4, 5}, rng, 3.0));
    EXPECT_GE(kl_divergence(p, q), -1e-15);
  }
}

TEST(Losses, ClampHandlesZeros) {
  const auto p = Tensor::matrix({{1.0, 0.0}});
  const auto q = Tensor::matrix({{0.0, 1.0}});
  const double kl = kl_divergence(p, q);
  EXPECT_TRUE(std::isfinite(kl));
  EXPECT_NEAR(kl, -std::log(1e-12), 1e-9);
}

TEST(Losses, InvalidRowsAreRejected) {
  EXPECT_THROW(em_loss(Tensor::matrix({{0.5, 0.4}})), NumericError);
  EXPECT_THROW(gs_loss(Tensor::matrix({{1.5, -0.5}})), NumericError);
  EXPECT_THROW(kl_divergence(Tensor::matrix({{0.5, 0.5}}), Tensor::matrix({{1, 0, 0}})), ShapeError);
}

}  // namespace
}  // namespace lbn

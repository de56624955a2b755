#include "lbn/learnable_bn.hpp"

#include <gtest/gtest.h>

#include <cmath>

#include "lbn/errors.hpp"
#include "lbn/losses.hpp"
#include "test_util.hpp"

namespace lbn {
namespace {

using testing::random_tensor;

BnState random_state(std::size_t c, Rng& rng) {
  BnState s = BnState::fresh(c);
  for (std::size_t j = 0; j < c; ++j) {
    s.mu_h[j] = rng.normal();
    s.var_h[j] = 0.1 + 2.0 * rng.uniform();
    s.gamma[j] = 1.0 + 0.5 * rng.normal();
    s.beta[j] = rng.normal();
  }
  return s;
}

// Standard BN with explicitly supplied statistics, written out per element.
Tensor reference_bn(const Tensor& z, const std::vector<double>& mu, const std::vector<double>& var,
                    const BnState& s) {
  Tensor out = z;
  for (std::size_t i = 0; i < z.rows(); ++i) {
    for (std::size_t j = 0; j < z.cols(); ++j) {
      out.at(i, j) = (z.at(i, j) - mu[j]) / std::sqrt(var[j] + s.eps) * s.gamma[j] + s.beta[j];
    }
  }
  return out;
}

// Two-pass column statistics, independent of batch_stats.
std::pair<std::vector<double>, std::vector<double>> column_stats(const Tensor& z) {
  std::vector<double> mu(z.cols(), 0.0), var(z.cols(), 0.0);
  for (std::size_t j = 0; j < z.cols(); ++j) {
    for (std::size_t i = 0; i < z.rows(); ++i) mu[j] += z.at(i, j);
    mu[j] /= static_cast<double>(z.rows());
    for (std::size_t i = 0; i < z.rows(); ++i) var[j] += (z.at(i, j) - mu[j]) * (z.at(i, j) - mu[j]);
    var[j] /= static_cast<double>(z.rows());
  }
  return {mu, var};
}

TEST(PhiConstrain, Examples) {
  EXPECT_EQ(phi_constrain(0.3), 0.3);
  EXPECT_EQ(phi_constrain(0.0), 0.0);
  EXPECT_DOUBLE_EQ(phi_constrain(-2.0), 0.002);
}

TEST(PhiConstrain, NeverNegative) {
  Rng rng(5);
  for (int i = 0; i < 10000; ++i) {
    const double x = 100.0 * rng.normal();
    EXPECT_GE(phi_constrain(x), 0.0);
  }
}

TEST(BnForwardMix, ZeroWeightIsInferenceBn) {
  Rng rng(1);
  for (int trial = 0; trial < 20; ++trial) {
    auto s = random_state(6, rng);
    s.phi_raw = 0.0;
    const auto z = random_tensor({5, 6}, rng, 2.0);
    const auto out = bn_forward_mix(s, z);
    const auto expected = reference_bn(z, s.mu_h.values(), s.var_h.values(), s);
    EXPECT_LT(max_abs_diff(out.z_hat, expected), 1e-12);
  }
}

TEST(BnForwardMix, UnitWeightIsPresentStatisticsBn) {
  Rng rng(2);
  for (int trial = 0; trial < 20; ++trial) {
    auto s = random_state(6, rng);
    s.phi_raw = 1.0;
    const auto z = random_tensor({5, 6}, rng, 2.0);
    const auto [mu, var] = column_stats(z);
    EXPECT_LT(max_abs_diff(bn_forward_mix(s, z).z_hat, reference_bn(z, mu, var, s)), 1e-12);
  }
}

TEST(BnForwardMix, MixedStatisticsFollowTheConvexCombination) {
  Rng rng(3);
  for (int trial = 0; trial < 20; ++trial) {
    auto s = random_state(4, rng);
    s.phi_raw = rng.uniform();
    const double w = s.phi_raw;
    const auto z = random_tensor({3, 4}, rng);
    const auto [mu_p, var_p] = column_stats(z);
    std::vector<double> mu(4), var(4);
    for (std::size_t j = 0; j < 4; ++j) {
      mu[j] = (1 - w) * s.mu_h[j] + w * mu_p[j];
      var[j] = (1 - w) * s.var_h[j] + w * var_p[j];
      // Convexity: mixed statistics lie between history and present values.
      EXPECT_GE(mu[j], std::min(s.mu_h[j], mu_p[j]) - 1e-12);
      EXPECT_LE(mu[j], std::max(s.mu_h[j], mu_p[j]) + 1e-12);
      EXPECT_GE(var[j], 0.0);
    }
    EXPECT_LT(max_abs_diff(bn_forward_mix(s, z).z_hat, reference_bn(z, mu, var, s)), 1e-12);
  }
}

TEST(BnForwardMix, NegativeRawPhiMixesWithTheLeakySlope) {
  Rng rng(4);
  auto s = random_state(3, rng);
  s.phi_raw = -50.0;  // constrained to 0.05
  const auto z = random_tensor({4, 3}, rng);
  const auto [mu_p, var_p] = column_stats(z);
  std::vector<double> mu(3), var(3);
  for (std::size_t j = 0; j < 3; ++j) {
    mu[j] = 0.95 * s.mu_h[j] + 0.05 * mu_p[j];
    var[j] = 0.95 * s.var_h[j] + 0.05 * var_p[j];
  }
  EXPECT_LT(max_abs_diff(bn_forward_mix(s, z).z_hat, reference_bn(z, mu, var, s)), 1e-12);
}

TEST(BnForwardMix, ReportsPresentStatisticsAndLeavesStateAlone) {
  Rng rng(6);
  const auto s = random_state(3, rng);
  const auto before = s;
  const auto z = random_tensor({4, 3}, rng);
  const auto out = bn_forward_mix(s, z);
  const auto stats = batch_stats(z);
  EXPECT_EQ(out.mu_p, stats.mean);
  EXPECT_EQ(out.var_p, stats.var);
  EXPECT_EQ(s, before);
}

TEST(BnForwardMix, SingleRowWithUnitWeightStaysFinite) {
  // Zero present variance is guarded by eps.
  auto s = BnState::fresh(3);
  s.phi_raw = 1.0;
  const auto out = bn_forward_mix(s, Tensor::matrix({{1, 2, 3}}));
  EXPECT_TRUE(out.z_hat.all_finite());
  for (auto v : out.z_hat.data()) EXPECT_EQ(v, 0.0);
}

TEST(BnForwardMix, ChannelMismatchIsAShapeError) {
  EXPECT_THROW(bn_forward_mix(BnState::fresh(3), Tensor::zeros({2, 4})), ShapeError);
}

TEST(BnForwardMix, PhiGradientMatchesFiniteDifferences) {
  Rng rng(7);
  for (double phi0 : {0.3, 0.8, -0.5}) {
    auto s = random_state(5, rng);
    const auto z = random_tensor({4, 5}, rng);
    const auto w = random_tensor({4, 5}, rng);
    auto loss_at = [&](double raw, ad::Tape& tape, ad::Var& phi) {
      phi = tape.leaf(Tensor::scalar(raw));
      BnOperands ops{ad::leaky(phi, kPhiNegativeSlope), tape.constant(s.gamma), tape.constant(s.beta)};
      return ad::sum(ad::mul(bn_forward_mix(s, tape.constant(z), ops).z_hat, tape.constant(w)));
    };
    ad::Tape tape;
    ad::Var phi;
    const auto loss = loss_at(phi0, tape, phi);
    const double analytic = tape.backward(loss).of(phi).item();
    const auto numeric = ad::finite_diff(
        [&](const Tensor& x) {
          ad::Tape t;
          ad::Var p;
          return loss_at(x.item(), t, p).value().item();
        },
        Tensor::scalar(phi0), 1e-6);
    EXPECT_LT(testing::rel_error(analytic, numeric.item()), 1e-5) << "phi " << phi0;
  }
}

TEST(SecondaryCorrect, ClosedForm) {
  Rng rng(8);
  const auto s = random_state(4, rng);
  const auto mu_p = random_tensor({4}, rng);
  auto var_p = random_tensor({4}, rng);
  for (auto& v : var_p.data()) v = std::abs(v);
  const double phi = 0.37;
  const auto next = secondary_correct(s, mu_p, var_p, phi);
  for (std::size_t j = 0; j < 4; ++j) {
    EXPECT_NEAR(next.mu_h[j], s.mu_h[j] + phi * (mu_p[j] - s.mu_h[j]), 1e-12);
    EXPECT_NEAR(next.var_h[j], s.var_h[j] + phi * (var_p[j] - s.var_h[j]), 1e-12);
  }
  EXPECT_EQ(next.gamma, s.gamma);
  EXPECT_EQ(next.phi_raw, s.phi_raw);
}

TEST(SecondaryCorrect, ZeroPhiKeepsHistory) {
  Rng rng(9);
  const auto s = random_state(4, rng);
  EXPECT_EQ(secondary_correct(s, random_tensor({4}, rng), Tensor::full({4}, 2.0), 0.0), s);
}

TEST(SecondaryCorrect, RejectsNegativePresentVariance) {
  EXPECT_THROW(secondary_correct(BnState::fresh(2), Tensor::zeros({2}), Tensor::vector({1, -1}), 0.5),
               ContractError);
}

TEST(ResetPhi, Examples) {
  const auto s = BnState::fresh(2);
  EXPECT_EQ(phi_constrain(reset_phi(s, 1e-5).phi_raw), 1e-5);
  EXPECT_EQ(phi_constrain(reset_phi(s, 0.1).phi_raw), 0.1);
  EXPECT_EQ(reset_phi(s, 0.1).mu_h, s.mu_h);
  EXPECT_THROW(reset_phi(s, std::nan("")), NumericError);
}

TEST(BnState, ValidateCatchesNegativeVariance) {
  auto s = BnState::fresh(2);
  s.var_h[1] = -1.0;
  EXPECT_THROW(s.validate(), NumericError);
}

}  // namespace
}  // namespace lbn

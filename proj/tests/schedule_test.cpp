#include <gtest/gtest.h>

#include "guidelab/schedule.hpp"

using namespace guidelab;

namespace {

Schedule standard() { return Schedule::linear(400, 1e-4, 0.02); }

Vec scalar(double v) { return Vec::Constant(1, v); }

}  // namespace

TEST(Schedule, LinearEndpoints) {
  const auto s = standard();
  EXPECT_EQ(s.steps(), 400);
  EXPECT_DOUBLE_EQ(s.beta(1), 1e-4);
  EXPECT_EQ(s.beta(400), 0.02);
  EXPECT_DOUBLE_EQ(s.alpha_bar(1), 0.9999);
  EXPECT_EQ(s.alpha_bar(0), 1.0);
}

TEST(Schedule, AlphaBarIsTheRunningProduct) {
  const auto s = standard();
  double prod = 1.0;
  for (int t = 1; t <= 400; ++t) {
    prod *= 1.0 - (1e-4 + (0.02 - 1e-4) * (t - 1) / 399.0);
    EXPECT_NEAR(s.alpha_bar(t), prod, 1e-15) << "t=" << t;
    EXPECT_LT(s.alpha_bar(t), s.alpha_bar(t - 1));
  }
  EXPECT_LT(s.alpha_bar(400), 0.05);
}

TEST(Schedule, RejectsBadArguments) {
  EXPECT_THROW(Schedule::linear(1, 1e-4, 0.02), InvalidArgument);
  EXPECT_THROW(Schedule::linear(10, 0.0, 0.02), InvalidArgument);
  EXPECT_THROW(Schedule::linear(10, 1e-4, 1.0), InvalidArgument);
  EXPECT_THROW(Schedule::linear(10, 0.5, 0.1), InvalidArgument);
  EXPECT_THROW(Schedule::from_betas({0.1, 1.0}), InvalidArgument);
  EXPECT_THROW(standard().beta(0), InvalidArgument);
  EXPECT_THROW(standard().alpha_bar(401), InvalidArgument);
}

TEST(ForwardSample, ZeroNoiseScalesTheInput) {
  const auto s = standard();
  const Vec x0 = Eigen::Vector2d(1.5, -2.0);
  EXPECT_EQ(forward_sample(s, x0, 123, Vec::Zero(2)), s.sqrt_alpha_bar(123) * x0);
}

TEST(ForwardSample, NearIdentityAtFirstStep) {
  const auto s = standard();
  const Vec x0 = Eigen::Vector2d(3.0, 4.0);
  const Vec eps = Eigen::Vector2d(0.6, 0.8);
  EXPECT_LE((forward_sample(s, x0, 1, eps) - x0).norm(), 1e-2 * x0.norm());
}

TEST(ForwardSample, ScalarArithmetic) {
  // abar = 0.25 at t = 1: 0.5 * 1 + sqrt(0.75) * 2
  const auto s = Schedule::from_betas({0.75, 0.1});
  EXPECT_NEAR(forward_sample(s, scalar(1.0), 1, scalar(2.0))[0], 2.2320508, 1e-7);
}

TEST(ForwardSample, StepZeroIsClean) {
  const Vec x0 = Eigen::Vector2d(0.3, 0.4);
  EXPECT_EQ(forward_sample(standard(), x0, 0, Vec::Ones(2)), x0);
}

TEST(CoupledPair, ZeroNoiseDifference) {
  const auto s = standard();
  const Vec x0 = Eigen::Vector2d(2.0, -1.0);
  const auto [xt, xp] = coupled_pair(s, x0, 50, Vec::Zero(2));
  EXPECT_EQ(xt - xp, (s.sqrt_alpha_bar(50) - s.sqrt_alpha_bar(49)) * x0);
}

TEST(CoupledPair, EqualAlphaBarGivesEqualPoints) {
  const auto s = Schedule::from_betas({0.1, 0.0, 0.2});
  const auto [xt, xp] = coupled_pair(s, Eigen::Vector2d(1, 2), 2, Eigen::Vector2d(-1, 0.5));
  EXPECT_EQ(xt, xp);
}

TEST(CoupledPair, ScalarArithmetic) {
  // abar_1 = 0.81, abar_2 = 0.64
  const auto s = Schedule::from_betas({0.19, 1.0 - 0.64 / 0.81});
  const auto [xt, xp] = coupled_pair(s, scalar(1.0), 2, scalar(1.0));
  EXPECT_NEAR(xt[0], 1.4, 1e-12);
  EXPECT_NEAR(xp[0], 1.3358899, 1e-7);
}

TEST(CoupledPair, RequiresTwoOrMore) {
  EXPECT_THROW(coupled_pair(standard(), scalar(1), 1, scalar(1)), InvalidArgument);
}

TEST(ReverseCoefficients, ScalarArithmetic) {
  // beta_1 = 0.02 and abar_2 = 0.5
  const auto s = Schedule::from_betas({1.0 - 0.5 / 0.98, 0.02});
  const auto c = reverse_coefficients(s, 2);
  EXPECT_NEAR(c.mean_coeff_x, 1.0101525, 1e-7);
  EXPECT_NEAR(c.mean_coeff_eps, 0.0285714, 1e-7);
  EXPECT_DOUBLE_EQ(c.sigma_sq, 0.02);
}

TEST(ReverseCoefficients, NoNoiseStepIsIdentity) {
  const auto s = Schedule::from_betas({0.1, 0.0});
  const auto c = reverse_coefficients(s, 2);
  EXPECT_EQ(c.mean_coeff_x, 1.0);
  EXPECT_EQ(c.mean_coeff_eps, 0.0);
  EXPECT_EQ(c.sigma_sq, 0.0);
}

TEST(ReverseCoefficients, VarianceModes) {
  const auto b = Schedule::linear(400, 1e-4, 0.02, PosteriorVariance::beta);
  const auto bt = Schedule::linear(400, 1e-4, 0.02, PosteriorVariance::beta_tilde);
  EXPECT_EQ(reverse_coefficients(b, 1).sigma_sq, 1e-4);
  EXPECT_DOUBLE_EQ(reverse_coefficients(bt, 1).sigma_sq, 1e-4);
  const int t = 200;
  const double expect = bt.beta(t) * (1 - bt.alpha_bar(t - 1)) / (1 - bt.alpha_bar(t));
  EXPECT_NEAR(reverse_coefficients(bt, t).sigma_sq, expect, 1e-17);
  EXPECT_LT(reverse_coefficients(bt, t).sigma_sq, reverse_coefficients(b, t).sigma_sq);
}

TEST(PosteriorVariance, StringRoundTrip) {
  for (auto m : {PosteriorVariance::beta, PosteriorVariance::beta_tilde}) {
    EXPECT_EQ(posterior_variance_from_string(to_string(m)), m);
  }
  EXPECT_THROW(posterior_variance_from_string("sigma"), InvalidArgument);
}

#include <cmath>

#include <gtest/gtest.h>

#include "guidelab/eval.hpp"
#include "guidelab/guidance.hpp"
#include "test_util.hpp"

using namespace guidelab;
using namespace guidelab::testing;

namespace {

const Schedule& standard() {
  static const Schedule s = Schedule::linear(400, 1e-4, 0.02);
  return s;
}

const AnalyticDenoiser& default_denoiser() {
  static const AnalyticDenoiser dn(default_two_class_spec(), standard());
  return dn;
}

GuidanceConfig oracle_guidance(double scale) {
  GuidanceConfig g;
  g.scale = scale;
  g.classifier = ClassifierHandle::oracle(default_two_class_spec());
  g.target = 0;
  return g;
}

}  // namespace

TEST(Stabilizer, EmaWithZeroBetaPassesThrough) {
  auto st = StabilizerState::zeros(2);
  const auto cfg = StabilizerConfig::ema(0.0);
  const Vec g = vec({1.5, -3.0});
  EXPECT_EQ(stabilize(st, cfg, g), g);
  EXPECT_EQ(stabilize(st, cfg, 2 * g), 2 * g);
}

TEST(Stabilizer, EmaRecursionFromZero) {
  auto st = StabilizerState::zeros(1);
  const auto cfg = StabilizerConfig::ema(0.9);
  const Vec one = vec({1.0});
  EXPECT_DOUBLE_EQ(stabilize(st, cfg, one)[0], 0.1);
  EXPECT_DOUBLE_EQ(stabilize(st, cfg, one)[0], 0.19);
  EXPECT_DOUBLE_EQ(stabilize(st, cfg, one)[0], 0.271);
  EXPECT_EQ(st.steps, 3);
}

TEST(Stabilizer, AdamFirstStep) {
  auto st = StabilizerState::zeros(1);
  const auto cfg = StabilizerConfig::adam();
  const double nu = stabilize(st, cfg, vec({2.0}))[0];
  EXPECT_NEAR(nu, 0.2 / (std::sqrt(0.004) + 1e-8), 1e-12);
  EXPECT_NEAR(nu, 3.1623, 1e-4);
}

TEST(Stabilizer, AdamTendsToSign) {
  auto st = StabilizerState::zeros(2);
  const auto cfg = StabilizerConfig::adam();
  const Vec g = vec({0.37, -12.0});
  Vec nu;
  for (int i = 0; i < 10000; ++i) nu = stabilize(st, cfg, g);
  EXPECT_NEAR(nu[0], 1.0, 1e-3);
  EXPECT_NEAR(nu[1], -1.0, 1e-3);
}

TEST(Stabilizer, IdentityAndValidation) {
  auto st = StabilizerState::zeros(2);
  const Vec g = vec({4.0, 5.0});
  EXPECT_EQ(stabilize(st, StabilizerConfig::identity(), g), g);
  EXPECT_THROW(StabilizerConfig::ema(1.0), InvalidArgument);
  EXPECT_THROW(StabilizerConfig::ema(-0.1), InvalidArgument);
  EXPECT_THROW(StabilizerConfig::adam(0.0), InvalidArgument);
  EXPECT_EQ(StabilizerConfig::ema(0.99).tag(), "ema(0.99)");
}

TEST(ReverseStep, NoNoiseStepIsIdentity) {
  const auto s = Schedule::from_betas({0.1, 0.0, 0.0});
  const AnalyticDenoiser dn(default_two_class_spec(), s);
  Rng rng(1);
  const Vec x = vec({0.3, 0.9});
  EXPECT_EQ(reverse_step(dn, x, 3, rng), x);
}

TEST(ReverseStep, LastStepIsDeterministic) {
  Rng a(1), b(2);
  const Vec x = vec({0.3, 0.9});
  EXPECT_EQ(reverse_step(default_denoiser(), x, 1, a), reverse_step(default_denoiser(), x, 1, b));
}

TEST(GuidedSample, ZeroScaleIsTheUnguidedChain) {
  for (auto stab : {StabilizerConfig::identity(), StabilizerConfig::ema(0.9), StabilizerConfig::adam()}) {
    auto cfg = oracle_guidance(0.0);
    cfg.stabilizer = stab;
    const auto r = guided_sample(default_denoiser(), cfg, 77);
    Rng rng(77);
    Vec x = rng.normal_vector(2);
    for (int t = 400; t >= 1; --t) x = reverse_step(default_denoiser(), x, t, rng);
    EXPECT_EQ(r.x0, x);
    EXPECT_FALSE(r.diverged);
  }
}

TEST(GuidedSample, TraceRecordsEveryStep) {
  const auto r = guided_sample(default_denoiser(), oracle_guidance(1.0), 5, true);
  ASSERT_TRUE(r.trace.has_value());
  EXPECT_EQ(r.trace->states.size(), 400u);
  EXPECT_EQ(r.trace->states.back(), r.x0);
}

TEST(GuidedSample, DivergenceIsFlagged) {
  const auto r = guided_sample(default_denoiser(), oracle_guidance(1e308), 5);
  EXPECT_TRUE(r.diverged);
  EXPECT_GE(r.diverged_at, 1);
}

TEST(GuidedSample, ConfigValidation) {
  auto cfg = oracle_guidance(-1.0);
  EXPECT_THROW(guided_sample(default_denoiser(), cfg, 1), InvalidArgument);
  cfg = oracle_guidance(1.0);
  cfg.target = 2;
  EXPECT_THROW(guided_sample(default_denoiser(), cfg, 1), InvalidArgument);
}

TEST(SampleBatch, ChainsUseIndependentSubstreams) {
  const auto cfg = oracle_guidance(2.0);
  const auto b = sample_batch(default_denoiser(), cfg, 6, 99);
  for (std::size_t i = 0; i < 6; ++i) {
    const auto r = guided_sample(default_denoiser(), cfg, chain_seed(99, i));
    EXPECT_EQ(Vec(b.samples.row(static_cast<Eigen::Index>(i)).transpose()), r.x0);
    EXPECT_EQ(b.seeds[i], chain_seed(99, i));
  }
  const auto one = sample_batch(default_denoiser(), cfg, 1, 99);
  EXPECT_EQ(one.samples.row(0), b.samples.row(0));
}

TEST(SampleBatch, ThreadCountDoesNotChangeResults) {
  const auto cfg = oracle_guidance(2.0);
  set_threads(1);
  const auto a = sample_batch(default_denoiser(), cfg, 16, 3);
  set_threads(4);
  const auto b = sample_batch(default_denoiser(), cfg, 16, 3);
  set_threads(1);
  EXPECT_EQ(a.samples, b.samples);
}

TEST(SampleBatch, DivergedRowsAreNaN) {
  const auto b = sample_batch(default_denoiser(), oracle_guidance(1e308), 3, 1);
  EXPECT_EQ(b.n_diverged, 3u);
  EXPECT_TRUE(std::isnan(b.samples(1, 0)));
  EXPECT_EQ(b.finite_samples().rows(), 0);
}

TEST(Sampling, UnguidedChainsReproduceTheData) {
  const auto spec = default_two_class_spec();
  const auto b = sample_batch(default_denoiser(), oracle_guidance(0.0), 2000, 10);
  const Mat ref = sample_dataset(spec, 2000, 11).points;
  EXPECT_EQ(b.n_diverged, 0u);
  EXPECT_LT(frechet_distance(b.samples, ref), 0.05);
}

TEST(Sampling, OracleGuidanceHitsTheTarget) {
  const auto spec = default_two_class_spec();
  auto cfg = oracle_guidance(3.0);
  cfg.path = GradientPath::x0pred();
  const auto b = sample_batch(default_denoiser(), cfg, 400, 12);
  const auto report = evaluate(b.finite_samples(), spec, 0, cfg.classifier, 13, b.n_diverged);
  EXPECT_EQ(b.n_diverged, 0u);
  EXPECT_GE(report.target_accuracy_oracle, 0.95);
}

TEST(Sampling, RawOracleGuidanceOnSphericalClusters) {
  // Well separated spherical clusters: the clean Bayes classifier is smooth
  // enough to guide on x_t directly.
  GmmSpec spec;
  spec.dim = 2;
  spec.classes = {ClassSpec{0.5, {gaussian(vec({-1.0, 0.0}), 0.05, 0.5), gaussian(vec({0.0, 1.0}), 0.05, 0.5)}},
                  ClassSpec{0.5, {gaussian(vec({1.0, 0.0}), 0.05, 0.5), gaussian(vec({0.0, -1.0}), 0.05, 0.5)}}};
  const AnalyticDenoiser dn(spec, Schedule::linear(400, 1e-4, 0.02));
  GuidanceConfig cfg;
  cfg.classifier = ClassifierHandle::oracle(spec);
  cfg.scale = 3.0;
  const auto b = sample_batch(dn, cfg, 400, 12);
  const auto report = evaluate(b.finite_samples(), spec, 0, cfg.classifier, 13, b.n_diverged);
  EXPECT_EQ(b.n_diverged, 0u);
  EXPECT_GE(report.target_accuracy_oracle, 0.95);
}

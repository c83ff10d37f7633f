// Small trained-model runs on the default spec, cheaper than the acceptance
// binary but exercising the same pipeline.

#include <gtest/gtest.h>

#include "guidelab/eval.hpp"
#include "guidelab/sensitivity.hpp"

using namespace guidelab;

namespace {

struct Fixture {
  GmmSpec spec = default_two_class_spec();
  Schedule sch = Schedule::linear(400, 1e-4, 0.02);
  AnalyticDenoiser dn{spec, sch};
  LabeledDataset probe = sample_dataset(spec, 150, 31);
  ClassifierHandle non_robust, robust;

  Fixture() {
    const auto data = sample_dataset(spec, 2000, 30);
    TrainConfig cfg;
    cfg.hidden = {32, 32};
    cfg.epochs = 40;
    cfg.seed = 1;
    non_robust = ClassifierHandle::network(ClassifierKind::non_robust, train(data, cfg).model);
    cfg.noise = NoiseMode::forward_noised;
    cfg.seed = 2;
    robust = ClassifierHandle::network(ClassifierKind::robust, train(data, cfg, &sch).model);
  }

  SensitivityCurve curve(const ClassifierHandle& h, GradientPath path,
                         std::optional<StabilizerConfig> stab = std::nullopt) const {
    return sensitivity_curve(h, dn, probe, {SensitivityMetric::gradient, path, stab}, 9);
  }
};

const Fixture& world() {
  static const Fixture f;
  return f;
}

}  // namespace

TEST(Integration, RobustGradientIsSmoother) {
  const auto& w = world();
  const auto nr = w.curve(w.non_robust, GradientPath::raw());
  const auto rb = w.curve(w.robust, GradientPath::raw());
  EXPECT_GT(nr.mean_at(200), rb.mean_at(200));
  EXPECT_EQ(nr.undefined, 0);
}

TEST(Integration, CleanEstimatePathIsSmootherThanRaw) {
  const auto& w = world();
  const auto raw = w.curve(w.non_robust, GradientPath::raw());
  const auto hat = w.curve(w.non_robust, GradientPath::x0pred());
  int below = 0;
  for (std::size_t i = 0; i < raw.t.size(); ++i) below += hat.mean[i] < raw.mean[i];
  EXPECT_GE(below, static_cast<int>(0.9 * raw.t.size()));
}

TEST(Integration, HeavierAveragingIsSmootherEarly) {
  const auto& w = world();
  const auto e9 = w.curve(w.non_robust, GradientPath::x0pred(), StabilizerConfig::ema(0.9));
  const auto e99 = w.curve(w.non_robust, GradientPath::x0pred(), StabilizerConfig::ema(0.99));
  EXPECT_LT(e99.average(2, 199), e9.average(2, 199));
}

TEST(Integration, RawNonRobustGuidanceMissesTheTarget) {
  const auto& w = world();
  GuidanceConfig g;
  g.classifier = w.non_robust;
  for (double s : {1.0, 10.0}) {
    g.scale = s;
    const auto b = sample_batch(w.dn, g, 300, 4);
    const auto r = evaluate(b.finite_samples(), w.spec, 0, g.classifier, 5, b.n_diverged);
    EXPECT_LT(r.target_accuracy_oracle, 0.9) << "s=" << s;
  }
}

TEST(Integration, StabilizedCleanEstimateGuidanceHitsTheTarget) {
  const auto& w = world();
  GuidanceConfig g;
  g.classifier = w.non_robust;
  g.path = GradientPath::x0pred();
  g.stabilizer = StabilizerConfig::ema(0.99);
  g.scale = 10.0;
  const auto b = sample_batch(w.dn, g, 300, 4);
  const auto r = evaluate(b.finite_samples(), w.spec, 0, g.classifier, 5, b.n_diverged);
  EXPECT_EQ(b.n_diverged, 0u);
  EXPECT_GE(r.target_accuracy_oracle, 0.9);
}

#include <gtest/gtest.h>

#include "guidelab/classifier.hpp"
#include "test_util.hpp"

using namespace guidelab;
using namespace guidelab::testing;

namespace {

const Schedule& standard() {
  static const Schedule s = Schedule::linear(400, 1e-4, 0.02);
  return s;
}

// A small clean-trained network on the default spec, shared across tests.
const ClassifierHandle& small_non_robust() {
  static const ClassifierHandle h = [] {
    const auto data = sample_dataset(default_two_class_spec(), 1500, 21);
    TrainConfig cfg;
    cfg.hidden = {32, 32};
    cfg.epochs = 40;
    cfg.seed = 5;
    return ClassifierHandle::network(ClassifierKind::non_robust, train(data, cfg).model);
  }();
  return h;
}

MlpModel random_model(std::uint64_t seed) {
  MlpModel m = MlpModel::init({2, 12, 12, 2}, Activation::tanh, seed);
  Rng rng(seed);
  for (auto& w : m.weights) w *= 2.0;
  for (auto& b : m.biases) b = 0.3 * rng.normal_vector(b.size());
  return m;
}

}  // namespace

TEST(Classifier, KindStrings) {
  for (auto k : {ClassifierKind::non_robust, ClassifierKind::robust, ClassifierKind::bayes_oracle}) {
    EXPECT_EQ(classifier_kind_from_string(to_string(k)), k);
  }
  EXPECT_THROW(classifier_kind_from_string("oracle"), InvalidArgument);
  EXPECT_THROW(ClassifierHandle::network(ClassifierKind::bayes_oracle, MlpModel::zeros({2, 2})),
               InvalidArgument);
}

TEST(Oracle, SymmetricMidpointTies) {
  const auto h = ClassifierHandle::oracle(symmetric_pair(2, 1.3, 0.4));
  const Vec l = h.logits(vec({0.0, 0.7}));
  EXPECT_NEAR(l[0], l[1], 1e-14);
}

TEST(Oracle, DeepInsideClassZero) {
  const auto spec = default_two_class_spec();
  const auto h = ClassifierHandle::oracle(spec);
  EXPECT_EQ(h.predict(spec.classes[0].components[0].mean), 0);
  EXPECT_EQ(h.predict(spec.classes[1].components[1].mean), 1);
}

TEST(Oracle, LogitsAreLogJoint) {
  const auto spec = symmetric_pair(1, 1.0, 1.0);
  const auto h = ClassifierHandle::oracle(spec);
  const Vec l = h.logits(vec({0.5}));
  const double norm = -0.5 * std::log(2 * M_PI);
  EXPECT_NEAR(l[0], std::log(0.5) + norm - 0.5 * 1.5 * 1.5, 1e-14);
  EXPECT_NEAR(l[1], std::log(0.5) + norm - 0.5 * 0.5 * 0.5, 1e-14);
}

TEST(Oracle, GradientMatchesFiniteDifferences) {
  // Saturated points are skipped: their gradients sit below the rounding
  // floor of a difference quotient on logits of this size.
  const auto h = ClassifierHandle::oracle(default_three_class_spec());
  Rng rng(3);
  int checked = 0;
  for (int i = 0; i < 80; ++i) {
    const Vec x = vec({1.5 * rng.normal(), 1.0 + 0.05 * rng.normal()});
    for (int y = 0; y < 3; ++y) {
      for (auto obj : {GradientObjective::log_softmax, GradientObjective::raw_logit}) {
        const Vec g = h.input_gradient(x, y, obj);
        if (g.norm() < 1e-2) continue;
        auto f = [&](const Vec& z) {
          const Vec l = h.logits(z);
          return obj == GradientObjective::log_softmax ? log_softmax_target(l, y) : l[y];
        };
        EXPECT_LT(relative_error(g, central_gradient(f, x, 1e-6)), 1e-5);
        ++checked;
      }
    }
  }
  EXPECT_GE(checked, 100);
}

TEST(Accuracy, TrainedModelOnCleanData) {
  const auto data = sample_dataset(default_two_class_spec(), 1500, 21);
  EXPECT_GE(accuracy(small_non_robust(), data, Preprocess::none()), 0.99);
}

TEST(Accuracy, ChanceAtFullNoise) {
  const auto val = sample_dataset(default_two_class_spec(), 2000, 22);
  const double a = accuracy(small_non_robust(), val, Preprocess::noise(400), &standard(), nullptr, 1);
  EXPECT_GE(a, 0.4);
  EXPECT_LE(a, 0.6);
}

TEST(Accuracy, ZeroNoiseScheduleEqualsClean) {
  const auto val = sample_dataset(default_two_class_spec(), 500, 23);
  const auto zero = Schedule::from_betas(std::vector<double>(20, 0.0));
  EXPECT_EQ(accuracy(small_non_robust(), val, Preprocess::noise(17), &zero, nullptr, 4),
            accuracy(small_non_robust(), val, Preprocess::none()));
}

TEST(Accuracy, MissingInputsThrow) {
  const auto val = sample_dataset(default_two_class_spec(), 10, 23);
  EXPECT_THROW(accuracy(small_non_robust(), val, Preprocess::noise(3)), InvalidArgument);
  EXPECT_THROW(accuracy(small_non_robust(), val, Preprocess::x0_pred(3), &standard()),
               InvalidArgument);
}

TEST(GuidancePath, StringRoundTrip) {
  for (auto p : {GradientPath::raw(), GradientPath::x0pred(),
                 GradientPath::x0pred(JacobianMode::stop_gradient)}) {
    const auto q = gradient_path_from_string(to_string(p));
    EXPECT_EQ(q.kind, p.kind);
    EXPECT_EQ(q.jacobian, p.jacobian);
  }
  EXPECT_THROW(gradient_path_from_string("x0"), InvalidArgument);
}

TEST(GuidancePath, RawOracleGradientPointsTowardClassMean) {
  // Target: one unit Gaussian; alternative: a nearly flat broad Gaussian.
  GmmSpec s;
  s.dim = 2;
  const Vec mu = vec({1.0, -2.0});
  s.classes = {ClassSpec{0.5, {gaussian(mu, 1.0)}}, ClassSpec{0.5, {gaussian(Vec::Zero(2), 1e4)}}};
  const auto h = ClassifierHandle::oracle(s);
  const AnalyticDenoiser dn(s, standard());
  Rng rng(8);
  for (int i = 0; i < 50; ++i) {
    const Vec x = mu + 3.0 * rng.normal_vector(2);
    const Vec g = guided_log_prob_gradient(dn, h, x, 100, 0, GradientPath::raw());
    EXPECT_GT(g.dot(mu - x), 0.0);
  }
}

TEST(GuidancePath, X0PredMatchesRawWithoutNoise) {
  const auto spec = symmetric_pair(2, 1.0, 1.0);
  const auto tiny = Schedule::from_betas({1e-15, 1e-15});
  const AnalyticDenoiser dn(spec, tiny);
  const auto h = ClassifierHandle::network(ClassifierKind::non_robust, random_model(1));
  Rng rng(2);
  for (int i = 0; i < 20; ++i) {
    const Vec x = rng.normal_vector(2);
    const Vec raw = guided_log_prob_gradient(dn, h, x, 1, 0, GradientPath::raw());
    const Vec hat = guided_log_prob_gradient(dn, h, x, 1, 0, GradientPath::x0pred());
    EXPECT_LT((raw - hat).cwiseAbs().maxCoeff(), 1e-10);
  }
}

TEST(GuidancePath, ComposedGradientMatchesFiniteDifferences) {
  const auto spec = default_three_class_spec();
  const AnalyticDenoiser dn(spec, standard());
  Rng rng(4);
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    auto m = MlpModel::init({2, 12, 12, 3}, Activation::tanh, seed);
    const auto h = ClassifierHandle::network(ClassifierKind::non_robust, m);
    for (int i = 0; i < 20; ++i) {
      const int t = 5 + static_cast<int>(rng.uniform() * 390);
      const Vec x = forward_sample(standard(), vec({2.0 * rng.normal(), 1.0}), t, rng.normal_vector(2));
      const int y = i % 3;
      auto f = [&](const Vec& z) {
        return log_softmax_target(h.logits(dn.posterior_mean_x0(z, t)), y);
      };
      const Vec g = guided_log_prob_gradient(dn, h, x, t, y, GradientPath::x0pred());
      EXPECT_LT(relative_error(g, central_gradient(f, x, 1e-6)), 1e-5) << "t=" << t;
    }
  }
}

TEST(GuidancePath, StopGradientScalesByInverseRootAlphaBar) {
  const auto spec = default_two_class_spec();
  const AnalyticDenoiser dn(spec, standard());
  const auto h = ClassifierHandle::network(ClassifierKind::non_robust, random_model(3));
  const Vec x = vec({0.4, 0.3});
  const int t = 150;
  const Vec x0 = dn.posterior_mean_x0(x, t);
  const Vec expect = h.input_gradient(x0, 1) / standard().sqrt_alpha_bar(t);
  const Vec got = guided_log_prob_gradient(dn, h, x, t, 1,
                                           GradientPath::x0pred(JacobianMode::stop_gradient));
  EXPECT_LT((got - expect).norm(), 1e-14);
}

TEST(GuidancePath, PathLogits) {
  const auto spec = default_two_class_spec();
  const AnalyticDenoiser dn(spec, standard());
  const auto h = ClassifierHandle::oracle(spec);
  const Vec x = vec({0.5, 0.2});
  EXPECT_EQ(path_logits(dn, h, x, 50, GradientPath::raw()), h.logits(x));
  EXPECT_EQ(path_logits(dn, h, x, 50, GradientPath::x0pred()),
            h.logits(dn.posterior_mean_x0(x, 50)));
}

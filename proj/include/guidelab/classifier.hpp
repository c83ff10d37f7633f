#pragma once

#include <cstdint>
#include <memory>
#include <string>
#include <vector>

#include "guidelab/core.hpp"
#include "guidelab/denoiser.hpp"
#include "guidelab/nn.hpp"
#include "guidelab/parallel.hpp"
#include "guidelab/rng.hpp"
#include "guidelab/schedule.hpp"
#include "guidelab/synthdata.hpp"

namespace guidelab {

enum class ClassifierKind { non_robust, robust, bayes_oracle };

inline std::string to_string(ClassifierKind k) {
  switch (k) {
    case ClassifierKind::non_robust: return "non_robust";
    case ClassifierKind::robust: return "robust";
    case ClassifierKind::bayes_oracle: return "bayes_oracle";
  }
  return "?";
}

inline ClassifierKind classifier_kind_from_string(const std::string& s) {
  if (s == "non_robust") return ClassifierKind::non_robust;
  if (s == "robust") return ClassifierKind::robust;
  if (s == "bayes_oracle") return ClassifierKind::bayes_oracle;
  throw InvalidArgument("unknown classifier kind '" + s + "'");
}

/// One evaluation/gradient interface over the trained networks and the exact
/// Bayes classifier of the data mixture. Oracle logits are log(pi_y p(x|y)).
/// Copies share the underlying (immutable) model.
class ClassifierHandle {
 public:
  static ClassifierHandle network(ClassifierKind kind, MlpModel model) {
    require(kind != ClassifierKind::bayes_oracle,
            "network handle cannot be a bayes oracle");
    model.validate();
    ClassifierHandle h;
    h.kind_ = kind;
    h.model_ = std::make_shared<const MlpModel>(std::move(model));
    return h;
  }

  static ClassifierHandle oracle(const GmmSpec& spec) {
    ClassifierHandle h;
    h.kind_ = ClassifierKind::bayes_oracle;
    h.gmm_ = std::make_shared<const CompiledGmm>(spec);
    return h;
  }

  ClassifierKind kind() const { return kind_; }
  const MlpModel& model() const { return *model_; }
  const CompiledGmm& gmm() const { return *gmm_; }

  int num_classes() const {
    return model_ ? model_->num_classes() : gmm_->num_classes();
  }
  int input_dim() const { return model_ ? model_->input_dim() : gmm_->dim(); }

  Vec logits(const Vec& x) const {
    if (model_) return forward(*model_, x);
    return gmm_->log_joint(x);
  }

  int predict(const Vec& x) const {
    Eigen::Index best = 0;
    logits(x).maxCoeff(&best);
    return static_cast<int>(best);
  }

  /// d/dx of log p(y | x) (or of the raw target logit).
  Vec input_gradient(
      const Vec& x, int y,
      GradientObjective objective = GradientObjective::log_softmax) const {
    if (model_) return guidelab::input_gradient(*model_, x, y, objective);
    gmm_->check_class(y);
    if (objective == GradientObjective::raw_logit) {
      return gmm_->class_log_density_gradient(y, x);
    }
    const Vec p = softmax(gmm_->log_joint(x));
    Vec g = gmm_->class_log_density_gradient(y, x);
    for (int j = 0; j < gmm_->num_classes(); ++j) {
      if (p[j] > 0.0) g -= p[j] * gmm_->class_log_density_gradient(j, x);
    }
    return g;
  }

 private:
  ClassifierKind kind_ = ClassifierKind::bayes_oracle;
  std::shared_ptr<const MlpModel> model_;
  std::shared_ptr<const CompiledGmm> gmm_;
};

inline Vec predict_logits(const ClassifierHandle& h, const Vec& x) {
  return h.logits(x);
}

enum class PreprocessKind { none, forward_noise, x0_pred };

struct Preprocess {
  PreprocessKind kind = PreprocessKind::none;
  int t = 0;

  static Preprocess none() { return {}; }
  static Preprocess noise(int t) { return {PreprocessKind::forward_noise, t}; }
  static Preprocess x0_pred(int t) { return {PreprocessKind::x0_pred, t}; }
};

/// Fraction of points classified correctly after preprocessing. Noising uses
/// an independent eps per point drawn from (seed, point index); x0_pred
/// noises first and then applies the denoiser's one-step clean estimate.
inline double accuracy(const ClassifierHandle& h, const LabeledDataset& data,
                       Preprocess pre, const Schedule* schedule = nullptr,
                       const AnalyticDenoiser* denoiser = nullptr,
                       std::uint64_t seed = 0) {
  require(data.size() > 0, "accuracy: empty dataset");
  if (pre.kind != PreprocessKind::none) {
    require(schedule != nullptr, "accuracy: noising needs a schedule");
    schedule->check_step(pre.t, 0);
  }
  if (pre.kind == PreprocessKind::x0_pred) {
    require(denoiser != nullptr, "accuracy: x0_pred needs a denoiser");
  }
  const auto n = static_cast<std::size_t>(data.size());
  std::vector<unsigned char> correct(n, 0);
  parallel_for(n, [&](std::size_t i) {
    Vec x = data.point(static_cast<Eigen::Index>(i));
    if (pre.kind != PreprocessKind::none) {
      Rng rng(derive_seed(seed, "accuracy-noise", i));
      x = forward_sample(*schedule, x, pre.t, rng.normal_vector(x.size()));
      if (pre.kind == PreprocessKind::x0_pred && pre.t > 0) {
        x = denoiser->x0_prediction(x, pre.t);
      }
    }
    correct[i] = h.predict(x) == data.labels[i] ? 1 : 0;
  });
  std::size_t hits = 0;
  for (auto c : correct) hits += c;
  return static_cast<double>(hits) / static_cast<double>(n);
}

// --- guidance gradient --------------------------------------------------------

enum class GradientPathKind { raw, x0pred };

struct GradientPath {
  GradientPathKind kind = GradientPathKind::raw;
  JacobianMode jacobian = JacobianMode::full;

  static GradientPath raw() { return {}; }
  static GradientPath x0pred(JacobianMode m = JacobianMode::full) {
    return {GradientPathKind::x0pred, m};
  }
};

inline std::string to_string(const GradientPath& p) {
  if (p.kind == GradientPathKind::raw) return "raw";
  return p.jacobian == JacobianMode::full ? "x0pred" : "x0pred_stopgrad";
}

inline GradientPath gradient_path_from_string(const std::string& s) {
  if (s == "raw") return GradientPath::raw();
  if (s == "x0pred") return GradientPath::x0pred(JacobianMode::full);
  if (s == "x0pred_stopgrad")
    return GradientPath::x0pred(JacobianMode::stop_gradient);
  throw InvalidArgument("unknown gradient path '" + s + "'");
}

/// Classifier guidance direction at x_t. The raw path differentiates the
/// classifier at x_t; the x0pred path evaluates it at the one-step clean
/// estimate and pulls the gradient back through the denoiser Jacobian.
inline Vec guided_log_prob_gradient(
    const AnalyticDenoiser& dn, const ClassifierHandle& h, const Vec& xt,
    int t, int y, GradientPath path,
    GradientObjective objective = GradientObjective::log_softmax) {
  if (path.kind == GradientPathKind::raw) {
    return h.input_gradient(xt, y, objective);
  }
  dn.schedule().check_step(t, 0);
  if (path.jacobian == JacobianMode::stop_gradient) {
    const Vec x0 = dn.posterior_mean_x0(xt, t);
    return h.input_gradient(x0, y, objective) / dn.schedule().sqrt_alpha_bar(t);
  }
  const auto ev = dn.evaluate(xt, t, true);
  return ev.jacobian.transpose() * h.input_gradient(ev.mean, y, objective);
}

/// Logits seen along a path: f(x_t), or f(x0_hat(x_t)).
inline Vec path_logits(const AnalyticDenoiser& dn, const ClassifierHandle& h,
                       const Vec& xt, int t, GradientPath path) {
  if (path.kind == GradientPathKind::raw) return h.logits(xt);
  return h.logits(dn.posterior_mean_x0(xt, t));
}

}  // namespace guidelab

#pragma once

#include <cmath>
#include <cstdint>
#include <limits>
#include <numbers>
#include <vector>

#include "guidelab/core.hpp"
#include "guidelab/parallel.hpp"
#include "guidelab/rng.hpp"

namespace guidelab {

struct Component {
  double weight = 1.0;
  Vec mean;
  Mat cov;
};

struct ClassSpec {
  double prior = 1.0;
  std::vector<Component> components;
};

/// Labeled Gaussian mixture: each class is itself a mixture of Gaussians.
struct GmmSpec {
  int dim = 0;
  std::vector<ClassSpec> classes;

  int num_classes() const { return static_cast<int>(classes.size()); }

  void validate() const {
    require(dim >= 1, "GmmSpec: dim must be positive");
    require(!classes.empty(), "GmmSpec: no classes");
    double prior_sum = 0.0;
    for (std::size_t y = 0; y < classes.size(); ++y) {
      const auto& c = classes[y];
      require(c.prior >= 0.0, "GmmSpec: negative class prior");
      prior_sum += c.prior;
      require(!c.components.empty(), "GmmSpec: class without components");
      double w_sum = 0.0;
      for (const auto& k : c.components) {
        require(k.weight >= 0.0, "GmmSpec: negative component weight");
        w_sum += k.weight;
        require(k.mean.size() == dim, "GmmSpec: mean dimension mismatch");
        require(k.cov.rows() == dim && k.cov.cols() == dim,
                "GmmSpec: covariance dimension mismatch");
        require(k.mean.allFinite() && k.cov.allFinite(),
                "GmmSpec: non-finite component parameters");
        require((k.cov - k.cov.transpose()).cwiseAbs().maxCoeff() <=
                    1e-12 * (1.0 + k.cov.cwiseAbs().maxCoeff()),
                "GmmSpec: covariance not symmetric");
        Eigen::LLT<Mat> llt(k.cov);
        require(llt.info() == Eigen::Success,
                "GmmSpec: covariance not positive definite");
      }
      require(std::abs(w_sum - 1.0) <= 1e-12,
              "GmmSpec: component weights of class " + std::to_string(y) +
                  " do not sum to 1");
    }
    require(std::abs(prior_sum - 1.0) <= 1e-12,
            "GmmSpec: class priors do not sum to 1");
  }
};

/// Gaussian with its factorizations cached.
class GaussianTerm {
 public:
  GaussianTerm(double log_weight, Vec mean, const Mat& cov)
      : log_weight_(log_weight), mean_(std::move(mean)), cov_(cov) {
    Eigen::LLT<Mat> llt(cov_);
    require(llt.info() == Eigen::Success, "covariance not positive definite");
    chol_ = llt.matrixL();
    precision_ = llt.solve(Mat::Identity(cov_.rows(), cov_.cols()));
    log_det_ = 2.0 * chol_.diagonal().array().log().sum();
  }

  double log_weight() const { return log_weight_; }
  const Vec& mean() const { return mean_; }
  const Mat& cov() const { return cov_; }
  const Mat& chol() const { return chol_; }
  const Mat& precision() const { return precision_; }

  double log_density(const Vec& x) const {
    const Vec diff = x - mean_;
    const double d = static_cast<double>(mean_.size());
    return -0.5 * (d * std::log(2.0 * std::numbers::pi) + log_det_ +
                   diff.dot(precision_ * diff));
  }

  // d/dx log N(x; mean, cov)
  Vec log_density_gradient(const Vec& x) const {
    return -(precision_ * (x - mean_));
  }

 private:
  double log_weight_;
  Vec mean_;
  Mat cov_;
  Mat chol_;
  Mat precision_;
  double log_det_ = 0.0;
};

inline double log_sum_exp(const Vec& v) {
  const double m = v.maxCoeff();
  if (!std::isfinite(m)) return m;
  return m + std::log((v.array() - m).exp().sum());
}

/// Precomputed form of a GmmSpec for repeated density evaluation.
class CompiledGmm {
 public:
  explicit CompiledGmm(GmmSpec spec) : spec_(std::move(spec)) {
    spec_.validate();
    terms_.resize(spec_.classes.size());
    log_priors_.resize(spec_.num_classes());
    for (std::size_t y = 0; y < spec_.classes.size(); ++y) {
      const auto& c = spec_.classes[y];
      log_priors_[static_cast<Eigen::Index>(y)] = std::log(c.prior);
      for (const auto& k : c.components) {
        terms_[y].emplace_back(std::log(k.weight), k.mean, k.cov);
      }
    }
  }

  const GmmSpec& spec() const { return spec_; }
  int dim() const { return spec_.dim; }
  int num_classes() const { return spec_.num_classes(); }
  const std::vector<GaussianTerm>& terms(int y) const { return terms_[y]; }
  const Vec& log_priors() const { return log_priors_; }

  double class_log_density(int y, const Vec& x) const {
    check_class(y);
    require(x.size() == spec_.dim, "class density: dimension mismatch");
    const auto& ts = terms_[y];
    Vec lp(static_cast<Eigen::Index>(ts.size()));
    for (std::size_t k = 0; k < ts.size(); ++k) {
      lp[static_cast<Eigen::Index>(k)] = ts[k].log_weight() + ts[k].log_density(x);
    }
    return log_sum_exp(lp);
  }

  // d/dx log p(x | y)
  Vec class_log_density_gradient(int y, const Vec& x) const {
    check_class(y);
    const auto& ts = terms_[y];
    Vec lp(static_cast<Eigen::Index>(ts.size()));
    for (std::size_t k = 0; k < ts.size(); ++k) {
      lp[static_cast<Eigen::Index>(k)] = ts[k].log_weight() + ts[k].log_density(x);
    }
    const double norm = log_sum_exp(lp);
    Vec g = Vec::Zero(spec_.dim);
    for (std::size_t k = 0; k < ts.size(); ++k) {
      const double r = std::exp(lp[static_cast<Eigen::Index>(k)] - norm);
      if (r > 0.0) g += r * ts[k].log_density_gradient(x);
    }
    return g;
  }

  // log(pi_y p(x | y)) for every class.
  Vec log_joint(const Vec& x) const {
    Vec out(spec_.num_classes());
    for (int y = 0; y < spec_.num_classes(); ++y) {
      out[y] = log_priors_[y] + class_log_density(y, x);
    }
    return out;
  }

  void check_class(int y) const {
    if (y < 0 || y >= spec_.num_classes()) {
      throw InvalidArgument("class index " + std::to_string(y) +
                            " out of range");
    }
  }

 private:
  GmmSpec spec_;
  std::vector<std::vector<GaussianTerm>> terms_;
  Vec log_priors_;
};

/// sum_k w_{y,k} N(x; mu_{y,k}, Sigma_{y,k})
inline double class_density(const GmmSpec& spec, int y, const Vec& x) {
  return std::exp(CompiledGmm(spec).class_log_density(y, x));
}

/// Points stored row-major as an n x d matrix.
struct LabeledDataset {
  Mat points;
  std::vector<int> labels;
  std::uint64_t seed = 0;

  Eigen::Index size() const { return points.rows(); }
  Eigen::Index dim() const { return points.cols(); }
  Vec point(Eigen::Index i) const { return points.row(i).transpose(); }
};

namespace detail {

inline int draw_index(Rng& rng, const std::vector<double>& weights) {
  const double u = rng.uniform();
  double acc = 0.0;
  int last_positive = 0;
  for (std::size_t i = 0; i < weights.size(); ++i) {
    if (weights[i] <= 0.0) continue;
    last_positive = static_cast<int>(i);
    acc += weights[i];
    if (u < acc) return static_cast<int>(i);
  }
  return last_positive;
}

}  // namespace detail

/// Draws n labeled points. Point i uses its own RNG stream derived from
/// (seed, i), so the result is identical for any thread count.
inline LabeledDataset sample_dataset(const GmmSpec& spec, std::size_t n,
                                     std::uint64_t seed) {
  require(n >= 1, "sample_dataset: n must be at least 1");
  const CompiledGmm gmm(spec);
  std::vector<double> priors;
  for (const auto& c : spec.classes) priors.push_back(c.prior);
  std::vector<std::vector<double>> weights;
  for (const auto& c : spec.classes) {
    std::vector<double> w;
    for (const auto& k : c.components) w.push_back(k.weight);
    weights.push_back(std::move(w));
  }

  LabeledDataset ds;
  ds.seed = seed;
  ds.points.resize(static_cast<Eigen::Index>(n), spec.dim);
  ds.labels.resize(n);
  parallel_for(n, [&](std::size_t i) {
    Rng rng(derive_seed(seed, "dataset-point", i));
    const int y = detail::draw_index(rng, priors);
    const int k = detail::draw_index(rng, weights[y]);
    const auto& term = gmm.terms(y)[k];
    const Vec z = rng.normal_vector(spec.dim);
    ds.points.row(static_cast<Eigen::Index>(i)) =
        (term.mean() + term.chol() * z).transpose();
    ds.labels[i] = y;
  });
  return ds;
}

/// Draws n points from a single class.
inline Mat sample_class(const GmmSpec& spec, int y, std::size_t n,
                        std::uint64_t seed) {
  GmmSpec single = spec;
  require(y >= 0 && y < spec.num_classes(), "sample_class: bad class");
  single.classes = {spec.classes[y]};
  single.classes[0].prior = 1.0;
  return sample_dataset(single, n, seed).points;
}

/// Default two-class benchmark. Each class is two Gaussians, wide in the first
/// coordinate and thin (spread 0.006) in the second. Class 0 occupies a middle
/// stripe at height 0.15; class 1 has one stripe 0.06 below it on the left and
/// one 0.06 above it on the right, further out in the first coordinate. Clean
/// points separate perfectly through the thin coordinate, which forward noise
/// wipes out early, while the first coordinate stays partially informative
/// deep into the forward process.
inline GmmSpec default_two_class_spec() {
  constexpr double kCentre = 0.15;
  constexpr double kShift = 0.06;
  constexpr double kThinVar = 0.006 * 0.006;
  constexpr double kWideVar = 0.8;
  GmmSpec spec;
  spec.dim = 2;
  auto component = [&](double x, double y) {
    Component c;
    c.weight = 0.5;
    c.mean = Vec(2);
    c.mean << x, y;
    c.cov = Mat::Zero(2, 2);
    c.cov(0, 0) = kWideVar;
    c.cov(1, 1) = kThinVar;
    return c;
  };
  ClassSpec c0{0.5, {component(-0.7, kCentre), component(0.7, kCentre)}};
  ClassSpec c1{0.5, {component(-3.5, kCentre - kShift), component(3.5, kCentre + kShift)}};
  spec.classes = {c0, c1};
  return spec;
}

/// Three balanced classes laid out like the two-class benchmark: a coarse
/// first coordinate plus a thin per-class offset in the second.
inline GmmSpec default_three_class_spec() {
  constexpr double kThinVar = 0.012 * 0.012;
  constexpr double kWideVar = 0.25;
  GmmSpec spec;
  spec.dim = 2;
  const double offsets[3] = {1.12, 1.0, 0.88};
  const double centres[3][2] = {{-2.0, -1.0}, {-0.4, 0.4}, {1.0, 2.0}};
  for (int y = 0; y < 3; ++y) {
    ClassSpec c;
    c.prior = 1.0 / 3.0;
    for (int k = 0; k < 2; ++k) {
      Component comp;
      comp.weight = 0.5;
      comp.mean = Vec(2);
      comp.mean << centres[y][k], offsets[y];
      comp.cov = Mat::Zero(2, 2);
      comp.cov(0, 0) = kWideVar;
      comp.cov(1, 1) = kThinVar;
      c.components.push_back(comp);
    }
    spec.classes.push_back(c);
  }
  // Priors of 1/3 do not sum to exactly 1 in binary floating point.
  spec.classes[2].prior = 1.0 - spec.classes[0].prior - spec.classes[1].prior;
  return spec;
}

}  // namespace guidelab

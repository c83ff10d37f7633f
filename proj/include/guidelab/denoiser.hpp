#pragma once

#include <cmath>
#include <memory>
#include <vector>

#include "guidelab/core.hpp"
#include "guidelab/schedule.hpp"
#include "guidelab/synthdata.hpp"

namespace guidelab {

// How the x0-prediction Jacobian is formed: exact, or with the noise
// predictor treated as a constant (x0_hat = x_t / sqrt(abar) - const).
enum class JacobianMode { full, stop_gradient };

/// Exact optimal denoiser for a known Gaussian mixture. The class labels are
/// pooled away: the mixture has one component per (class, component) pair
/// with weight pi_y w_{y,k}.
class AnalyticDenoiser {
 public:
  AnalyticDenoiser(const GmmSpec& spec, Schedule schedule)
      : schedule_(std::move(schedule)), dim_(spec.dim) {
    spec.validate();
    for (const auto& c : spec.classes) {
      for (const auto& k : c.components) {
        const double w = c.prior * k.weight;
        if (w <= 0.0) continue;
        Eigen::SelfAdjointEigenSolver<Mat> es(k.cov);
        Pooled p;
        p.log_weight = std::log(w);
        p.mean = k.mean;
        p.basis = es.eigenvectors();
        p.eigenvalues = es.eigenvalues().cwiseMax(kEigenFloor);
        components_.push_back(std::move(p));
      }
    }
    double total = 0.0;
    for (const auto& p : components_) total += std::exp(p.log_weight);
    require(std::abs(total - 1.0) <= 1e-9, "denoiser: pooled weights != 1");
  }

  const Schedule& schedule() const { return schedule_; }
  int dim() const { return dim_; }

  Vec pooled_mean() const {
    Vec m = Vec::Zero(dim_);
    for (const auto& p : components_) m += std::exp(p.log_weight) * p.mean;
    return m;
  }

  /// E[x0 | x_t] under the pooled mixture.
  Vec posterior_mean_x0(const Vec& xt, int t) const {
    return evaluate(xt, t, false).mean;
  }

  /// Noise prediction consistent with the posterior mean:
  /// (x_t - sqrt(abar) E[x0|x_t]) / sqrt(1 - abar).
  Vec epsilon(const Vec& xt, int t) const {
    const double abar = schedule_.alpha_bar(t);
    schedule_.check_step(t);
    require(abar < 1.0, "epsilon: undefined where alpha_bar == 1");
    return (xt - std::sqrt(abar) * posterior_mean_x0(xt, t)) /
           std::sqrt(1.0 - abar);
  }

  /// One-step clean estimate from the noise prediction.
  Vec x0_prediction(const Vec& xt, int t) const {
    const double abar = schedule_.alpha_bar(t);
    const Vec eps = epsilon(xt, t);
    return xt / std::sqrt(abar) - (std::sqrt(1.0 - abar) / std::sqrt(abar)) * eps;
  }

  /// d x0_hat / d x_t (rows index x0_hat, columns index x_t).
  Mat x0_jacobian(const Vec& xt, int t,
                  JacobianMode mode = JacobianMode::full) const {
    schedule_.check_step(t, 0);
    if (mode == JacobianMode::stop_gradient) {
      return Mat::Identity(dim_, dim_) / schedule_.sqrt_alpha_bar(t);
    }
    return evaluate(xt, t, true).jacobian;
  }

  struct Evaluation {
    Vec mean;
    Mat jacobian;
  };

  // Posterior mean and, optionally, its exact Jacobian. Per component k with
  // marginal covariance C_k = abar S_k + (1 - abar) I:
  //   m_k = mu_k + G_k (x - sqrt(abar) mu_k),  G_k = sqrt(abar) S_k C_k^-1
  //   r_k ∝ w_k N(x; sqrt(abar) mu_k, C_k)
  //   J = sum_k r_k G_k + sum_k r_k (m_k - mean)(s_k - s_bar)^T
  // where s_k = -C_k^-1 (x - sqrt(abar) mu_k) is the component score.
  Evaluation evaluate(const Vec& xt, int t, bool with_jacobian) const {
    require(xt.size() == dim_, "denoiser: dimension mismatch");
    schedule_.check_step(t, 0);
    const double abar = schedule_.alpha_bar(t);
    const double sa = std::sqrt(abar);
    const std::size_t n = components_.size();

    Vec log_r(static_cast<Eigen::Index>(n));
    std::vector<Vec> means(n), scores(n);
    std::vector<Mat> gains(with_jacobian ? n : 0);
    for (std::size_t k = 0; k < n; ++k) {
      const auto& p = components_[k];
      const Vec marginal =
          (abar * p.eigenvalues.array() + (1.0 - abar)).max(kEigenFloor).matrix();
      const Vec diff_rot = p.basis.transpose() * (xt - sa * p.mean);
      const Vec gain_diag =
          (sa * p.eigenvalues.array() / marginal.array()).matrix();
      means[k] = p.mean + p.basis * gain_diag.cwiseProduct(diff_rot);
      const Vec scaled = diff_rot.cwiseQuotient(marginal);
      scores[k] = -(p.basis * scaled);
      log_r[static_cast<Eigen::Index>(k)] =
          p.log_weight - 0.5 * marginal.array().log().sum() -
          0.5 * diff_rot.dot(scaled);
      if (with_jacobian) {
        gains[k] = p.basis * gain_diag.asDiagonal() * p.basis.transpose();
      }
    }
    const double norm = log_sum_exp(log_r);
    Vec r = (log_r.array() - norm).exp().matrix();

    Evaluation out;
    out.mean = Vec::Zero(dim_);
    for (std::size_t k = 0; k < n; ++k) {
      out.mean += r[static_cast<Eigen::Index>(k)] * means[k];
    }
    if (with_jacobian) {
      Vec score_bar = Vec::Zero(dim_);
      for (std::size_t k = 0; k < n; ++k) {
        score_bar += r[static_cast<Eigen::Index>(k)] * scores[k];
      }
      out.jacobian = Mat::Zero(dim_, dim_);
      for (std::size_t k = 0; k < n; ++k) {
        const double rk = r[static_cast<Eigen::Index>(k)];
        if (rk == 0.0) continue;
        out.jacobian += rk * gains[k];
        out.jacobian +=
            rk * (means[k] - out.mean) * (scores[k] - score_bar).transpose();
      }
    }
    return out;
  }

 private:
  static constexpr double kEigenFloor = 1e-12;

  struct Pooled {
    double log_weight;
    Vec mean;
    Mat basis;
    Vec eigenvalues;
  };

  Schedule schedule_;
  int dim_;
  std::vector<Pooled> components_;
};

}  // namespace guidelab

#pragma once

#include <cmath>
#include <string>
#include <utility>
#include <vector>

#include "guidelab/core.hpp"

namespace guidelab {

// Which variance the reverse step uses: beta_t, or the true-posterior
// variance beta_tilde_t = beta_t (1 - abar_{t-1}) / (1 - abar_t).
enum class PosteriorVariance { beta, beta_tilde };

inline std::string to_string(PosteriorVariance m) {
  return m == PosteriorVariance::beta ? "beta" : "beta_tilde";
}

inline PosteriorVariance posterior_variance_from_string(const std::string& s) {
  if (s == "beta") return PosteriorVariance::beta;
  if (s == "beta_tilde") return PosteriorVariance::beta_tilde;
  throw InvalidArgument("unknown posterior variance mode '" + s + "'");
}

struct ReverseCoefficients {
  double mean_coeff_x;    // 1 / sqrt(alpha_t)
  double mean_coeff_eps;  // beta_t / (sqrt(alpha_t) sqrt(1 - abar_t))
  double sigma_sq;        // Sigma_t
};

/// Discrete diffusion time axis. Steps are indexed 1..T; index 0 stands for
/// clean data (abar_0 = 1). Immutable once built.
class Schedule {
 public:
  /// Arithmetic progression of betas from beta_start to beta_end inclusive.
  static Schedule linear(int steps, double beta_start, double beta_end,
                         PosteriorVariance mode = PosteriorVariance::beta) {
    require(steps >= 2, "schedule needs at least 2 steps");
    require(beta_start > 0.0 && beta_start < 1.0 && beta_end > 0.0 &&
                beta_end < 1.0,
            "betas must lie in (0, 1)");
    require(beta_start <= beta_end, "beta_start must not exceed beta_end");
    std::vector<double> betas(static_cast<std::size_t>(steps));
    for (int i = 0; i < steps; ++i) {
      betas[i] = beta_start +
                 (beta_end - beta_start) * static_cast<double>(i) / (steps - 1);
    }
    betas.back() = beta_end;
    return Schedule(std::move(betas), mode);
  }

  /// Arbitrary betas in [0, 1). Zero betas are allowed here so degenerate
  /// no-noise schedules can be built for testing.
  static Schedule from_betas(std::vector<double> betas,
                             PosteriorVariance mode = PosteriorVariance::beta) {
    require(betas.size() >= 2, "schedule needs at least 2 steps");
    for (double b : betas) {
      require(b >= 0.0 && b < 1.0 && std::isfinite(b),
              "betas must lie in [0, 1)");
    }
    return Schedule(std::move(betas), mode);
  }

  int steps() const { return static_cast<int>(betas_.size()); }
  PosteriorVariance posterior_variance() const { return mode_; }

  double beta(int t) const { return betas_[index(t)]; }
  double alpha(int t) const { return alphas_[index(t)]; }
  // Defined for t = 0 (returns 1).
  double alpha_bar(int t) const {
    check_step(t, 0);
    return t == 0 ? 1.0 : alpha_bars_[t - 1];
  }
  double sqrt_alpha_bar(int t) const { return std::sqrt(alpha_bar(t)); }
  double sqrt_one_minus_alpha_bar(int t) const {
    return std::sqrt(1.0 - alpha_bar(t));
  }

  const std::vector<double>& betas() const { return betas_; }
  const std::vector<double>& alphas() const { return alphas_; }
  const std::vector<double>& alpha_bars() const { return alpha_bars_; }

  void check_step(int t, int lo = 1) const {
    if (t < lo || t > steps()) {
      throw InvalidArgument("step " + std::to_string(t) + " outside [" +
                            std::to_string(lo) + ", " +
                            std::to_string(steps()) + "]");
    }
  }

 private:
  Schedule(std::vector<double> betas, PosteriorVariance mode)
      : betas_(std::move(betas)), mode_(mode) {
    alphas_.resize(betas_.size());
    alpha_bars_.resize(betas_.size());
    double running = 1.0;
    for (std::size_t i = 0; i < betas_.size(); ++i) {
      alphas_[i] = 1.0 - betas_[i];
      running *= alphas_[i];
      alpha_bars_[i] = running;
    }
  }

  std::size_t index(int t) const {
    check_step(t);
    return static_cast<std::size_t>(t - 1);
  }

  std::vector<double> betas_;
  std::vector<double> alphas_;
  std::vector<double> alpha_bars_;
  PosteriorVariance mode_;
};

/// Reparameterized draw from q(x_t | x_0): sqrt(abar_t) x0 + sqrt(1-abar_t) eps.
/// t = 0 returns x0 unchanged.
inline Vec forward_sample(const Schedule& schedule, const Vec& x0, int t,
                          const Vec& eps) {
  schedule.check_step(t, 0);
  require(x0.size() == eps.size(), "forward_sample: dimension mismatch");
  if (t == 0) return x0;
  return schedule.sqrt_alpha_bar(t) * x0 +
         schedule.sqrt_one_minus_alpha_bar(t) * eps;
}

/// Adjacent noisy points (x_t, x_{t-1}) built from the same noise vector.
inline std::pair<Vec, Vec> coupled_pair(const Schedule& schedule, const Vec& x0,
                                        int t, const Vec& eps) {
  require(t >= 2 && t <= schedule.steps(), "coupled_pair: t must be in [2, T]");
  return {forward_sample(schedule, x0, t, eps),
          forward_sample(schedule, x0, t - 1, eps)};
}

inline ReverseCoefficients reverse_coefficients(const Schedule& schedule,
                                                int t) {
  schedule.check_step(t);
  const double beta = schedule.beta(t);
  const double sqrt_alpha = std::sqrt(schedule.alpha(t));
  const double one_minus_abar = 1.0 - schedule.alpha_bar(t);
  ReverseCoefficients c{};
  c.mean_coeff_x = 1.0 / sqrt_alpha;
  c.mean_coeff_eps =
      one_minus_abar > 0.0 ? beta / (sqrt_alpha * std::sqrt(one_minus_abar))
                           : 0.0;
  if (schedule.posterior_variance() == PosteriorVariance::beta || t == 1 ||
      one_minus_abar <= 0.0) {
    c.sigma_sq = beta;
  } else {
    c.sigma_sq = beta * (1.0 - schedule.alpha_bar(t - 1)) / one_minus_abar;
  }
  return c;
}

}  // namespace guidelab

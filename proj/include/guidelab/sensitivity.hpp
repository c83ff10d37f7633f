#pragma once

#include <cmath>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "guidelab/classifier.hpp"
#include "guidelab/core.hpp"
#include "guidelab/denoiser.hpp"
#include "guidelab/guidance.hpp"
#include "guidelab/parallel.hpp"
#include "guidelab/rng.hpp"
#include "guidelab/schedule.hpp"

namespace guidelab {

enum class SensitivityMetric { logit, gradient };

/// ||a - b|| / ||xa - xb||, or nothing when the inputs coincide.
inline std::optional<double> difference_ratio(const Vec& a, const Vec& b,
                                              const Vec& xa, const Vec& xb) {
  const double den = (xa - xb).norm();
  if (!(den > 0.0)) return std::nullopt;
  return (a - b).norm() / den;
}

/// Logit sensitivity for any logit map f.
template <typename LogitFn>
std::optional<double> logit_sensitivity(LogitFn&& f, const Vec& xt,
                                        const Vec& xprev) {
  return difference_ratio(f(xt), f(xprev), xt, xprev);
}

inline std::optional<double> logit_sensitivity(const ClassifierHandle& h,
                                               const Vec& xt,
                                               const Vec& xprev) {
  return logit_sensitivity([&](const Vec& x) { return h.logits(x); }, xt,
                           xprev);
}

/// Gradient sensitivity for any gradient map grad(x, t).
template <typename GradFn>
std::optional<double> gradient_sensitivity(GradFn&& grad, const Vec& xt,
                                           const Vec& xprev, int t) {
  return difference_ratio(grad(xt, t), grad(xprev, t - 1), xt, xprev);
}

/// Gradient sensitivity of log p(y | .) along the chosen guidance path for
/// the coupled pair (x_t, x_{t-1}).
inline std::optional<double> gradient_sensitivity(
    const ClassifierHandle& h, const AnalyticDenoiser& dn, const Vec& xt,
    const Vec& xprev, int t, int y, GradientPath path) {
  return gradient_sensitivity(
      [&](const Vec& x, int s) {
        return guided_log_prob_gradient(dn, h, x, s, y, path);
      },
      xt, xprev, t);
}

/// x_0..x_T of one coupled trajectory: every x_s shares the same eps.
inline std::vector<Vec> coupled_trajectory(const Schedule& sch, const Vec& x0,
                                           const Vec& eps) {
  std::vector<Vec> out;
  out.reserve(static_cast<std::size_t>(sch.steps()) + 1);
  for (int s = 0; s <= sch.steps(); ++s) out.push_back(forward_sample(sch, x0, s, eps));
  return out;
}

/// Walks t = T..1 over a coupled trajectory, feeding each gradient through a
/// fresh stabilizer. Entry t (2..T) holds ||nu_{t-1} - nu_t|| / ||x_{t-1} - x_t||;
/// entries 0 and 1 are unused.
template <typename GradFn>
std::vector<std::optional<double>> stabilized_gradient_sensitivity(
    GradFn&& grad, const std::vector<Vec>& trajectory,
    const StabilizerConfig& stabilizer) {
  const int steps = static_cast<int>(trajectory.size()) - 1;
  require(steps >= 2, "stabilized sensitivity: trajectory too short");
  std::vector<std::optional<double>> out(static_cast<std::size_t>(steps) + 1);
  StabilizerState state = StabilizerState::zeros(trajectory[0].size());
  Vec prev_nu = stabilize(state, stabilizer, grad(trajectory[steps], steps));
  for (int t = steps; t >= 2; --t) {
    Vec nu = stabilize(state, stabilizer, grad(trajectory[t - 1], t - 1));
    out[static_cast<std::size_t>(t)] =
        difference_ratio(nu, prev_nu, trajectory[t - 1], trajectory[t]);
    prev_nu = std::move(nu);
  }
  return out;
}

inline std::vector<std::optional<double>> stabilized_gradient_sensitivity(
    const ClassifierHandle& h, const AnalyticDenoiser& dn,
    const std::vector<Vec>& trajectory, int y, GradientPath path,
    const StabilizerConfig& stabilizer) {
  return stabilized_gradient_sensitivity(
      [&](const Vec& x, int s) {
        return guided_log_prob_gradient(dn, h, x, s, y, path);
      },
      trajectory, stabilizer);
}

struct CurveSpec {
  SensitivityMetric metric = SensitivityMetric::gradient;
  GradientPath path;
  std::optional<StabilizerConfig> stabilizer;  // gradient metric only

  std::string metric_tag() const {
    if (metric == SensitivityMetric::logit) return "S_l";
    if (stabilizer) return "S_g_stabilized";
    return path.kind == GradientPathKind::x0pred ? "S_g_hat" : "S_g";
  }
  std::string stabilizer_tag() const {
    return stabilizer ? stabilizer->tag() : "none";
  }
};

/// Per-t summary over a dataset; t runs over [2, T].
struct SensitivityCurve {
  std::string metric;
  std::string path;
  std::string stabilizer;
  std::vector<int> t;
  std::vector<double> mean;
  std::vector<double> std;
  std::vector<long> count;
  long undefined = 0;     // zero-denominator pairs excluded from the stats
  bool degenerate = false;  // no defined pair at all

  // Mean of the per-t means over t in [lo, hi].
  double average(int lo, int hi) const {
    double s = 0.0;
    int n = 0;
    for (std::size_t i = 0; i < t.size(); ++i) {
      if (t[i] >= lo && t[i] <= hi && count[i] > 0) {
        s += mean[i];
        ++n;
      }
    }
    return n > 0 ? s / n : std::numeric_limits<double>::quiet_NaN();
  }

  double mean_at(int step) const {
    for (std::size_t i = 0; i < t.size(); ++i) {
      if (t[i] == step) return mean[i];
    }
    throw InvalidArgument("curve has no entry for t=" + std::to_string(step));
  }
};

/// Sensitivity curve over a labeled dataset. Sample i gets one eps drawn from
/// (seed, i) shared across all t, and its true label as the target class.
inline SensitivityCurve sensitivity_curve(const ClassifierHandle& h,
                                          const AnalyticDenoiser& dn,
                                          const LabeledDataset& data,
                                          const CurveSpec& spec,
                                          std::uint64_t seed) {
  require(data.size() > 0, "sensitivity curve: empty dataset");
  require(spec.metric == SensitivityMetric::gradient || !spec.stabilizer,
          "stabilizers apply to the gradient metric only");
  const Schedule& sch = dn.schedule();
  const int steps = sch.steps();
  const auto n = static_cast<std::size_t>(data.size());
  const auto width = static_cast<std::size_t>(steps) + 1;
  std::vector<double> values(n * width, 0.0);
  std::vector<unsigned char> defined(n * width, 0);

  parallel_for(n, [&](std::size_t i) {
    const Vec x0 = data.point(static_cast<Eigen::Index>(i));
    Rng rng(derive_seed(seed, "sensitivity-eps", i));
    const auto traj = coupled_trajectory(sch, x0, rng.normal_vector(x0.size()));
    const int y = data.labels[i];
    std::vector<std::optional<double>> row(width);
    if (spec.metric == SensitivityMetric::logit) {
      std::vector<Vec> f(width);
      for (int s = 1; s <= steps; ++s) f[s] = path_logits(dn, h, traj[s], s, spec.path);
      for (int s = 2; s <= steps; ++s) {
        row[s] = difference_ratio(f[s], f[s - 1], traj[s], traj[s - 1]);
      }
    } else {
      auto grad = [&](const Vec& x, int s) {
        return guided_log_prob_gradient(dn, h, x, s, y, spec.path);
      };
      if (spec.stabilizer) {
        row = stabilized_gradient_sensitivity(grad, traj, *spec.stabilizer);
      } else {
        std::vector<Vec> g(width);
        for (int s = 1; s <= steps; ++s) g[s] = grad(traj[s], s);
        for (int s = 2; s <= steps; ++s) {
          row[s] = difference_ratio(g[s], g[s - 1], traj[s], traj[s - 1]);
        }
      }
    }
    for (int s = 2; s <= steps; ++s) {
      if (row[s]) {
        values[i * width + s] = *row[s];
        defined[i * width + s] = 1;
      }
    }
  });

  SensitivityCurve c;
  c.metric = spec.metric_tag();
  c.path = to_string(spec.path);
  c.stabilizer = spec.stabilizer_tag();
  for (int s = 2; s <= steps; ++s) {
    double sum = 0.0, sq = 0.0;
    long cnt = 0;
    for (std::size_t i = 0; i < n; ++i) {
      if (!defined[i * width + s]) {
        ++c.undefined;
        continue;
      }
      const double v = values[i * width + s];
      sum += v;
      sq += v * v;
      ++cnt;
    }
    const double mean = cnt > 0 ? sum / cnt : std::numeric_limits<double>::quiet_NaN();
    const double var = cnt > 0 ? std::max(0.0, sq / cnt - mean * mean)
                               : std::numeric_limits<double>::quiet_NaN();
    c.t.push_back(s);
    c.mean.push_back(mean);
    c.std.push_back(std::sqrt(var));
    c.count.push_back(cnt);
  }
  c.degenerate = c.undefined == static_cast<long>(n) * (steps - 1);
  return c;
}

}  // namespace guidelab

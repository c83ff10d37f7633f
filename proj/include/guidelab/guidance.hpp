#pragma once

#include <cmath>
#include <cstdint>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "guidelab/classifier.hpp"
#include "guidelab/core.hpp"
#include "guidelab/denoiser.hpp"
#include "guidelab/parallel.hpp"
#include "guidelab/rng.hpp"
#include "guidelab/schedule.hpp"

namespace guidelab {

enum class StabilizerKind { identity, ema, adam };

struct StabilizerConfig {
  StabilizerKind kind = StabilizerKind::identity;
  double beta = 0.0;      // ema momentum
  double beta1 = 0.9;     // adam first moment
  double beta2 = 0.999;   // adam second moment
  double epsilon = 1e-8;  // adam denominator floor

  static StabilizerConfig identity() { return {}; }
  static StabilizerConfig ema(double beta) {
    StabilizerConfig c;
    c.kind = StabilizerKind::ema;
    c.beta = beta;
    c.validate();
    return c;
  }
  static StabilizerConfig adam(double epsilon = 1e-8) {
    StabilizerConfig c;
    c.kind = StabilizerKind::adam;
    c.epsilon = epsilon;
    c.validate();
    return c;
  }

  void validate() const {
    require(beta >= 0.0 && beta < 1.0, "ema beta must lie in [0, 1)");
    require(beta1 >= 0.0 && beta1 < 1.0 && beta2 >= 0.0 && beta2 < 1.0,
            "adam betas must lie in [0, 1)");
    require(epsilon > 0.0, "adam epsilon must be positive");
  }

  std::string tag() const {
    std::ostringstream os;
    switch (kind) {
      case StabilizerKind::identity: return "identity";
      case StabilizerKind::ema: os << "ema(" << beta << ")"; return os.str();
      case StabilizerKind::adam: return "adam";
    }
    return "?";
  }
};

/// Running moments of one chain. Both start at zero and are never
/// bias-corrected, so early outputs are pulled toward zero.
struct StabilizerState {
  Vec first;
  Vec second;
  long steps = 0;

  static StabilizerState zeros(Eigen::Index d) {
    return {Vec::Zero(d), Vec::Zero(d), 0};
  }
};

/// Advances the state with gradient g and returns the stabilized vector.
///   ema:  nu = beta nu_prev + (1 - beta) g
///   adam: nu = m / (sqrt(v) + eps), m and v un-debiased EMAs of g and g^2
inline Vec stabilize(StabilizerState& state, const StabilizerConfig& cfg,
                     const Vec& g) {
  switch (cfg.kind) {
    case StabilizerKind::identity:
      return g;
    case StabilizerKind::ema:
      require(state.first.size() == g.size(), "stabilize: dimension mismatch");
      state.first = cfg.beta * state.first + (1.0 - cfg.beta) * g;
      ++state.steps;
      return state.first;
    case StabilizerKind::adam:
      require(state.first.size() == g.size() && state.second.size() == g.size(),
              "stabilize: dimension mismatch");
      state.first = cfg.beta1 * state.first + (1.0 - cfg.beta1) * g;
      state.second =
          cfg.beta2 * state.second + (1.0 - cfg.beta2) * g.cwiseProduct(g);
      ++state.steps;
      return (state.first.array() / (state.second.array().sqrt() + cfg.epsilon))
          .matrix();
  }
  return g;
}

struct GuidanceConfig {
  double scale = 0.0;
  GradientPath path;
  StabilizerConfig stabilizer;
  ClassifierHandle classifier;
  int target = 0;
  GradientObjective objective = GradientObjective::log_softmax;

  void validate() const {
    require(std::isfinite(scale) && scale >= 0.0,
            "guidance scale must be finite and >= 0");
    stabilizer.validate();
    require(target >= 0 && target < classifier.num_classes(),
            "guidance target class out of range");
  }
};

/// One unconditional ancestral step x_t -> x_{t-1}. z is only drawn for t > 1;
/// the final step is noiseless.
inline Vec reverse_step(const AnalyticDenoiser& dn, const Vec& xt, int t,
                        Rng& rng) {
  const auto c = reverse_coefficients(dn.schedule(), t);
  Vec mean = c.mean_coeff_x * xt;
  if (c.mean_coeff_eps != 0.0) mean -= c.mean_coeff_eps * dn.epsilon(xt, t);
  if (t > 1) mean += std::sqrt(c.sigma_sq) * rng.normal_vector(xt.size());
  return mean;
}

struct ChainTrace {
  std::vector<Vec> states;      // x'_{t-1} after each step, t = T..1
  std::vector<Vec> guidance;    // stabilized guidance vector at each t
};

struct ChainResult {
  Vec x0;
  bool diverged = false;
  int diverged_at = 0;  // step at which non-finite values appeared
  std::optional<ChainTrace> trace;
};

/// Guided ancestral sampling of one chain from x_T ~ N(0, I):
/// for t = T..1: g from the guidance path, nu = stabilize(g),
/// x_{t-1} = reverse_step(x_t), x'_{t-1} = x_{t-1} + s Sigma_t nu.
/// A non-finite state ends the chain and marks it diverged.
inline ChainResult guided_sample(const AnalyticDenoiser& dn,
                                 const GuidanceConfig& cfg, std::uint64_t seed,
                                 bool keep_trace = false) {
  cfg.validate();
  const Schedule& sch = dn.schedule();
  Rng rng(seed);
  Vec x = rng.normal_vector(dn.dim());
  StabilizerState state = StabilizerState::zeros(dn.dim());
  ChainResult out;
  if (keep_trace) out.trace.emplace();
  for (int t = sch.steps(); t >= 1; --t) {
    Vec nu;
    if (cfg.scale != 0.0) {
      const Vec g = guided_log_prob_gradient(dn, cfg.classifier, x, t,
                                             cfg.target, cfg.path, cfg.objective);
      nu = stabilize(state, cfg.stabilizer, g);
    }
    Vec next = reverse_step(dn, x, t, rng);
    if (cfg.scale != 0.0) {
      next += cfg.scale * reverse_coefficients(sch, t).sigma_sq * nu;
    }
    if (keep_trace) {
      out.trace->states.push_back(next);
      out.trace->guidance.push_back(cfg.scale != 0.0 ? nu : Vec::Zero(dn.dim()));
    }
    if (!next.allFinite()) {
      out.diverged = true;
      out.diverged_at = t;
      out.x0 = next;
      return out;
    }
    x = std::move(next);
  }
  out.x0 = std::move(x);
  return out;
}

struct SampleBatch {
  Mat samples;                  // n x d, rows of diverged chains are NaN
  std::vector<bool> diverged;
  std::vector<int> diverged_at;
  std::vector<std::uint64_t> seeds;
  std::size_t n_diverged = 0;

  Mat finite_samples() const {
    Mat out(static_cast<Eigen::Index>(diverged.size() - n_diverged),
            samples.cols());
    Eigen::Index r = 0;
    for (std::size_t i = 0; i < diverged.size(); ++i) {
      if (!diverged[i]) out.row(r++) = samples.row(static_cast<Eigen::Index>(i));
    }
    return out;
  }
};

inline std::uint64_t chain_seed(std::uint64_t seed, std::size_t chain) {
  return derive_seed(seed, "chain", chain);
}

/// n independent chains; chain i runs on the substream chain_seed(seed, i)
/// with its own stabilizer state.
inline SampleBatch sample_batch(const AnalyticDenoiser& dn,
                                const GuidanceConfig& cfg, std::size_t n,
                                std::uint64_t seed) {
  require(n >= 1, "sample_batch: n must be at least 1");
  cfg.validate();
  SampleBatch b;
  b.samples.resize(static_cast<Eigen::Index>(n), dn.dim());
  b.diverged.assign(n, false);
  b.diverged_at.assign(n, 0);
  b.seeds.resize(n);
  std::vector<unsigned char> div(n, 0);
  parallel_for(n, [&](std::size_t i) {
    b.seeds[i] = chain_seed(seed, i);
    const ChainResult r = guided_sample(dn, cfg, b.seeds[i]);
    b.samples.row(static_cast<Eigen::Index>(i)) = r.x0.transpose();
    div[i] = r.diverged ? 1 : 0;
    b.diverged_at[i] = r.diverged_at;
  });
  for (std::size_t i = 0; i < n; ++i) {
    b.diverged[i] = div[i] != 0;
    if (b.diverged[i]) {
      ++b.n_diverged;
      b.samples.row(static_cast<Eigen::Index>(i)).setConstant(
          std::numeric_limits<double>::quiet_NaN());
    }
  }
  return b;
}

}  // namespace guidelab

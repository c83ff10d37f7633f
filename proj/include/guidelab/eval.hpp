#pragma once

#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "guidelab/classifier.hpp"
#include "guidelab/core.hpp"
#include "guidelab/guidance.hpp"
#include "guidelab/synthdata.hpp"

namespace guidelab {

// Symmetric PSD square root through the eigendecomposition; negative
// round-off eigenvalues are clamped to zero.
inline Mat psd_sqrt(const Mat& m) {
  Eigen::SelfAdjointEigenSolver<Mat> es(0.5 * (m + m.transpose()));
  const Vec root = es.eigenvalues().cwiseMax(0.0).cwiseSqrt();
  return es.eigenvectors() * root.asDiagonal() * es.eigenvectors().transpose();
}

/// Squared Fréchet distance between two Gaussians:
/// ||mu_a - mu_b||^2 + Tr(S_a + S_b - 2 (S_a^1/2 S_b S_a^1/2)^1/2).
inline double frechet_distance_gaussian(const Vec& mean_a, const Mat& cov_a,
                                        const Vec& mean_b, const Mat& cov_b) {
  require(mean_a.size() == mean_b.size() && cov_a.rows() == mean_a.size() &&
              cov_b.rows() == mean_b.size(),
          "frechet distance: dimension mismatch");
  const Mat root_a = psd_sqrt(cov_a);
  const Mat cross = psd_sqrt(root_a * cov_b * root_a);
  const double d2 = (mean_a - mean_b).squaredNorm() + cov_a.trace() +
                    cov_b.trace() - 2.0 * cross.trace();
  return std::max(0.0, d2);
}

struct MomentFit {
  Vec mean;
  Mat cov;
};

// Sample mean and unbiased covariance of the rows, with a 1e-10 ridge.
inline MomentFit fit_moments(const Mat& points) {
  require(points.rows() >= points.cols() + 1,
          "frechet distance: need at least d+1 points per set");
  require(points.allFinite(), "frechet distance: non-finite points");
  MomentFit f;
  f.mean = points.colwise().mean().transpose();
  const Mat centered = points.rowwise() - f.mean.transpose();
  f.cov = centered.transpose() * centered /
          static_cast<double>(points.rows() - 1);
  f.cov.diagonal().array() += 1e-10;
  return f;
}

/// Fréchet distance between Gaussians fitted to two point sets (rows are
/// points). This is the FID formula applied directly to data coordinates.
inline double frechet_distance(const Mat& set_a, const Mat& set_b) {
  require(set_a.cols() == set_b.cols(), "frechet distance: dimension mismatch");
  const auto a = fit_moments(set_a);
  const auto b = fit_moments(set_b);
  return frechet_distance_gaussian(a.mean, a.cov, b.mean, b.cov);
}

struct MetricsReport {
  double target_accuracy_oracle = 0.0;
  double target_accuracy_guiding = 0.0;
  double fd = 0.0;
  double cfd = 0.0;
  std::size_t n_samples = 0;
  std::size_t n_diverged = 0;
  std::string config_hash;
};

/// Scores generated samples against the known data mixture: target accuracy
/// under the Bayes oracle and under the guiding classifier, Fréchet distance
/// to a fresh pooled reference draw of equal size, and to a fresh draw from
/// the target class only.
inline MetricsReport evaluate(const Mat& samples, const GmmSpec& spec,
                              int target, const ClassifierHandle& guiding,
                              std::uint64_t seed, std::size_t n_diverged = 0) {
  if (samples.rows() == 0) {
    throw Error("evaluate: no samples left (all chains diverged)");
  }
  require(target >= 0 && target < spec.num_classes(),
          "evaluate: target class out of range");
  const auto oracle = ClassifierHandle::oracle(spec);
  const auto n = static_cast<std::size_t>(samples.rows());
  std::vector<unsigned char> hit_oracle(n), hit_guiding(n);
  parallel_for(n, [&](std::size_t i) {
    const Vec x = samples.row(static_cast<Eigen::Index>(i)).transpose();
    hit_oracle[i] = oracle.predict(x) == target;
    hit_guiding[i] = guiding.predict(x) == target;
  });
  MetricsReport r;
  std::size_t a = 0, b = 0;
  for (std::size_t i = 0; i < n; ++i) {
    a += hit_oracle[i];
    b += hit_guiding[i];
  }
  r.target_accuracy_oracle = static_cast<double>(a) / static_cast<double>(n);
  r.target_accuracy_guiding = static_cast<double>(b) / static_cast<double>(n);
  const Mat pooled = sample_dataset(spec, n, derive_seed(seed, "reference-pooled")).points;
  const Mat cls = sample_class(spec, target, n, derive_seed(seed, "reference-class"));
  r.fd = frechet_distance(samples, pooled);
  r.cfd = frechet_distance(samples, cls);
  r.n_samples = n;
  r.n_diverged = n_diverged;
  return r;
}

struct SweepRow {
  double scale = 0.0;
  MetricsReport report;
  bool all_diverged = false;
};

/// One batch and report per guidance scale. Every scale reuses the same chain
/// seeds and reference seed, so the scale is the only thing that changes.
inline std::vector<SweepRow> sweep(const AnalyticDenoiser& dn,
                                   const GmmSpec& spec,
                                   const GuidanceConfig& base,
                                   const std::vector<double>& scales,
                                   std::size_t n, std::uint64_t seed) {
  require(!scales.empty(), "sweep: no scales");
  std::vector<SweepRow> rows;
  for (double s : scales) {
    GuidanceConfig cfg = base;
    cfg.scale = s;
    const SampleBatch batch =
        sample_batch(dn, cfg, n, derive_seed(seed, "sweep-chains"));
    SweepRow row;
    row.scale = s;
    if (batch.n_diverged == n) {
      row.all_diverged = true;
      row.report.n_diverged = n;
      row.report.target_accuracy_oracle = std::numeric_limits<double>::quiet_NaN();
      row.report.target_accuracy_guiding = std::numeric_limits<double>::quiet_NaN();
      row.report.fd = std::numeric_limits<double>::quiet_NaN();
      row.report.cfd = std::numeric_limits<double>::quiet_NaN();
    } else {
      row.report = evaluate(batch.finite_samples(), spec, base.target,
                            base.classifier, derive_seed(seed, "sweep-reference"),
                            batch.n_diverged);
    }
    rows.push_back(row);
  }
  return rows;
}

}  // namespace guidelab

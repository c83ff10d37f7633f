#pragma once

#include <functional>

#include "guidelab/synthdata.hpp"

namespace guidelab::testing {

inline Component gaussian(Vec mean, double var, double weight = 1.0) {
  Component c;
  c.weight = weight;
  c.cov = var * Mat::Identity(mean.size(), mean.size());
  c.mean = std::move(mean);
  return c;
}

inline Vec vec(std::initializer_list<double> v) {
  Vec out(static_cast<Eigen::Index>(v.size()));
  Eigen::Index i = 0;
  for (double x : v) out[i++] = x;
  return out;
}

// One class holding one isotropic Gaussian.
inline GmmSpec single_gaussian(Vec mean, double var) {
  GmmSpec s;
  s.dim = static_cast<int>(mean.size());
  s.classes = {ClassSpec{1.0, {gaussian(std::move(mean), var)}}};
  return s;
}

// Two classes of one isotropic Gaussian each, at +-mu on the first axis.
inline GmmSpec symmetric_pair(int dim, double mu, double var) {
  GmmSpec s;
  s.dim = dim;
  Vec a = Vec::Zero(dim), b = Vec::Zero(dim);
  a[0] = -mu;
  b[0] = mu;
  s.classes = {ClassSpec{0.5, {gaussian(a, var)}}, ClassSpec{0.5, {gaussian(b, var)}}};
  return s;
}

// Central differences of a scalar function, step h per coordinate.
inline Vec central_gradient(const std::function<double(const Vec&)>& f, const Vec& x,
                            double h = 1e-5) {
  Vec g(x.size());
  for (Eigen::Index i = 0; i < x.size(); ++i) {
    Vec a = x, b = x;
    a[i] += h;
    b[i] -= h;
    g[i] = (f(a) - f(b)) / (2 * h);
  }
  return g;
}

// Central-difference Jacobian of a vector function (rows: outputs).
inline Mat central_jacobian(const std::function<Vec(const Vec&)>& f, const Vec& x,
                            double h = 1e-5) {
  const Vec f0 = f(x);
  Mat J(f0.size(), x.size());
  for (Eigen::Index i = 0; i < x.size(); ++i) {
    Vec a = x, b = x;
    a[i] += h;
    b[i] -= h;
    J.col(i) = (f(a) - f(b)) / (2 * h);
  }
  return J;
}

inline double relative_error(const Vec& a, const Vec& b) {
  return (a - b).norm() / std::max(1e-8, std::max(a.norm(), b.norm()));
}

}  // namespace guidelab::testing

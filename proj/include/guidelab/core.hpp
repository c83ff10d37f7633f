#pragma once

#include <stdexcept>
#include <string>

#include <Eigen/Dense>

namespace guidelab {

using Vec = Eigen::VectorXd;
using Mat = Eigen::MatrixXd;

// Base for everything the library throws.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Malformed input: bad dimensions, out-of-range indices, invalid specs.
class InvalidArgument : public Error {
 public:
  using Error::Error;
};

// A numerical process produced non-finite values.
class DivergenceError : public Error {
 public:
  DivergenceError(const std::string& what, int step)
      : Error(what), step_(step) {}
  int step() const { return step_; }

 private:
  int step_;
};

inline void require(bool cond, const std::string& msg) {
  if (!cond) throw InvalidArgument(msg);
}

inline bool all_finite(const Vec& v) { return v.allFinite(); }

}  // namespace guidelab

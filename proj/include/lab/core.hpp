#pragma once

#include <Eigen/Dense>

#include <complex>
#include <functional>
#include <stdexcept>
#include <string>
#include <vector>

namespace lab {

using Vec = Eigen::VectorXd;
using Mat = Eigen::MatrixXd;
using cplx = std::complex<double>;
using CVec = Eigen::VectorXcd;
using CMat = Eigen::MatrixXcd;

inline constexpr const char* kVersion = "0.3.1";

// Error categories map onto CLI exit codes (config -> 2, divergence -> 3).
struct DomainError : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct PreconditionError : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct ConfigError : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct DivergenceError : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct NumericalError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Value, gradient and Hessian of a scalar field at one point.
struct ScalarJet {
  double v = 0;
  Vec g;
  Mat H;

  static ScalarJet constant(double c, int d) {
    return {c, Vec::Zero(d), Mat::Zero(d, d)};
  }
  // f(u) with f, f', f'' given at u = v.
  ScalarJet compose(double f, double df, double d2f) const {
    return {f, df * g, df * H + d2f * g * g.transpose()};
  }
  ScalarJet operator*(const ScalarJet& o) const {
    return {v * o.v, v * o.g + o.v * g,
            v * o.H + o.v * H + g * o.g.transpose() + o.g * g.transpose()};
  }
  ScalarJet operator+(const ScalarJet& o) const { return {v + o.v, g + o.g, H + o.H}; }
  ScalarJet scaled(double s) const { return {s * v, s * g, s * H}; }
};

// Smooth cutoff: 1 on [0, 1/4], 0 on [1/2, inf).
double cutoff(double t);

// Compactly supported bump exp(1 - 1/(1 - s)) for s = r^2 < 1, peak 1 at s = 0;
// returns value and derivatives with respect to s.
void bump_s(double s, double& f, double& df, double& d2f);

}  // namespace lab

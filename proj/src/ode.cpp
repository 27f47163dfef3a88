#include "lab/ode.hpp"

#include <algorithm>
#include <cmath>

namespace lab::ode {

namespace {
// Dormand-Prince tableau.
constexpr double c2 = 1.0 / 5, c3 = 3.0 / 10, c4 = 4.0 / 5, c5 = 8.0 / 9;
constexpr double a21 = 1.0 / 5;
constexpr double a31 = 3.0 / 40, a32 = 9.0 / 40;
constexpr double a41 = 44.0 / 45, a42 = -56.0 / 15, a43 = 32.0 / 9;
constexpr double a51 = 19372.0 / 6561, a52 = -25360.0 / 2187, a53 = 64448.0 / 6561,
                 a54 = -212.0 / 729;
constexpr double a61 = 9017.0 / 3168, a62 = -355.0 / 33, a63 = 46732.0 / 5247,
                 a64 = 49.0 / 176, a65 = -5103.0 / 18656;
constexpr double b1 = 35.0 / 384, b3 = 500.0 / 1113, b4 = 125.0 / 192,
                 b5 = -2187.0 / 6784, b6 = 11.0 / 84;
constexpr double e1 = 71.0 / 57600, e3 = -71.0 / 16695, e4 = 71.0 / 1920,
                 e5 = -17253.0 / 339200, e6 = 22.0 / 525, e7 = -1.0 / 40;
}  // namespace

StepResult dp45_step(const Rhs& f, double s, const Vec& y, double h, double atol,
                     double rtol) {
  Vec k1 = f(s, y);
  Vec k2 = f(s + c2 * h, y + h * a21 * k1);
  Vec k3 = f(s + c3 * h, y + h * (a31 * k1 + a32 * k2));
  Vec k4 = f(s + c4 * h, y + h * (a41 * k1 + a42 * k2 + a43 * k3));
  Vec k5 = f(s + c5 * h, y + h * (a51 * k1 + a52 * k2 + a53 * k3 + a54 * k4));
  Vec k6 = f(s + h, y + h * (a61 * k1 + a62 * k2 + a63 * k3 + a64 * k4 + a65 * k5));
  Vec y5 = y + h * (b1 * k1 + b3 * k3 + b4 * k4 + b5 * k5 + b6 * k6);
  Vec k7 = f(s + h, y5);
  Vec e = h * (e1 * k1 + e3 * k3 + e4 * k4 + e5 * k5 + e6 * k6 + e7 * k7);
  double err = 0;
  for (Eigen::Index i = 0; i < y.size(); ++i) {
    double sc = atol + rtol * std::max(std::abs(y[i]), std::abs(y5[i]));
    err = std::max(err, std::abs(e[i]) / sc);
  }
  return {y5, err};
}

Vec rk4_step(const Rhs& f, double s, const Vec& y, double h) {
  Vec k1 = f(s, y);
  Vec k2 = f(s + h / 2, y + h / 2 * k1);
  Vec k3 = f(s + h / 2, y + h / 2 * k2);
  Vec k4 = f(s + h, y + h * k3);
  return y + h / 6 * (k1 + 2 * k2 + 2 * k3 + k4);
}

double next_step(double h, double err) {
  double fac = err > 0 ? 0.9 * std::pow(err, -0.2) : 5.0;
  return h * std::clamp(fac, 0.2, 5.0);
}

Vec integrate(const Rhs& f, double s0, const Vec& y0, double s1, double tol,
              double hmax) {
  double dir = s1 >= s0 ? 1.0 : -1.0;
  double s = s0, h = dir * std::min(hmax, std::abs(s1 - s0));
  Vec y = y0;
  int guard = 0;
  while (dir * (s1 - s) > 1e-14 * std::max(1.0, std::abs(s1))) {
    if (dir * (s + h - s1) > 0) h = s1 - s;
    auto r = dp45_step(f, s, y, h, tol, tol);
    if (r.err <= 1) {
      s += h;
      y = r.y;
    }
    h = next_step(h, r.err);
    if (std::abs(h) > hmax) h = dir * hmax;
    if (std::abs(h) < 1e-14 || ++guard > 2000000)
      throw NumericalError("ode::integrate: step underflow");
  }
  return y;
}

}  // namespace lab::ode

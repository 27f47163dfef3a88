#pragma once

#include "lab/core.hpp"

namespace lab::ode {

using Rhs = std::function<Vec(double, const Vec&)>;

struct StepResult {
  Vec y;
  double err;  // scaled error norm, accept when <= 1
};

// One Dormand-Prince 5(4) step; err is the max-norm of the embedded error
// scaled by atol + rtol*|y|.
StepResult dp45_step(const Rhs& f, double s, const Vec& y, double h, double atol,
                     double rtol);

// Classical RK4 step, used where a fixed step is wanted.
Vec rk4_step(const Rhs& f, double s, const Vec& y, double h);

// Adaptive integration from s0 to s1, no events.
Vec integrate(const Rhs& f, double s0, const Vec& y0, double s1, double tol,
              double hmax = 0.1);

// Suggested next step from an error estimate.
double next_step(double h, double err);

}  // namespace lab::ode

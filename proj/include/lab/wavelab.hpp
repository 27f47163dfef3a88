#pragma once

#include "lab/beams.hpp"
#include "lab/lorgeo.hpp"

#include <array>
#include <optional>

namespace lab {

// box_g u + q u + a u^4 = F on (0, T) x N, u = f on the boundary, u = 0 for t < 0.
// box_g = |g|^{-1/2} d_j (|g|^{1/2} g^{jk} d_k).

// Lower-index metric g(t, x) as the solver sees it.
struct WaveMetric {
  int n = 1;
  std::function<Mat(const Vec&)> g;
  bool static_in_time = false;
};
WaveMetric wave_metric(const ProductMetric& m);

struct Diffeo {
  std::function<Vec(const Vec&)> map;
  std::function<Mat(const Vec&)> jacobian;
};
Diffeo identity_diffeo(int n);
// y -> y + shift * bump(|y - center|^2 / radius^2); identity off the ball.
Diffeo bump_diffeo(const Vec& center, double radius, const Vec& shift);
// 1+1: x -> x + amp * ramp((t - t_on) / rise) * (1 - x), moving the face x = 0
// once t > t_on.  amp * (ramp slope) / rise must stay well below the light speed.
Diffeo boundary_shift_diffeo(double amp, double t_on, double rise = 0.5);

WaveMetric pullback(const WaveMetric& m, const Diffeo& psi);
ScalarField pullback(const ScalarField& f, const Diffeo& psi);
// exp(-2 beta) g
WaveMetric conformal(const WaveMetric& m, const ScalarField& beta);

struct GridSpec {
  Domain domain;  // interval (1+1); box, or disk staircased in its bounding box (1+2)
  double h = 0.01;
  double dt = 0;
  double T = 1;
  double cfl = 0.5;
  double blowup_cap = 1e6;
};
// Largest characteristic coordinate speed of g over the grid and [0, T].
double max_speed(const WaveMetric& m, const GridSpec& grid);
// dt = cfl h / (c_max sqrt(n)); the sqrt(n) keeps the 1+2 leapfrog stable.
GridSpec make_grid(const WaveMetric& m, const Domain& d, double h, double T,
                   double cfl = 0.5);

// Boundary values f(face, t, x).  1+1: face 0 at the left end, 1 at the right.
// Box: face 2*axis + (0 lower, 1 upper).  Disk: face 0, the staircase boundary.
using BoundaryData = std::function<double(int, double, const Vec&)>;
BoundaryData zero_data();
// amp * bump((t - t0)^2 / width^2) on one face, times bump(|x - c|^2 / r^2) along
// the face when r > 0.
BoundaryData face_pulse(int face, double t0, double width, double amp, const Vec& c = {},
                        double r = 0);
BoundaryData sum(const std::vector<BoundaryData>& parts, const std::vector<double>& weights);

struct FaceTrace {
  std::vector<Vec> nodes;  // spatial points
  Mat f, neumann;          // rows: time levels, columns: nodes
};

struct DNSignal {
  std::vector<double> t;
  std::vector<FaceTrace> faces;
  // discrete L2 norm of the Neumann data over (0, T) x boundary
  double norm() const;
};
DNSignal operator-(const DNSignal& a, const DNSignal& b);
DNSignal operator*(const DNSignal& a, double s);
double relative_l2(const DNSignal& a, const DNSignal& ref);
double inner(const DNSignal& a, const DNSignal& b);

struct WaveField {
  std::vector<int> shape;  // nodes per axis
  Vec origin;
  double h = 0, dt = 0;
  std::vector<bool> inside;    // unknown (not Dirichlet, not masked) nodes
  std::vector<int> snap_step;  // time levels of the snapshots
  std::vector<Vec> snaps;
  Vec prev, last;              // final two levels
  Vec node(int k) const;
};

// Source F at time level n (values on all nodes, zero on non-interior ones).
using GridSource = std::function<void(int n, double t, const WaveField& layout, Vec& out)>;
GridSource field_source(const ScalarField& F);

struct SolveOptions {
  int snapshot_stride = 0;  // 0 keeps none
  GridSource source;
  bool record_energy = false;
};

struct WaveResult {
  WaveField field;
  DNSignal dn;
  std::vector<double> energy;  // E^{n+1/2}, static metrics without q
};

// Explicit leapfrog; a u^4 and q u at the current level.  In 1+1 the dt dx
// terms of a general metric make each step a tridiagonal solve.
WaveResult solve_semilinear(const WaveMetric& g, const ScalarField& q, const ScalarField& a,
                            const BoundaryData& f, const GridSpec& grid,
                            const SolveOptions& opt = {});
WaveResult solve_linear(const WaveMetric& g, const ScalarField& q, const BoundaryData& f,
                        const GridSpec& grid, const SolveOptions& opt = {});

// (Lambda(eps f) - Lambda(-eps f)) / (2 eps), checked against solve_linear.
DNSignal dn_linearized(const WaveMetric& g, const ScalarField& q, const ScalarField& a,
                       const BoundaryData& f, const GridSpec& grid, double eps = 1e-3,
                       double tol = 1e-6);

struct FourthOrderDN {
  DNSignal u4;
  double signal = 0;       // norm of u4
  double noise_floor = 0;  // eps-refinement difference plus a roundoff bound
  bool warning = false;    // noise floor above 10% of the signal
};
// (1 / (16 prod eps)) sum_sigma (prod sigma) Lambda(sum sigma_j eps_j f_j)
FourthOrderDN dn_fourth_mixed(const WaveMetric& g, const ScalarField& q, const ScalarField& a,
                              const std::array<BoundaryData, 4>& f,
                              const std::array<double, 4>& eps, const GridSpec& grid,
                              bool refine = true);

// v_j = linear solves with data f_j, then w with source factor * a * v1 v2 v3 v4
// and zero data.  The chain rule gives factor = -24.
DNSignal cascade_fourth(const WaveMetric& g, const ScalarField& q, const ScalarField& a,
                        const std::array<BoundaryData, 4>& f, const GridSpec& grid,
                        double factor = -24);

struct InvarianceReport {
  double discrepancy = 0;  // relative L2 of the Neumann data
  double h = 0, dt = 0;
};

InvarianceReport diffeo_invariance_check(const WaveMetric& g, const ScalarField& a,
                                         const Diffeo& psi, const BoundaryData& f,
                                         const GridSpec& grid, bool check = true);

// Coefficient and data weights in d = 1 + n dimensions:
// exp((d+2) beta / 2) box_g(exp(-(d-2) beta / 2) v) = box_{exp(-2 beta) g} v + q~ v.
// The invariant pair is (exp(-2 beta) g, exp(k beta) a) with k = (d+2)/2 - 2(d-2):
// k = -1 for d = 4, 1/2 for d = 3, 2 for d = 2.
double conformal_a_exponent(int d);
InvarianceReport conformal_invariance_check(const WaveMetric& g, const ScalarField& a,
                                            const ScalarField& beta, const BoundaryData& f,
                                            const GridSpec& grid, bool check = true);

// exp(-beta) = 1 + amp * bump(|y - center|^2 / r^2), y = (t, x)
ScalarField spacetime_beta(double amp, const Vec& center, double r);

// Discrete box_g v at y by second-order central differences in divergence form.
double box_fd(const WaveMetric& g, const ScalarField& v, const Vec& y, double h);

struct ExteriorPulse {
  double x_center = -0.1, t_center = 0.15;
  double x_width = 0.08, t_width = 0.1;
  double amp = 1;
};

struct ScatteringReport {
  int passes = 0;
  TransitRecord transit;
  int entry_face = -1, exit_face = -1;
  DNSignal f0;                    // entry-patch data from the free field
  std::vector<Vec> corrections;   // exit-patch additions, one per pass
  std::vector<double> mismatch;   // interior relative L2 vs free field, per pass (0 = none)
  WaveResult free_field;          // on the extended domain
};

// 1+1.  The free field u0 comes from the source F = pulse in M1 \ M on a
// domain wide enough that nothing returns within T.
ScatteringReport scattering_control(const ProductMetric& m, const ExteriorPulse& pulse,
                                    int passes, double h, double T);
// Pulse source F(t, x).
ScalarField pulse_source(const ExteriorPulse& p);

}  // namespace lab

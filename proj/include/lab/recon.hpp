#pragma once

#include "lab/beams.hpp"
#include "lab/wavelab.hpp"

#include <array>
#include <memory>

namespace lab {

// theta_0 = alpha_1 theta_1 + alpha_2 theta_2 + alpha_3 theta_3 with
//   theta_0 = (-1, sign sqrt(1 - r0^2), r0, 0), theta_1 = (-1, 1, 0, 0),
//   theta_{2,3} = (-1, sqrt(1 - s^2), +-s, 0);  kappa_0 = 1, kappa_j = -alpha_j.
struct KappaCoefficients {
  double r0 = 0, sigma = 0;
  int sign = 1;
  std::array<double, 3> alpha{};
  std::array<double, 4> kappa{};
  std::array<Vec, 4> theta;
  double residual = 0;  // max |sum kappa_j theta_j|
};
KappaCoefficients kappa_coefficients(double r0, double sigma, int sign);

// One beam of the interaction: the analytic beam launched from the boundary
// along theta_j^sharp, used at frequency freq * rho.  Negative kappa_j is
// realized by the complex conjugate beam so that Im of the phase stays >= 0.
struct InteractionBeam {
  std::shared_ptr<const GaussianBeam> plain;  // (box_g) u = 0 to the beam order
  std::shared_ptr<const GaussianBeam> tilde;  // carries a1 from the potential q
  double freq = 1;
  bool conj = false;
  int power = 1;        // 2 for the repeated third beam
  double tau_source = 0;  // chart parameter of the boundary source point
};

struct InteractionOptions {
  double r0 = 1, sigma = 0.6;
  int sign = 1;
  Vec q0;                 // default (1.5, 0, 0, 0): centre of the unit ball
  cplx h0 = cplx(0, 1);   // initial Riccati H = h0 I at each source point
  ScalarField q;          // potential entering the tilde beams; empty = 0
  std::array<Vec, 4> offsets;  // spatial shifts of each ray off q0 (empty = none)
  cplx amp_scale = 1;     // common factor on every beam value
  double delta = 0.5;     // closest approach allowed only within delta of q0
};

struct BeamTables;  // tabulated beam data used by the quadrature

struct InteractionSetup {
  ProductMetric metric;
  Vec q0;
  KappaCoefficients k;
  std::array<InteractionBeam, 4> beams{};  // b0 backward, b1, b2, b3 (squared)
  cplx amp_scale = 1;
  std::vector<double> rho_ladder{50, 100, 200, 400};
  double min_approach = 0;  // closest approach over ray pairs not meeting at q0 (inf if none)
  std::shared_ptr<const BeamTables> tables{};
};
// Flat 1+3 Minkowski in the unit ball.
InteractionSetup make_interaction_setup(const InteractionOptions& opt = {});

enum class BeamFamily { Plain, Tilde };

// S = sum_j kappa_j phi_j (phi_3 counted twice at half frequency).
cplx phase_sum(const InteractionSetup& s, const Vec& x);

struct QuadratureOptions {
  double cells_per_width = 8;  // cells across 1/sqrt(rho)
  double decay = 18;           // truncate where Im(rho S) exceeds this
};

// Terms of one quadrature pass: integral of coef(x) times the beam product,
// coef = a for the plain family and e^beta a_tilde for the tilde family.
struct IntegralTerm {
  ScalarField coef;
  BeamFamily family = BeamFamily::Plain;
};
std::vector<cplx> interaction_integrals(const InteractionSetup& s,
                                        const std::vector<IntegralTerm>& terms, double rho,
                                        const QuadratureOptions& q = {});
// integral of e^beta a u1 u2 u3^2 u0 over a neighbourhood of q0 (beta empty: 0)
cplx interaction_integral(const InteractionSetup& s, const ScalarField& a,
                          const ScalarField& beta, double rho,
                          BeamFamily family = BeamFamily::Plain,
                          const QuadratureOptions& q = {});

struct RatioReport {
  std::vector<double> rho;
  std::vector<cplx> plain, tilde;  // rho^2 I at each ladder value
  std::vector<cplx> ratio;         // tilde / plain per rung
  cplx extrapolated, previous;     // two-term Richardson at the top and one rung down
  double ratio_estimate = 0;       // Re of extrapolated tilde / extrapolated plain
  double residual = 0;             // |E_top - E_prev| / |E_top|, worst of the two
  bool reliable = true;
};
// Ladder rho_max / 8 .. rho_max.  tilde integrand: e^beta a_tilde with tilde beams.
RatioReport recover_amplitude_ratio(const InteractionSetup& s, const ScalarField& a,
                                    const ScalarField& a_tilde, const ScalarField& beta,
                                    double rho_max, const QuadratureOptions& q = {});

// q = -e^beta box_g e^-beta for a potential-free operator conjugated by e^-beta.
ScalarField conjugation_potential(const ProductMetric& m, const ScalarField& beta,
                                  double fd_step = 1e-3);

struct RayTransformSample {
  Vec p0, v0;          // gamma(s) = exp_p0(s v0), s = chart parameter
  double s0 = 0;
  cplx weighted = 0;      // quadrature of q det Y^{1/2} over (0, s0)
  double unweighted = 0;  // quadrature of q over (0, s0)
  cplx delta_a1 = 0;      // a1 with q minus a1 without, at s0
  cplx sqrt_detY = 1;
  double extracted = 0;   // -2i det Y^{1/2} delta_a1 (imaginary part dropped)
  double extracted_imag = 0;
};
RayTransformSample ray_transform_q(const ProductMetric& m, const Vec& p0, const Vec& v0,
                                   const ScalarField& q, double s0);
// Central difference in s0 of the extracted integral.
double ray_transform_derivative(const ProductMetric& m, const Vec& p0, const Vec& v0,
                                const ScalarField& q, double s0, double ds = 1e-3);

struct ArrivalOptions {
  double h = 1.0 / 400;
  double cfl = 0.9;
  double width = 0.25;  // pulse support half-width
  double eps = 5e-2;
  double threshold = 5;   // multiple of the pre-arrival noise
  int noise_window = 10;  // samples
  double margin = 0.3;    // simulated time past the latest geometric arrival
};

struct ArrivalEntry {
  int face = 0;
  double t_detected = 0, t_geometric = 0;
  double cell_error = 0;  // (t_detected - t_geometric) / h
  bool censored = false;
  double noise = 0, peak = 0;
};

struct ArrivalReport {
  Vec q0;
  double shift = 0;  // simulation time = physical time + shift
  std::vector<double> source_times;  // per face, start of the two pulses there
  std::vector<ArrivalEntry> faces;
};
// 1+1 only.  Two pulses per face start where the backward null rays from q0
// meet the face, so the four-wave interaction region begins at q0.
ArrivalReport observation_set_from_data(const ProductMetric& m, const Vec& q0,
                                        const ScalarField& a, const ArrivalOptions& opt = {});

// Detection rule on one face trace: the first sample k with |d2 u| above
// threshold times the noise level, where the noise level is the largest mean
// |d2 u| over any `window` consecutive samples before k (at least floor).
struct Detection {
  int index = -1;
  double noise = 0, peak = 0;
};
Detection detect_arrival(const std::vector<double>& trace, double dt, int window,
                         double threshold, double floor = 0);

}  // namespace lab

#pragma once

#include "lab/lorgeo.hpp"
#include "lab/ode.hpp"
#include "lab/poly.hpp"

#include <array>
#include <memory>
#include <optional>

namespace lab {

using ScalarField = std::function<double(const Vec&)>;

// ODE solution kept at uniform nodes; values in between come from a short
// RK4 run off the nearest node, so at() is smooth to roundoff.
class NodePath {
 public:
  NodePath() = default;
  NodePath(ode::Rhs f, double t_init, const Vec& y_init, double lo, double hi,
           double spacing = 0.01, double tol = 1e-13);
  Vec at(double t) const;
  double lo() const { return lo_; }
  double hi() const { return hi_; }
  const std::vector<double>& times() const { return t_; }
  const std::vector<Vec>& states() const { return y_; }

 private:
  ode::Rhs f_;
  double lo_ = 0, hi_ = 0, h_ = 0.01;
  int k0_ = 0;
  std::vector<double> t_;
  std::vector<Vec> y_;
};

// Fermi null chart along a null geodesic: x = exp_{gamma(tau)}(z^i E_i) with
// E_1 null (g(L, E_1) = 1) and E_2.. spatial unit vectors, all parallel.
// On gamma the metric is 2 dtau dz^1 + sum_a (dz^a)^2.  gamma(0) = p0.
class FermiChart {
 public:
  FermiChart(const ProductMetric& m, const Vec& p0, const Vec& v0, double tau_lo,
             double tau_hi, double delta = 0.5);

  struct Frame {
    Vec y, L;
    Mat E;  // columns E_1 .. E_nt
  };

  int nt() const { return n_; }
  bool flat() const { return m_.flat; }
  double tau_lo() const { return lo_; }
  double tau_hi() const { return hi_; }
  double delta() const { return delta_; }
  const ProductMetric& metric() const { return m_; }

  Frame frame(double tau) const;
  Vec forward(double tau, const Vec& z) const;
  // columns d x / d tau, d x / d z^i
  Mat jacobian(double tau, const Vec& z) const;
  Mat pullback_metric(double tau, const Vec& z) const;
  // D_ij = 1/2 R(L, E_i, L, E_j), the transverse Hessian of g^{11} over four
  Mat D(double tau) const;
  // Chart coordinates (tau, z) of x, if Newton converges inside the chart.
  std::optional<Vec> inverse(const Vec& x) const;

 private:
  ProductMetric m_;
  int n_;
  double lo_, hi_, delta_;
  NodePath frame_path_;
};

FermiChart build_fermi_chart(const ProductMetric& m, const BrokenNullGeodesic& g,
                             int segment, double delta = 0.5);

// C = diag(0, 2, ..., 2)
CMat riccati_C(int nt);

using MatPath = std::function<Mat(double)>;

class RiccatiSolution {
 public:
  // Y(tau0) = Y0, Z(tau0) = H0 Y0.
  RiccatiSolution(MatPath D, CMat C, const CMat& Y0, const CMat& H0, double tau0,
                  double tau_lo, double tau_hi, bool require_positive = true,
                  double spacing = 0.01);

  double tau0() const { return tau0_; }
  double tau_lo() const { return path_.lo(); }
  double tau_hi() const { return path_.hi(); }
  int nt() const { return static_cast<int>(C_.rows()); }
  const CMat& C() const { return C_; }
  Mat D(double tau) const { return D_(tau); }

  CMat Y(double tau) const;
  CMat Z(double tau) const;
  // Z Y^{-1} by solving Y^T H^T = Z^T
  CMat H(double tau) const;
  cplx detY(double tau) const;
  // det Y^{1/2} on the branch continuous along tau from the principal root at tau0
  cplx sqrt_detY(double tau) const;
  double c0() const { return c0_; }
  double conserved(double tau) const;
  const std::vector<double>& nodes() const { return path_.times(); }

 private:
  CMat unpack(const Vec& s, int which) const;
  MatPath D_;
  CMat C_;
  double tau0_;
  NodePath path_;
  std::vector<double> arg_;  // unwrapped arg det Y at nodes
  double c0_ = 0;
};

RiccatiSolution solve_riccati(MatPath D, const CMat& C, const CMat& Y0, const CMat& H0,
                              double tau_lo, double tau_hi);

using ComplexPath = std::function<cplx(double)>;

ComplexPath amplitude_a0(std::shared_ptr<const RiccatiSolution> ric);

enum class A1Mode { None, QDifference, Full };

struct BeamOptions {
  int order = 2;  // phase degree; a0 to degree order-2, a1 to degree 0
  double delta = 0.5;
  A1Mode a1 = A1Mode::QDifference;
  ScalarField q;        // empty means q = 0
  bool q_in_a1 = true;  // ablation switch: drop q from the a1 source
  double spacing = 0.01;
  cplx a0_init = 1;     // a0 at tau0 (times det Y0^{-1/2})
  cplx a1_init = 0;
};

// Transport system for phase and amplitude jets on a flat chart, where the
// chart metric is exactly 2 dtau dz^1 + sum_a (dz^a)^2.  State (complex):
// Y, Z, phi_3..phi_N, a0, a1 coefficient vectors.
class JetSystem {
 public:
  JetSystem(std::shared_ptr<const FermiChart> chart, int order, A1Mode mode,
            ScalarField q, bool q_in_a1);

  struct Unpacked {
    CMat Y, Z;
    std::vector<Poly> phi;  // phi[m] for m = 0..N (phi[0], phi[1] fixed: 0, z^1)
    Poly a0, a1;
  };
  int size() const { return size_; }
  int order() const { return N_; }
  int a0_degree() const { return N_ - 2; }
  bool has_a1() const { return mode_ != A1Mode::None; }
  std::shared_ptr<const PolySpace> space() const { return sp_; }

  Unpacked unpack(const CVec& s) const;
  CVec pack(const Unpacked& u) const;
  CVec rhs(double tau, const CVec& s) const;
  // d^k/dtau^k of (phase, a0, a1) at tau from a state there, k = 0..2
  std::vector<std::array<Poly, 3>> derivatives(double tau, const CVec& s) const;
  Poly phase(const Unpacked& u) const;

 private:
  std::shared_ptr<const FermiChart> chart_;
  int N_, nt_;
  A1Mode mode_;
  ScalarField q_;
  bool q_in_a1_;
  std::shared_ptr<const PolySpace> sp_;
  CMat C_;
  int size_;
};

class GaussianBeam {
 public:
  GaussianBeam(std::shared_ptr<const FermiChart> chart,
               std::shared_ptr<const RiccatiSolution> ric, BeamOptions opt);
  // Flat charts: start the jet system from an explicit state at ric->tau0().
  GaussianBeam(std::shared_ptr<const FermiChart> chart,
               std::shared_ptr<const RiccatiSolution> ric, BeamOptions opt,
               const CVec& jet_state);

  // Phase and amplitude polynomials in z at one tau.
  struct Slice {
    double tau;
    CMat H;
    Poly phase, a0, a1;
  };
  Slice slice(double tau) const;

  cplx eval_slice(const Slice& s, const Vec& z, double rho) const;
  cplx eval_chart(double tau, const Vec& z, double rho) const;

  const FermiChart& chart() const { return *chart_; }
  const RiccatiSolution& riccati() const { return *ric_; }
  std::shared_ptr<const FermiChart> chart_ptr() const { return chart_; }
  const BeamOptions& options() const { return opt_; }
  int order() const { return opt_.order; }
  bool has_jets() const { return jets_ != nullptr; }
  const JetSystem& jets() const { return *jets_; }
  CVec jet_state(double tau) const;
  double lambda_min() const { return lambda_min_; }
  std::shared_ptr<const PolySpace> space() const { return sp_; }

 private:
  void init_common();

  std::shared_ptr<const FermiChart> chart_;
  std::shared_ptr<const RiccatiSolution> ric_;
  BeamOptions opt_;
  std::shared_ptr<const PolySpace> sp_;
  std::shared_ptr<const JetSystem> jets_;
  NodePath jet_path_;
  ComplexPath a0_, a1_;
  double lambda_min_ = 0;
};

// q_difference: Delta a1 with 2 a1' + Tr(CH) a1 = i q a0, a1(tau0) = 0.
// Full mode needs transverse jets of a0, available on flat charts only.
ComplexPath amplitude_a1(std::shared_ptr<const RiccatiSolution> ric, const ScalarField& q,
                         const FermiChart& chart, A1Mode mode);

struct BeamValue {
  cplx value = 0;
  bool out_of_chart = false;
};
BeamValue evaluate_beam(const GaussianBeam& b, const Vec& x, double rho);

struct ResidualGrid {
  double tau_lo = 0, tau_hi = 0.25;
  double htau = 0.0125;
  double box_widths = 5;       // half-width of the z box in units of 1/sqrt(rho lambda_min)
  double cells_per_width = 8;  // cells across 1/sqrt(rho)
};

// Discrete L2 norm of (box_g + q) u over the chart box; flat charts only.
double beam_residual_norm(const GaussianBeam& b, const ScalarField& q, double rho,
                          const ResidualGrid& grid = {});

// Local parametrization of the timelike boundary near p as a graph over its
// tangent space: x(y) = p + T y - h(|y_s|) n_out, y = (t, spatial tangential).
struct BoundaryGraph {
  Vec p;
  Mat T;        // d x n, orthonormal spatial columns after the first (d/dt)
  Vec n_out;    // spatial outward unit normal as a spacetime vector
  double radius = 0;  // 0 for a flat face

  Vec point(const Vec& y) const;
  double area_element(const Vec& y) const;
  // components of x(y) - p as polynomials over sp (degree <= sp maxdeg)
  std::vector<Poly> taylor(std::shared_ptr<const PolySpace> sp) const;
};
BoundaryGraph boundary_graph(const ProductMetric& m, const Vec& p);

// Reflected beam along the mirror-reflected geodesic, matched so that the
// boundary trace of phase agrees to degree N and of the amplitude terms
// (a0, a1) to degrees N-2 and 0.  Flat charts only.
struct ReflectedBeam {
  GaussianBeam beam;
  BoundaryGraph boundary;
  double tau_event;  // incident chart parameter at the reflection point
  int phase_order, amp_order;
};
// The reflected chart has tau = 0 at the event and spans [tau_lo, tau_hi].
ReflectedBeam reflect_beam(const GaussianBeam& inc, const GeoEvent& ev, double tau_hi,
                           double tau_lo = -1);

// Boundary trace of the beam phase / amplitude around the graph point, Taylor
// polynomials in y (for diagnostics and the matching itself).
struct TracePolys {
  Poly phase, a0, a1;
};
TracePolys boundary_trace_taylor(const GaussianBeam& b, const BoundaryGraph& bg,
                                 std::shared_ptr<const PolySpace> ysp);

// L2 norm over a y box of (u_inc + u_ref) restricted to the boundary.
double boundary_trace_norm(const GaussianBeam& inc, const GaussianBeam& ref,
                           const BoundaryGraph& bg, double rho, double box_widths = 5,
                           double cells_per_width = 8);

// Least-squares slope of log y against log x.
double loglog_slope(const std::vector<double>& x, const std::vector<double>& y);

}  // namespace lab

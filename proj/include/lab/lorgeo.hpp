#pragma once

#include "lab/core.hpp"

#include <map>
#include <optional>

namespace lab {

// Spatial region: interval (n=1), box, or disk (n=2).
struct Domain {
  enum class Kind { Interval, Box, Disk };
  Kind kind = Kind::Interval;
  Vec lo, hi;       // interval / box
  Vec center;       // disk
  double radius = 0;

  static Domain interval(double a, double b);
  static Domain box(Vec lo, Vec hi);
  static Domain disk(Vec c, double r);

  int dim() const;
  // Positive inside, zero on the boundary, roughly signed distance.
  double defining(const Vec& x) const;
  // Euclidean unit outward normal of the face nearest to x.
  Vec outward_normal(const Vec& x) const;
  bool contains(const Vec& x, double slack = 0) const;
};

// g and its coordinate derivatives at a point y = (t, x).
struct MetricJet {
  Mat g;
  std::vector<Mat> dg;                // dg[l] = d_l g
  std::vector<std::vector<Mat>> d2g;  // d2g[l][m]
};

class Metric {
 public:
  virtual ~Metric() = default;
  virtual int spatial_dim() const = 0;
  // order 0, 1 or 2; no domain check (integrator trial stages may step outside)
  virtual MetricJet jet(const Vec& y, int order) const = 0;
  virtual bool in_domain(const Vec&) const { return true; }
};

using PresetParams = std::map<std::string, double>;

// g = -alpha dt^2 + S |dx|^2 with analytic alpha, S.
class ProductMetric : public Metric {
 public:
  using FieldFn = std::function<ScalarJet(const Vec&)>;

  ProductMetric(std::string name, int n, FieldFn alpha, FieldFn scale, Domain inner,
                Domain outer, double T);

  int spatial_dim() const override { return n_; }
  MetricJet jet(const Vec& y, int order) const override;
  bool in_domain(const Vec& y) const override;

  ScalarJet alpha(const Vec& y) const { return alpha_(y); }
  ScalarJet scale(const Vec& y) const { return scale_(y); }
  const Domain& inner() const { return inner_; }
  const Domain& outer() const { return outer_; }
  double horizon() const { return T_; }
  const std::string& name() const { return name_; }

  bool flat = false;         // Minkowski in these coordinates
  bool is_static = false;    // alpha, S independent of t
  PresetParams params;       // resolved preset parameters

 private:
  std::string name_;
  int n_;
  FieldFn alpha_, scale_;
  Domain inner_, outer_;
  double T_;
};

std::vector<std::string> preset_names();
// Throws ConfigError for unknown names or parameters.
ProductMetric make_preset(const std::string& name, int n, const PresetParams& p = {});

Mat metric_at(const Metric& m, const Vec& p);
Mat inverse_metric_at(const Metric& m, const Vec& p);
// gam[i](j, k) = Gamma^i_{jk}
std::vector<Mat> christoffel_at(const Metric& m, const Vec& p);
// dgam[l][i](j, k) = d_l Gamma^i_{jk}
std::vector<std::vector<Mat>> christoffel_derivs_at(const Metric& m, const Vec& p);
// R(a, b, c, d) = R_{mu nu rho sigma} a^mu b^nu c^rho d^sigma, with
// R^r_{s m n} = d_m Gam^r_{n s} - d_n Gam^r_{m s} + Gam^r_{m l} Gam^l_{n s} - ...
double riemann_contract(const Metric& m, const Vec& p, const Vec& a, const Vec& b,
                        const Vec& c, const Vec& d);

// Geodesic right-hand side for the state (y, v).
Vec geodesic_rhs(const Metric& m, const Vec& state);

// Geodesic flow together with its first variation: Jy = dy/dparams, Jv = dv/dparams.
struct FlowState {
  Vec y, v;
  Mat Jy, Jv;
};
FlowState geodesic_flow(const Metric& m, const Vec& y0, const Vec& v0, const Mat& Jy0,
                        const Mat& Jv0, double s1, double tol = 1e-12);

enum class CausalClass { Timelike, Null, Spacelike };
CausalClass causal_class(const Metric& m, const Vec& p, const Vec& v, double tol_null);

enum class GeoMode { Transmit, Reflect };

struct StepControl {
  double tol = 1e-11;
  double h0 = 1e-3;
  double hmax = 0.02;
  int max_events = 8;
  double s_max = 1e6;        // stop at this affine parameter
  double tol_null = 1e-9;
  double tol_tangent = 1e-8;
  double event_tol = 1e-10;  // bisection tolerance in s
};

struct GeoSample {
  double s;
  Vec y, v;
};

enum class EventKind { Reflect, Enter, Exit, LeaveOuter, Horizon, Tangency };

struct GeoEvent {
  EventKind kind;
  double s;
  Vec y, v_in, v_out;
};

struct BrokenNullGeodesic {
  GeoMode mode = GeoMode::Transmit;
  std::vector<std::vector<GeoSample>> segments;
  std::vector<GeoEvent> events;
  int renormalizations = 0;
  double max_null_drift = 0;

  const GeoSample& last() const { return segments.back().back(); }
  // Interpolated state at affine parameter s (Hermite on stored samples).
  GeoSample at(const Metric& m, double s) const;
};

// Future- or past-pointing null v0 both accepted; past-pointing rays run
// until t <= 0 instead of t >= T.
BrokenNullGeodesic integrate_null_geodesic(const ProductMetric& m, const Vec& p0,
                                           const Vec& v0, GeoMode mode,
                                           const StepControl& ctl = {});

// Unit outward normal vector (g-normalised) at a boundary point of N.
Vec unit_outer_normal(const ProductMetric& m, const Vec& b);
Vec reflect_velocity(const ProductMetric& m, const Vec& b, const Vec& v,
                     double tol_tangent = 1e-8);

// Null vector with time component +1 (or -1) along a Euclidean spatial direction.
Vec null_vector(const ProductMetric& m, const Vec& p, const Vec& dir, double sign = 1);
// Rescale v^0 so that g(v, v) = 0.
Vec renormalize_null(const Metric& m, const Vec& p, const Vec& v);

enum class TransitClass { NoEntry, I, IO, IOI };
const char* to_string(TransitClass c);

struct TransitRecord {
  TransitClass cls = TransitClass::NoEntry;
  std::optional<double> t0, t1, t2;
  bool tangency = false;
  std::string failure;  // non-empty if integration failed part way
};

TransitRecord classify_transit(const ProductMetric& m, const Vec& z0, const Vec& zeta0,
                               const StepControl& ctl = {});

struct ObservationHit {
  Vec direction;  // Euclidean spatial launch direction
  bool censored = false;
  double s = 0;
  Vec point, velocity;
};

std::vector<ObservationHit> earliest_observation_set(const ProductMetric& m,
                                                     const Vec& q0, int fan,
                                                     const StepControl& ctl = {});

// Face of N carrying a boundary normal chart.  Interval: face 0 = left, 1 = right.
// Box: face = 2*axis + (0 lower, 1 upper).  Disk: face ignored, u = (t, angle).
struct BoundaryPatch {
  int face = 0;
  Vec u_lo, u_hi;  // parameter box, u = (t, tangential...)
};

class BoundaryNormalChart {
 public:
  BoundaryNormalChart(const ProductMetric& m, BoundaryPatch patch, double eps,
                      double tol = 1e-12);

  struct Eval {
    Vec x;
    Mat J;       // columns d/du_alpha ..., d/dx^n
    Mat g_pull;  // pulled-back metric in (u, x^n)
  };
  Vec boundary_point(const Vec& u) const;
  Eval eval(const Vec& u, double xn) const;
  double depth() const { return eps_; }
  const BoundaryPatch& patch() const { return patch_; }
  int dim() const;

 private:
  Mat boundary_tangents(const Vec& u) const;
  Vec inward_normal(const Vec& u) const;

  const ProductMetric* m_;
  BoundaryPatch patch_;
  double eps_, tol_;
};

struct InteractionSource {
  Vec theta;  // past null direction at q0
  Vec z, zeta;
  TransitRecord transit;
};

std::vector<InteractionSource> choose_interaction_sources(const ProductMetric& m,
                                                          const Vec& q0, double sigma,
                                                          double scale, double r0 = 0.5,
                                                          int sign = 1);

}  // namespace lab

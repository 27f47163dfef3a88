#pragma once

#include "lab/beams.hpp"
#include "lab/lorgeo.hpp"
#include "lab/poly.hpp"

#include <memory>

namespace lab {

// Boundary normal coordinates (x', x^n), x' = (t, tangential), nb = dim x'.
// The metric there is g_{ab}(x', x^n) dx^a dx^b + (dx^n)^2; a source supplies
// the inverse block g^{ab} (nb x nb) and its normal derivative.

// Taylor data in y = x' - x'_0 at one depth, degree <= 2.
struct BoundaryMetricPolys {
  std::vector<Poly> G, dnG;  // row-major nb x nb entries of g^{ab}, d/dx^n g^{ab}
  Poly logD, dn_logD;        // log sqrt|det g| and its normal derivative
};

class BoundaryMetricSource {
 public:
  virtual ~BoundaryMetricSource() = default;
  virtual int nb() const = 0;
  virtual Mat ginv(const Vec& xp, double xn) const = 0;
  virtual Mat dn_ginv(const Vec& xp, double xn) const = 0;
  // Default: central differences of ginv / dn_ginv in x'.
  virtual BoundaryMetricPolys polys(const Vec& xp0, double xn,
                                    std::shared_ptr<const PolySpace> sp) const;
  // det of the full lower-index metric, 1 / det g^{ab}
  double det_g(const Vec& xp, double xn) const { return 1 / ginv(xp, xn).determinant(); }
};

// Metrics that depend on one spatial axis only (static_profile, lapse_linear,
// minkowski) with the boundary face normal to that axis.  The normal geodesics
// are coordinate lines; x^n is arclength, so everything reduces to one ODE.
class LayeredBoundaryMetric : public BoundaryMetricSource {
 public:
  LayeredBoundaryMetric(const ProductMetric& m, int face, double depth = 1.0);
  int nb() const override { return m_.spatial_dim(); }
  Mat ginv(const Vec& xp, double xn) const override;
  Mat dn_ginv(const Vec& xp, double xn) const override;
  BoundaryMetricPolys polys(const Vec& xp0, double xn,
                            std::shared_ptr<const PolySpace> sp) const override;
  // coordinate along the layered axis at depth xn
  double axis_coordinate(double xn) const;

 private:
  Vec point(const Vec& xp, double xn) const;
  ProductMetric m_;
  int axis_, sign_;
  NodePath x_;  // layered coordinate against depth
};

// Any preset, through the geodesic boundary normal chart.  Normal derivatives
// by fourth-order central differences in x^n.
class ChartBoundaryMetric : public BoundaryMetricSource {
 public:
  ChartBoundaryMetric(const ProductMetric& m, const BoundaryPatch& patch, double depth,
                      double hn = 1e-3);
  int nb() const override { return chart_->dim() - 1; }
  Mat ginv(const Vec& xp, double xn) const override;
  Mat dn_ginv(const Vec& xp, double xn) const override;

 private:
  std::shared_ptr<const ProductMetric> m_;  // the chart keeps a pointer to it
  std::shared_ptr<const BoundaryNormalChart> chart_;
  double hn_;
};

// g^{ab}(x', x^n) := g^{ab}(x', 0) of a base source: same boundary values and
// tangential jets, no normal variation.  The reference in difference recovery.
class FrozenBoundaryMetric : public BoundaryMetricSource {
 public:
  explicit FrozenBoundaryMetric(std::shared_ptr<const BoundaryMetricSource> base)
      : base_(std::move(base)) {}
  int nb() const override { return base_->nb(); }
  Mat ginv(const Vec& xp, double) const override { return base_->ginv(xp, 0); }
  Mat dn_ginv(const Vec& xp, double) const override;
  BoundaryMetricPolys polys(const Vec& xp0, double xn,
                            std::shared_ptr<const PolySpace> sp) const override;

 private:
  std::shared_ptr<const BoundaryMetricSource> base_;
};

// Constant g^{ab}: a recovered boundary metric on a patch where it does not vary.
class ConstantBoundaryMetric : public BoundaryMetricSource {
 public:
  explicit ConstantBoundaryMetric(Mat G) : G_(std::move(G)) {}
  int nb() const override { return static_cast<int>(G_.rows()); }
  Mat ginv(const Vec&, double) const override { return G_; }
  Mat dn_ginv(const Vec&, double) const override { return Mat::Zero(nb(), nb()); }

 private:
  Mat G_;
};

// Layered source when the metric varies only along the face normal axis,
// chart source otherwise.
std::shared_ptr<BoundaryMetricSource> boundary_metric_source(const ProductMetric& m,
                                                             const BoundaryPatch& patch,
                                                             double depth);

struct BoundaryCovector {
  Vec xp;  // base point x'
  Vec xi;  // (xi_0, ..., xi_{nb-1})
};

// Covectors xi' = (-1, s) spread across the timelike cone of G (nb = 2), or
// rescalings of (-1) for nb = 1.
std::vector<BoundaryCovector> covector_fan(const Mat& G, const Vec& xp, int count,
                                           double spread = 0.6);

struct GOJet {
  BoundaryCovector bc;
  int tangential_order = 2;
  std::vector<double> depth;
  std::vector<Poly> phase;               // phi(y) at each depth
  std::vector<double> dn_phi;            // d_n phi at y = 0
  std::vector<double> eikonal_residual;  // at y = 0
  double xi_n = 0;                       // d_n phi at x^n = 0
  double dn2_phi = 0;                    // d_n^2 phi at x^n = 0
  Vec dn_grad_phi;                       // d_n d_a phi at x^n = 0
};

// Outgoing root: xi_n = -sqrt(-g^{ab} xi_a xi_b).
GOJet eikonal_jet_march(const BoundaryMetricSource& src, const BoundaryCovector& bc,
                        double eps, int steps = 64, int tangential_order = 2);

struct AmplitudeJet {
  double chi = 1;
  std::vector<double> a0_depth;  // a0 at y = 0 along the depth grid
  double a0 = 0, dn_a0 = 0, dn2_a0 = 0, box_a0 = 0;
  cplx a1 = 0, dn_a1 = 0;
};

// T a0 = 0 with a0 = chi near the base point, i T a1 = -box a0 with a1 = 0 on
// the boundary.  Values at x^n = 0 (on the chi = 1 region).
AmplitudeJet transport_jet_march(const BoundaryMetricSource& src, const GOJet& phase,
                                 double chi = 1);

struct MetricSample {
  BoundaryCovector bc;
  double xi_n;
};
struct MetricFit {
  Mat ginv;
  double residual = 0, condition = 0;
};
// Least squares for xi_n^2 = -g^{ab} xi_a xi_b.
MetricFit recover_boundary_metric(const std::vector<MetricSample>& samples);

struct NormalSample {
  BoundaryCovector bc;
  double xi_n, dn2_phi, dn_a0;
};
enum class NormalJetRoute { Auto, Amplitude, Phase };
struct NormalJetFit {
  Mat dn_ginv;
  Mat h_fit;  // (1/det g) d_n(det g g^{ab}) on the amplitude route
  double dn_det_g = 0;
  double residual = 0, condition = 0;
  NormalJetRoute route = NormalJetRoute::Auto;
};
// known: a source carrying the (already recovered) g|dM with its tangential
// jets.  Its normal behaviour is ignored: the reference is its frozen copy,
// and the unknown remainder terms cancel in the difference of the identities.
// Auto picks Amplitude for nb >= 2 and Phase for nb = 1, where
// det g * g^{00} = 1 and the amplitude identity carries no normal information.
NormalJetFit recover_normal_jet(const std::vector<NormalSample>& samples,
                                std::shared_ptr<const BoundaryMetricSource> known,
                                NormalJetRoute route = NormalJetRoute::Auto);

// Data that the DN symbol would provide, produced by the forward marches.
NormalSample normal_sample(const BoundaryMetricSource& src, const BoundaryCovector& bc);

}  // namespace lab

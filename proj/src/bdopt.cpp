#include "lab/bdopt.hpp"

#include <Eigen/QR>
#include <Eigen/SVD>

#include <cmath>

namespace lab {

namespace {

// v + g.y + 1/2 y.H.y over sp (the quadratic part only if sp has degree 2)
Poly taylor2(std::shared_ptr<const PolySpace> sp, double v, const Vec& g, const Mat& H) {
  Poly p = Poly::constant(sp, v);
  for (int a = 0; a < g.size(); ++a) p += Poly::variable(sp, a) * g[a];
  if (sp->maxdeg() >= 2) p += Poly::quadratic(sp, (0.5 * H).cast<cplx>());
  return p;
}

double log_sqrt_det(const Mat& G) { return -0.5 * std::log(std::abs(G.determinant())); }

double dn_log_sqrt_det(const Mat& G, const Mat& dG) {
  return -0.5 * G.lu().solve(dG).trace();
}

BoundaryMetricPolys constant_polys(const Mat& G, const Mat& dG,
                                   std::shared_ptr<const PolySpace> sp) {
  const int nb = static_cast<int>(G.rows());
  BoundaryMetricPolys mp;
  for (int a = 0; a < nb; ++a)
    for (int b = 0; b < nb; ++b) {
      mp.G.push_back(Poly::constant(sp, G(a, b)));
      mp.dnG.push_back(Poly::constant(sp, dG(a, b)));
    }
  mp.logD = Poly::constant(sp, log_sqrt_det(G));
  mp.dn_logD = Poly::constant(sp, dn_log_sqrt_det(G, dG));
  return mp;
}

Poly linear_phase(std::shared_ptr<const PolySpace> sp, const Vec& xi) {
  Poly p(sp);
  for (int a = 0; a < xi.size(); ++a) p += Poly::variable(sp, a) * xi[a];
  return p;
}

struct Derived {
  Poly F;       // d_n phi
  Poly dn2phi;  // d_n^2 phi
  Poly box;     // box_g phi
  Poly a0rhs;   // d_n a0
  BoundaryMetricPolys mp;
};

// Order matching of the eikonal and a0 transport equations at one depth.
Derived derive(const BoundaryMetricSource& src, const Vec& xp0, double xn, const Poly& phi,
               const Poly& a0) {
  auto sp = phi.space_ptr();
  const int nb = src.nb();
  Derived r;
  r.mp = src.polys(xp0, xn, sp);
  const auto& G = r.mp.G;
  auto Gab = [&](int a, int b) -> const Poly& { return G[a * nb + b]; };
  std::vector<Poly> P(nb);
  for (int a = 0; a < nb; ++a) P[a] = phi.d(a);
  Poly Q(sp);
  for (int a = 0; a < nb; ++a)
    for (int b = 0; b < nb; ++b) Q += Gab(a, b) * P[a] * P[b];
  double q0 = -Q[0].real();
  if (!(q0 > 0))
    throw DomainError("eikonal: xi_n^2 <= 0, the covector is not timelike at depth " +
                      std::to_string(xn));
  // F = -sqrt(q0 (1 + u)), u = (-Q - q0) / q0
  Poly u = (Q * -1.0 - Poly::constant(sp, q0)) * (1 / q0);
  Poly one = Poly::constant(sp, 1.0);
  r.F = (one + u * 0.5 - u * u * 0.125) * -std::sqrt(q0);
  double F0 = r.F[0].real();
  Poly v = r.F * (1 / F0) - one;
  Poly invF = (one - v + v * v) * (1 / F0);

  std::vector<Poly> dF(nb);
  for (int b = 0; b < nb; ++b) dF[b] = r.F.d(b);
  Poly dQ(sp);
  for (int a = 0; a < nb; ++a)
    for (int b = 0; b < nb; ++b)
      dQ += r.mp.dnG[a * nb + b] * P[a] * P[b] + Gab(a, b) * P[a] * dF[b] * 2.0;
  r.dn2phi = dQ * invF * -0.5;

  Poly box = r.dn2phi + r.mp.dn_logD * r.F;
  for (int a = 0; a < nb; ++a)
    for (int b = 0; b < nb; ++b)
      box += Gab(a, b) * P[a].d(b) + Gab(a, b).d(a) * P[b] + r.mp.logD.d(a) * Gab(a, b) * P[b];
  r.box = box;

  Poly flux(sp);
  for (int a = 0; a < nb; ++a)
    for (int b = 0; b < nb; ++b) flux += Gab(a, b) * P[a] * a0.d(b);
  r.a0rhs = (flux * 2.0 + box * a0) * invF * -0.5;
  return r;
}

Vec real_coeffs(const Poly& p) { return p.coeffs().real(); }

Poly from_real(std::shared_ptr<const PolySpace> sp, const Vec& c) {
  return Poly(sp, c.cast<cplx>());
}

struct JointMarch {
  const BoundaryMetricSource& src;
  Vec xp0;
  std::shared_ptr<const PolySpace> sp;
  int m;
  Vec rhs(double xn, const Vec& s) const {
    Poly phi = from_real(sp, s.head(m)), a0 = from_real(sp, s.tail(m));
    Derived d = derive(src, xp0, xn, phi, a0);
    Vec out(2 * m);
    out.head(m) = real_coeffs(d.F);
    out.tail(m) = real_coeffs(d.a0rhs);
    return out;
  }
};

}  // namespace

BoundaryMetricPolys BoundaryMetricSource::polys(const Vec& xp0, double xn,
                                                std::shared_ptr<const PolySpace> sp) const {
  const int n = nb();
  const double h = 1e-3;
  const bool second = sp->maxdeg() >= 2;
  // scalar channels: G entries, dnG entries, log sqrt|D|, its d_n
  const int nc = 2 * n * n + 2;
  auto sample = [&](const Vec& xp) {
    Mat G = ginv(xp, xn), dG = dn_ginv(xp, xn);
    Vec c(nc);
    for (int a = 0; a < n; ++a)
      for (int b = 0; b < n; ++b) {
        c[a * n + b] = G(a, b);
        c[n * n + a * n + b] = dG(a, b);
      }
    c[2 * n * n] = log_sqrt_det(G);
    c[2 * n * n + 1] = dn_log_sqrt_det(G, dG);
    return c;
  };
  Vec c0 = sample(xp0);
  Mat grad(nc, n);
  std::vector<Mat> hess(nc, Mat::Zero(n, n));
  std::vector<Vec> plus(n), minus(n);
  for (int a = 0; a < n; ++a) {
    Vec p = xp0, m = xp0;
    p[a] += h;
    m[a] -= h;
    plus[a] = sample(p);
    minus[a] = sample(m);
    grad.col(a) = (plus[a] - minus[a]) / (2 * h);
    if (second) {
      Vec d2 = (plus[a] - 2 * c0 + minus[a]) / (h * h);
      for (int k = 0; k < nc; ++k) hess[k](a, a) = d2[k];
    }
  }
  if (second)
    for (int a = 0; a < n; ++a)
      for (int b = a + 1; b < n; ++b) {
        Vec pp = xp0, pm = xp0, mp = xp0, mm = xp0;
        pp[a] += h, pp[b] += h;
        pm[a] += h, pm[b] -= h;
        mp[a] -= h, mp[b] += h;
        mm[a] -= h, mm[b] -= h;
        Vec d2 = (sample(pp) - sample(pm) - sample(mp) + sample(mm)) / (4 * h * h);
        for (int k = 0; k < nc; ++k) hess[k](a, b) = hess[k](b, a) = d2[k];
      }
  BoundaryMetricPolys mp;
  auto chan = [&](int k) { return taylor2(sp, c0[k], grad.row(k).transpose(), hess[k]); };
  for (int k = 0; k < n * n; ++k) mp.G.push_back(chan(k));
  for (int k = 0; k < n * n; ++k) mp.dnG.push_back(chan(n * n + k));
  mp.logD = chan(2 * n * n);
  mp.dn_logD = chan(2 * n * n + 1);
  return mp;
}

// ---- layered ----

LayeredBoundaryMetric::LayeredBoundaryMetric(const ProductMetric& m, int face, double depth)
    : m_(m) {
  const Domain& D = m.inner();
  const int n = m.spatial_dim();
  double x0;
  if (D.kind == Domain::Kind::Interval) {
    if (face < 0 || face > 1) throw PreconditionError("layered boundary metric: face is 0 or 1");
    axis_ = 0;
    x0 = face == 0 ? D.lo[0] : D.hi[0];
    sign_ = face == 0 ? 1 : -1;
  } else if (D.kind == Domain::Kind::Box) {
    if (face < 0 || face >= 2 * n) throw PreconditionError("layered boundary metric: bad face");
    axis_ = face / 2;
    x0 = face % 2 ? D.hi[axis_] : D.lo[axis_];
    sign_ = face % 2 ? -1 : 1;
  } else {
    throw PreconditionError("layered boundary metric: needs an interval or box domain");
  }
  // The fields must not vary along t or the face.
  for (double frac : {0.2, 0.5, 0.8}) {
    Vec y = Vec::Zero(n + 1);
    y[0] = 0.3 * frac;
    for (int i = 0; i < n; ++i)
      y[1 + i] = D.kind == Domain::Kind::Interval ? D.lo[0] + frac * (D.hi[0] - D.lo[0])
                                                   : D.lo[i] + frac * (D.hi[i] - D.lo[i]);
    for (const ScalarJet& j : {m.alpha(y), m.scale(y)})
      for (int k = 0; k <= n; ++k)
        if (k != 1 + axis_ && std::abs(j.g[k]) > 1e-14)
          throw PreconditionError("layered boundary metric: metric varies along the face");
  }
  const int ax = axis_, sg = sign_;
  auto mp = std::make_shared<const ProductMetric>(m);
  ode::Rhs f = [mp, ax, sg, n](double, const Vec& x) {
    Vec y = Vec::Zero(n + 1);
    y[1 + ax] = x[0];
    return Vec::Constant(1, sg / std::sqrt(mp->scale(y).v));
  };
  x_ = NodePath(f, 0.0, Vec::Constant(1, x0), -0.1, depth + 0.1);
}

double LayeredBoundaryMetric::axis_coordinate(double xn) const { return x_.at(xn)[0]; }

Vec LayeredBoundaryMetric::point(const Vec& xp, double xn) const {
  const int n = m_.spatial_dim();
  Vec y(n + 1);
  y[0] = xp[0];
  for (int i = 0, j = 1; i < n; ++i) y[1 + i] = i == axis_ ? axis_coordinate(xn) : xp[j++];
  return y;
}

Mat LayeredBoundaryMetric::ginv(const Vec& xp, double xn) const {
  Vec y = point(xp, xn);
  const int n = nb();
  Mat G = Mat::Identity(n, n) / m_.scale(y).v;
  G(0, 0) = -1 / m_.alpha(y).v;
  return G;
}

Mat LayeredBoundaryMetric::dn_ginv(const Vec& xp, double xn) const {
  Vec y = point(xp, xn);
  const int n = nb();
  ScalarJet a = m_.alpha(y), S = m_.scale(y);
  double c = 1 / std::sqrt(S.v);
  double da = sign_ * c * a.g[1 + axis_], dS = sign_ * c * S.g[1 + axis_];
  Mat dG = Mat::Identity(n, n) * (-dS / (S.v * S.v));
  dG(0, 0) = da / (a.v * a.v);
  return dG;
}

BoundaryMetricPolys LayeredBoundaryMetric::polys(const Vec& xp0, double xn,
                                                 std::shared_ptr<const PolySpace> sp) const {
  return constant_polys(ginv(xp0, xn), dn_ginv(xp0, xn), sp);
}

// ---- chart ----

ChartBoundaryMetric::ChartBoundaryMetric(const ProductMetric& m, const BoundaryPatch& patch,
                                         double depth, double hn)
    : m_(std::make_shared<ProductMetric>(m)),
      chart_(std::make_shared<BoundaryNormalChart>(*m_, patch, depth)),
      hn_(hn) {}

Mat ChartBoundaryMetric::ginv(const Vec& xp, double xn) const {
  const int n = nb();
  return chart_->eval(xp, xn).g_pull.inverse().topLeftCorner(n, n);
}

Mat ChartBoundaryMetric::dn_ginv(const Vec& xp, double xn) const {
  const double h = hn_;
  return (-ginv(xp, xn + 2 * h) + 8 * ginv(xp, xn + h) - 8 * ginv(xp, xn - h) +
          ginv(xp, xn - 2 * h)) /
         (12 * h);
}

// ---- frozen ----

Mat FrozenBoundaryMetric::dn_ginv(const Vec&, double) const {
  return Mat::Zero(nb(), nb());
}

BoundaryMetricPolys FrozenBoundaryMetric::polys(const Vec& xp0, double,
                                                std::shared_ptr<const PolySpace> sp) const {
  BoundaryMetricPolys mp = base_->polys(xp0, 0, sp);
  for (Poly& p : mp.dnG) p = Poly(sp);
  mp.dn_logD = Poly(sp);
  return mp;
}

std::shared_ptr<BoundaryMetricSource> boundary_metric_source(const ProductMetric& m,
                                                             const BoundaryPatch& patch,
                                                             double depth) {
  if (m.is_static && m.inner().kind != Domain::Kind::Disk) {
    try {
      return std::make_shared<LayeredBoundaryMetric>(m, patch.face, depth);
    } catch (const PreconditionError&) {
    }
  }
  return std::make_shared<ChartBoundaryMetric>(m, patch, depth);
}

// ---- covectors ----

std::vector<BoundaryCovector> covector_fan(const Mat& G, const Vec& xp, int count,
                                           double spread) {
  const int nb = static_cast<int>(G.rows()), m = nb - 1;
  if (count < 1) throw PreconditionError("covector_fan: count must be positive");
  if (!(spread > 0 && spread < 1)) throw PreconditionError("covector_fan: spread in (0, 1)");
  std::vector<BoundaryCovector> out;
  if (m == 0) {
    if (!(G(0, 0) < 0)) throw PreconditionError("covector_fan: no timelike covectors");
    for (int k = 0; k < count; ++k) out.push_back({xp, Vec::Constant(1, -(1 + 0.25 * k))});
    return out;
  }
  if (m > 2) throw PreconditionError("covector_fan: boundary dimension above 3");
  // xi = (-1, s): G00 - 2 g0.s + s.Gss.s < 0 inside an ellipsoid around sc
  Mat Gss = G.bottomRightCorner(m, m);
  Vec g0 = G.block(1, 0, m, 1);
  Eigen::LLT<Mat> llt(Gss);
  if (llt.info() != Eigen::Success)
    throw PreconditionError("covector_fan: tangential block not positive");
  Vec sc = llt.solve(g0);
  double v = G(0, 0) - g0.dot(sc);
  if (!(v < 0)) throw PreconditionError("covector_fan: no timelike covectors");
  Mat Lt = llt.matrixU();
  for (int k = 0; k < count; ++k) {
    Vec u(m);
    if (m == 1) {
      u[0] = count == 1 ? 0 : spread * (2.0 * k / (count - 1) - 1);
    } else {
      // two radii so the points do not sit on one conic
      double th = 2 * M_PI * 0.6180339887498949 * k, r = spread * (k % 2 ? 0.5 : 1.0);
      u << r * std::cos(th), r * std::sin(th);
    }
    Vec s = sc + std::sqrt(-v) * Lt.triangularView<Eigen::Upper>().solve(u);
    Vec xi(nb);
    xi[0] = -1;
    xi.tail(m) = s;
    out.push_back({xp, xi});
  }
  return out;
}

// ---- marches ----

GOJet eikonal_jet_march(const BoundaryMetricSource& src, const BoundaryCovector& bc,
                        double eps, int steps, int tangential_order) {
  const int nb = src.nb();
  if (bc.xp.size() != nb || bc.xi.size() != nb)
    throw PreconditionError("eikonal_jet_march: covector has the wrong dimension");
  if (tangential_order < 1 || tangential_order > 2)
    throw ConfigError("eikonal_jet_march: tangential order is 1 or 2");
  if (!(eps > 0) || steps < 1) throw PreconditionError("eikonal_jet_march: bad depth grid");
  Mat G0 = src.ginv(bc.xp, 0);
  double q = bc.xi.dot(G0 * bc.xi);
  if (!(q < 0)) throw PreconditionError("eikonal_jet_march: covector is not timelike");

  auto sp = std::make_shared<PolySpace>(nb, tangential_order);
  const int m = sp->size();
  GOJet jet;
  jet.bc = bc;
  jet.tangential_order = tangential_order;
  Poly phi0 = linear_phase(sp, bc.xi);
  Poly one = Poly::constant(sp, 1.0);
  JointMarch jm{src, bc.xp, sp, m};
  ode::Rhs f = [&jm](double s, const Vec& y) { return jm.rhs(s, y); };

  Vec state(2 * m);
  state.head(m) = real_coeffs(phi0);
  state.tail(m) = real_coeffs(one);
  const double h = eps / steps;
  for (int k = 0; k <= steps; ++k) {
    double xn = k * h;
    Poly phi = from_real(sp, state.head(m));
    Derived d = derive(src, bc.xp, xn, phi, one);
    Vec P0(nb);
    for (int a = 0; a < nb; ++a) P0[a] = phi.d(a)[0].real();
    double F0 = d.F[0].real();
    jet.depth.push_back(xn);
    jet.phase.push_back(phi);
    jet.dn_phi.push_back(F0);
    jet.eikonal_residual.push_back(std::abs(P0.dot(src.ginv(bc.xp, xn) * P0) + F0 * F0));
    if (k == 0) {
      jet.xi_n = F0;
      jet.dn2_phi = d.dn2phi[0].real();
      jet.dn_grad_phi.resize(nb);
      for (int a = 0; a < nb; ++a) jet.dn_grad_phi[a] = d.F.d(a)[0].real();
    }
    if (k < steps) state = ode::rk4_step(f, xn, state, h);
  }
  return jet;
}

AmplitudeJet transport_jet_march(const BoundaryMetricSource& src, const GOJet& phase,
                                 double chi) {
  if (phase.tangential_order < 2)
    throw ConfigError("transport_jet_march: box a0 needs the phase jet to order 2");
  const int nb = src.nb();
  auto sp = phase.phase.front().space_ptr();
  const int m = sp->size();
  const Vec& xp = phase.bc.xp;
  JointMarch jm{src, xp, sp, m};
  ode::Rhs f = [&jm](double s, const Vec& y) { return jm.rhs(s, y); };
  Poly a0init = Poly::constant(sp, chi);

  Vec start(2 * m);
  start.head(m) = real_coeffs(phase.phase.front());
  start.tail(m) = real_coeffs(a0init);

  AmplitudeJet out;
  out.chi = chi;
  // a0 along the GOJet grid (march phase and a0 together)
  Vec state = start;
  for (size_t k = 0; k < phase.depth.size(); ++k) {
    out.a0_depth.push_back(state[m]);
    if (k + 1 < phase.depth.size())
      state = ode::rk4_step(f, phase.depth[k], state, phase.depth[k + 1] - phase.depth[k]);
  }

  // d_n a0 at depths 0..4h, then a one-sided five-point derivative
  const double h = 1e-3;
  double r[5];
  state = start;
  Derived d0;
  for (int k = 0; k < 5; ++k) {
    Poly phi = from_real(sp, state.head(m)), a0 = from_real(sp, state.tail(m));
    Derived d = derive(src, xp, k * h, phi, a0);
    r[k] = d.a0rhs[0].real();
    if (k == 0) d0 = d;
    if (k < 4) state = ode::rk4_step(f, k * h, state, h);
  }
  out.a0 = chi;
  out.dn_a0 = r[0];
  out.dn2_a0 = (-25 * r[0] + 48 * r[1] - 36 * r[2] + 16 * r[3] - 3 * r[4]) / (12 * h);
  // box a0 at the base point; tangential derivatives of a0 vanish there
  out.box_a0 = out.dn2_a0 + d0.mp.dn_logD[0].real() * out.dn_a0;
  for (int a = 0; a < nb; ++a)
    for (int b = 0; b < nb; ++b) {
      const Poly& G = d0.mp.G[a * nb + b];
      out.box_a0 += (G * a0init.d(a).d(b))[0].real() +
                    ((G.d(a) + d0.mp.logD.d(a) * G) * a0init.d(b))[0].real();
    }
  out.a1 = 0;
  out.dn_a1 = cplx(0, 1) * out.box_a0 / (2 * phase.xi_n);
  return out;
}

// ---- recovery ----

namespace {

int sym_size(int nb) { return nb * (nb + 1) / 2; }

// row of the design matrix: coefficients of the upper-triangle unknowns in X xi xi
Vec quad_row(const Vec& xi) {
  const int nb = static_cast<int>(xi.size());
  Vec r(sym_size(nb));
  int k = 0;
  for (int a = 0; a < nb; ++a)
    for (int b = a; b < nb; ++b) r[k++] = (a == b ? 1 : 2) * xi[a] * xi[b];
  return r;
}

Mat unpack_sym(const Vec& x, int nb) {
  Mat X(nb, nb);
  int k = 0;
  for (int a = 0; a < nb; ++a)
    for (int b = a; b < nb; ++b) X(a, b) = X(b, a) = x[k++];
  return X;
}

struct LsResult {
  Vec x;
  double residual, condition;
};

LsResult solve_ls(const Mat& A, const Vec& rhs, const char* who) {
  if (A.rows() < A.cols())
    throw PreconditionError(std::string(who) + ": needs at least " + std::to_string(A.cols()) +
                            " samples");
  Eigen::JacobiSVD<Mat> svd(A);
  const Vec& sv = svd.singularValues();
  double cond = sv[sv.size() - 1] > 0 ? sv[0] / sv[sv.size() - 1]
                                       : std::numeric_limits<double>::infinity();
  if (!(cond < 1e10))
    throw NumericalError(std::string(who) + ": ill-conditioned covector set (condition " +
                         std::to_string(cond) + ")");
  Eigen::ColPivHouseholderQR<Mat> qr(A);
  LsResult r;
  r.x = qr.solve(rhs);
  r.residual = (A * r.x - rhs).norm();
  r.condition = cond;
  return r;
}

}  // namespace

MetricFit recover_boundary_metric(const std::vector<MetricSample>& samples) {
  if (samples.empty()) throw PreconditionError("recover_boundary_metric: no samples");
  const int nb = static_cast<int>(samples[0].bc.xi.size());
  Mat A(samples.size(), sym_size(nb));
  Vec rhs(samples.size());
  for (size_t i = 0; i < samples.size(); ++i) {
    A.row(i) = quad_row(samples[i].bc.xi).transpose();
    rhs[i] = -samples[i].xi_n * samples[i].xi_n;
  }
  LsResult ls = solve_ls(A, rhs, "recover_boundary_metric");
  return {unpack_sym(ls.x, nb), ls.residual, ls.condition};
}

NormalSample normal_sample(const BoundaryMetricSource& src, const BoundaryCovector& bc) {
  GOJet jet = eikonal_jet_march(src, bc, 1e-3, 1);
  auto sp = jet.phase.front().space_ptr();
  Derived d = derive(src, bc.xp, 0, jet.phase.front(), Poly::constant(sp, 1.0));
  return {bc, jet.xi_n, jet.dn2_phi, d.a0rhs[0].real()};
}

NormalJetFit recover_normal_jet(const std::vector<NormalSample>& samples,
                                std::shared_ptr<const BoundaryMetricSource> known,
                                NormalJetRoute route) {
  if (samples.empty()) throw PreconditionError("recover_normal_jet: no samples");
  const int nb = known->nb();
  if (route == NormalJetRoute::Auto)
    route = nb == 1 ? NormalJetRoute::Phase : NormalJetRoute::Amplitude;
  if (route == NormalJetRoute::Amplitude && nb == 1)
    throw PreconditionError(
        "recover_normal_jet: the amplitude identity is degenerate for one boundary dimension");
  FrozenBoundaryMetric ref(known);
  Mat A(samples.size(), sym_size(nb));
  Vec rhs(samples.size());
  for (size_t i = 0; i < samples.size(); ++i) {
    const NormalSample& s = samples[i];
    NormalSample r = normal_sample(ref, s.bc);
    A.row(i) = quad_row(s.bc.xi).transpose();
    if (route == NormalJetRoute::Amplitude)
      rhs[i] = 4 * s.xi_n * s.xi_n * (s.dn_a0 - r.dn_a0);
    else
      rhs[i] = -2 * s.xi_n * (s.dn2_phi - r.dn2_phi);
  }
  LsResult ls = solve_ls(A, rhs, "recover_normal_jet");
  Mat G = known->ginv(samples[0].bc.xp, 0);
  Mat Y = unpack_sym(ls.x, nb);
  NormalJetFit fit;
  fit.route = route;
  fit.residual = ls.residual;
  fit.condition = ls.condition;
  double detg = 1 / G.determinant(), lam;  // lam = d_n log|det g|
  if (route == NormalJetRoute::Amplitude) {
    fit.h_fit = Y;
    lam = G.lu().solve(Y).trace() / (nb - 1);
    fit.dn_ginv = Y - lam * G;
  } else {
    fit.dn_ginv = Y;
    lam = -G.lu().solve(Y).trace();
    fit.h_fit = Y + lam * G;
  }
  fit.dn_det_g = detg * lam;
  return fit;
}

}  // namespace lab

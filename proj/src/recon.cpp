#include "lab/recon.hpp"

#include <boost/math/quadrature/gauss_kronrod.hpp>

#include <algorithm>
#include <cmath>
#include <limits>

namespace lab {

namespace {

constexpr cplx I1(0, 1);

Vec cov(double t, double x, double y, double z) {
  Vec v(4);
  v << t, x, y, z;
  return v;
}

// Flat chart x = p + tau L + z^i E_i, with (tau, z) = M^{-1} (x - p), and
// the order-2 beam data tabulated on uniform tau nodes.
struct BeamTable {
  Vec p;
  Mat Minv;
  double lo = 0, dtau = 0;
  std::vector<CMat> H;
  std::vector<cplx> a0, a1;
  double freq = 1;
  bool conj = false;
  int power = 1;

  void locate(double tau, int& k, double& w) const {
    double u = (tau - lo) / dtau;
    k = std::clamp(static_cast<int>(std::floor(u)), 0, static_cast<int>(H.size()) - 2);
    w = u - k;
    if (w < -1e-9 || w > 1 + 1e-9) throw NumericalError("interaction: point outside beam chart");
  }

  // phase of the underlying beam at chart point c = (tau, z)
  cplx phase(const double* c, int& k, double& w) const {
    locate(c[0], k, w);
    const CMat& A = H[k];
    const CMat& B = H[k + 1];
    cplx q = 0;
    for (int i = 0; i < 3; ++i)
      for (int j = 0; j < 3; ++j)
        q += ((1 - w) * A(i, j) + w * B(i, j)) * (c[1 + i] * c[1 + j]);
    return c[1] + 0.5 * q;
  }
};

void chart_map(const GaussianBeam& b, Vec& p, Mat& Minv) {
  auto fr = b.chart().frame(0);
  p = fr.y;
  Mat M(4, 4);
  M.col(0) = fr.L;
  M.rightCols(3) = fr.E;
  Minv = M.inverse();
}

BeamTable tabulate(const InteractionBeam& ib, const GaussianBeam& b, double lo, double hi,
                   int nodes) {
  BeamTable t;
  chart_map(b, t.p, t.Minv);
  t.lo = lo;
  t.dtau = (hi - lo) / (nodes - 1);
  for (int k = 0; k < nodes; ++k) {
    auto s = b.slice(lo + k * t.dtau);
    t.H.push_back(s.H);
    t.a0.push_back(s.a0[0]);
    t.a1.push_back(s.a1[0]);
  }
  t.freq = ib.freq;
  t.conj = ib.conj;
  t.power = ib.power;
  return t;
}

}  // namespace

struct BeamTables {
  std::array<BeamTable, 4> plain, tilde;
};

namespace {

constexpr double kTauLo = -1.2, kTauHi = 1.2;
constexpr int kNodes = 2401;

std::shared_ptr<const BeamTables> build_tables(const InteractionSetup& s) {
  auto T = std::make_shared<BeamTables>();
  for (int j = 0; j < 4; ++j) {
    T->plain[j] = tabulate(s.beams[j], *s.beams[j].plain, kTauLo, kTauHi, kNodes);
    T->tilde[j] = tabulate(s.beams[j], *s.beams[j].tilde, kTauLo, kTauHi, kNodes);
  }
  return T;
}

cplx sum_phase(const std::array<BeamTable, 4>& tb, const Vec& x) {
  cplx S = 0;
  for (const auto& b : tb) {
    Vec c = b.Minv * (x - b.p);
    int k;
    double w;
    cplx ph = b.phase(c.data(), k, w);
    S += double(b.power) * b.freq * (b.conj ? -std::conj(ph) : ph);
  }
  return S;
}

Mat matrix_abs(const Mat& A) {
  Eigen::SelfAdjointEigenSolver<Mat> es(A);
  return es.eigenvectors() * es.eigenvalues().cwiseAbs().asDiagonal() *
         es.eigenvectors().transpose();
}

// Segment parameters of the closest approach of lines p + s u and q + t v.
void closest(const Vec& p, const Vec& u, const Vec& q, const Vec& v, double& s, double& t) {
  Vec w = p - q;
  double a = u.dot(u), b = u.dot(v), c = v.dot(v), d = u.dot(w), e = v.dot(w);
  double den = a * c - b * b;
  s = (b * e - c * d) / den;
  t = (a * e - b * d) / den;
}

}  // namespace

KappaCoefficients kappa_coefficients(double r0, double sigma, int sign) {
  if (!(sigma > 0 && sigma < 1)) throw PreconditionError("kappa_coefficients: need 0 < sigma < 1");
  if (!(r0 >= -1 && r0 <= 1)) throw PreconditionError("kappa_coefficients: need |r0| <= 1");
  if (sign != 1 && sign != -1) throw PreconditionError("kappa_coefficients: sign must be +-1");
  KappaCoefficients k;
  k.r0 = r0;
  k.sigma = sigma;
  k.sign = sign;
  const double rs = std::sqrt(1 - sigma * sigma), ro = sign * std::sqrt(1 - r0 * r0);
  k.theta[0] = cov(-1, ro, r0, 0);
  k.theta[1] = cov(-1, 1, 0, 0);
  k.theta[2] = cov(-1, rs, sigma, 0);
  k.theta[3] = cov(-1, rs, -sigma, 0);
  if ((k.theta[0] - k.theta[1]).norm() < 1e-12)
    throw PreconditionError("kappa_coefficients: theta_0 = theta_1 (degenerate)");
  k.alpha[0] = (-rs + ro) / (1 - rs);
  k.alpha[1] = (1 - ro) / (2 * (1 - rs)) + r0 / (2 * sigma);
  k.alpha[2] = (1 - ro) / (2 * (1 - rs)) - r0 / (2 * sigma);
  k.kappa = {1, -k.alpha[0], -k.alpha[1], -k.alpha[2]};
  Vec r = Vec::Zero(4);
  for (int j = 0; j < 4; ++j) r += k.kappa[j] * k.theta[j];
  k.residual = r.cwiseAbs().maxCoeff();
  return k;
}

InteractionSetup make_interaction_setup(const InteractionOptions& opt) {
  InteractionSetup s{.metric = make_preset("minkowski", 3, {{"ball", 1}, {"T", 3}}),
                     .q0 = opt.q0,
                     .k = kappa_coefficients(opt.r0, opt.sigma, opt.sign)};
  if (s.q0.size() == 0) s.q0 = cov(1.5, 0, 0, 0);
  if (s.q0.size() != 4 || s.q0.tail(3).norm() > 0.5)
    throw PreconditionError("interaction setup: q0 must lie in the inner half of the ball");
  s.amp_scale = opt.amp_scale;

  std::array<Vec, 4> start, dir;
  for (int j = 0; j < 4; ++j) {
    const Vec& th = s.k.theta[j];
    Vec L = th;
    L[0] = -th[0];  // raise the index with diag(-1, 1, 1, 1)
    Vec p = s.q0;
    if (opt.offsets[j].size() == 3) p.tail(3) += opt.offsets[j];
    start[j] = p;
    dir[j] = L;

    // boundary point of the ray: entry for the forward beams, exit for b0
    Vec c = p.tail(3), d = L.tail(3);
    double cd = c.dot(d), disc = cd * cd - c.squaredNorm() + 1;
    double tau_s = j == 0 ? -cd + std::sqrt(disc) : -cd - std::sqrt(disc);

    // chart cutoff radius delta / 2 = 4 leaves the beams untruncated in the ball
    auto chart = std::make_shared<FermiChart>(s.metric, p, L, kTauLo, kTauHi, 8.0);
    auto ric = std::make_shared<RiccatiSolution>(
        [chart](double t) { return chart->D(t); }, riccati_C(3), CMat::Identity(3, 3),
        opt.h0 * CMat::Identity(3, 3), tau_s, kTauLo, kTauHi);
    BeamOptions bo;
    bo.order = 2;
    bo.delta = 8.0;
    bo.a1 = A1Mode::None;
    auto& ib = s.beams[j];
    ib.plain = std::make_shared<GaussianBeam>(chart, ric, bo);
    bo.a1 = A1Mode::QDifference;
    bo.q = opt.q;
    ib.tilde = std::make_shared<GaussianBeam>(chart, ric, bo);
    double kap = s.k.kappa[j];
    ib.power = j == 3 ? 2 : 1;
    ib.freq = std::abs(kap) / ib.power;
    ib.conj = kap < 0;
    ib.tau_source = tau_s;
  }

  // rays may come close only near q0
  s.min_approach = std::numeric_limits<double>::infinity();
  for (int i = 0; i < 4; ++i)
    for (int j = i + 1; j < 4; ++j) {
      double a, b;
      closest(start[i], dir[i], start[j], dir[j], a, b);
      Vec pi = start[i] + a * dir[i], pj = start[j] + b * dir[j];
      double dist = (pi - pj).norm();
      bool at_q0 = dist < 1e-9 && (pi - s.q0).norm() <= opt.delta;
      if (!at_q0) s.min_approach = std::min(s.min_approach, dist);
      if (dist < 1e-9 && !at_q0)
        throw PreconditionError("interaction setup: rays " + std::to_string(i) + " and " +
                                std::to_string(j) + " meet away from q0");
    }
  s.tables = build_tables(s);
  return s;
}

cplx phase_sum(const InteractionSetup& s, const Vec& x) {
  cplx S = 0;
  for (const auto& b : s.beams) {
    Vec p;
    Mat Minv;
    chart_map(*b.plain, p, Minv);
    Vec c = Minv * (x - p);
    auto sl = b.plain->slice(c[0]);
    CVec z = c.tail(3).cast<cplx>();
    cplx ph = z[0] + 0.5 * (z.transpose() * sl.H * z).value();
    S += double(b.power) * b.freq * (b.conj ? -std::conj(ph) : ph);
  }
  return S;
}

std::vector<cplx> interaction_integrals(const InteractionSetup& s,
                                        const std::vector<IntegralTerm>& terms, double rho,
                                        const QuadratureOptions& qo) {
  if (!(rho > 0)) throw PreconditionError("interaction_integral: rho must be positive");
  if (qo.cells_per_width < 8)
    throw PreconditionError("resolution: need at least 8 cells across 1/sqrt(rho), got " +
                            std::to_string(qo.cells_per_width));
  const BeamTables& T = *s.tables;

  // Hessian of S at q0 by central differences (S is quadratic up to the slow
  // tau dependence of H)
  const double e = 1e-3;
  CMat Hs(4, 4);
  auto S = [&](const Vec& x) { return sum_phase(T.plain, x); };
  for (int i = 0; i < 4; ++i)
    for (int j = i; j < 4; ++j) {
      Vec ei = Vec::Unit(4, i) * e, ej = Vec::Unit(4, j) * e;
      cplx v = (S(s.q0 + ei + ej) - S(s.q0 + ei - ej) - S(s.q0 - ei + ej) + S(s.q0 - ei - ej)) /
               (4 * e * e);
      Hs(i, j) = Hs(j, i) = v;
    }
  Mat ImH = Hs.imag(), ReH = Hs.real();
  if (!(Eigen::SelfAdjointEigenSolver<Mat>(ImH).eigenvalues().minCoeff() > 0))
    throw NumericalError("interaction_integral: Im S is not positive definite at q0");

  // scaled coordinates: x = q0 + B xi, with P = Im + |Re| of Hess S brought to
  // the identity, so one unit of xi is one width of decay or oscillation.
  // Grid step: 1 / (cells sqrt(rho)) of physical length along each axis.
  Eigen::SelfAdjointEigenSolver<Mat> es(ImH + matrix_abs(ReH));
  Mat B = es.eigenvectors() * es.eigenvalues().cwiseSqrt().cwiseInverse().asDiagonal() /
          std::sqrt(rho);
  Mat K = rho * B.transpose() * ImH * B;  // Im(rho S) ~ xi^T K xi / 2
  Mat Kinv = K.inverse();
  const double cut = qo.decay + 2;
  std::array<int, 4> n;
  std::array<double, 4> hx;
  for (int i = 0; i < 4; ++i) {
    hx[i] = std::sqrt(es.eigenvalues()[i]) / qo.cells_per_width;
    n[i] = static_cast<int>(std::ceil(std::sqrt(2 * cut * Kinv(i, i)) / hx[i]));
  }
  const double cell = hx[0] * hx[1] * hx[2] * hx[3] * std::abs(B.determinant());

  // affine maps xi -> chart coordinates, per beam
  struct Map {
    Vec c0;
    Mat A;
  };
  std::array<Map, 4> maps;
  for (int j = 0; j < 4; ++j) {
    maps[j].c0 = T.plain[j].Minv * (s.q0 - T.plain[j].p);
    maps[j].A = T.plain[j].Minv * B;
  }
  for (int j = 0; j < 4; ++j) {
      double reach = std::abs(maps[j].c0[0]);
      for (int k = 0; k < 4; ++k) reach += std::abs(maps[j].A(0, k)) * n[k] * hx[k];
      if (reach > std::min(-kTauLo, kTauHi) - 0.01)
        throw PreconditionError("interaction_integral: quadrature box leaves the beam charts");
    }

  bool need_tilde = false;
  for (const auto& t : terms) need_tilde |= t.family == BeamFamily::Tilde;

  std::vector<cplx> acc(terms.size(), 0);
  Vec x(4), xi(4);
  double c[4];
  for (int i0 = -n[0]; i0 <= n[0]; ++i0)
    for (int i1 = -n[1]; i1 <= n[1]; ++i1)
      for (int i2 = -n[2]; i2 <= n[2]; ++i2)
        for (int i3 = -n[3]; i3 <= n[3]; ++i3) {
          xi << i0 * hx[0], i1 * hx[1], i2 * hx[2], i3 * hx[3];
          if (0.5 * xi.dot(K * xi) > cut) continue;
          cplx pp = s.amp_scale * s.amp_scale * s.amp_scale * s.amp_scale * s.amp_scale;
          cplx pt = pp;
          for (int j = 0; j < 4; ++j) {
            const auto& bp = T.plain[j];
            for (int r = 0; r < 4; ++r) c[r] = maps[j].c0[r] + maps[j].A.row(r).dot(xi);
            int k;
            double w;
            cplx ph = bp.phase(c, k, w);
            const double f = bp.freq * rho;
            cplx E = std::exp(I1 * f * ph);
            cplx a0 = (1 - w) * bp.a0[k] + w * bp.a0[k + 1];
            cplx vp = E * a0, vt = vp;
            if (need_tilde) {
              const auto& bt = T.tilde[j];
              vt = E * (a0 + ((1 - w) * bt.a1[k] + w * bt.a1[k + 1]) / f);
            }
            if (bp.conj) {
              vp = std::conj(vp);
              vt = std::conj(vt);
            }
            if (bp.power == 2) {
              vp *= vp;
              vt *= vt;
            }
            pp *= vp;
            pt *= vt;
          }
          x = s.q0 + B * xi;
          for (size_t t = 0; t < terms.size(); ++t) {
            double cf = terms[t].coef ? terms[t].coef(x) : 1.0;
            acc[t] += cf * (terms[t].family == BeamFamily::Plain ? pp : pt);
          }
        }
  for (auto& v : acc) v *= cell;
  return acc;
}

cplx interaction_integral(const InteractionSetup& s, const ScalarField& a,
                          const ScalarField& beta, double rho, BeamFamily family,
                          const QuadratureOptions& q) {
  ScalarField coef = a;
  if (beta) coef = [a, beta](const Vec& x) { return std::exp(beta(x)) * a(x); };
  return interaction_integrals(s, {{coef, family}}, rho, q)[0];
}

RatioReport recover_amplitude_ratio(const InteractionSetup& s, const ScalarField& a,
                                    const ScalarField& a_tilde, const ScalarField& beta,
                                    double rho_max, const QuadratureOptions& q) {
  RatioReport r;
  ScalarField ct = a_tilde;
  if (beta) ct = [a_tilde, beta](const Vec& x) { return std::exp(beta(x)) * a_tilde(x); };
  for (double f : {0.125, 0.25, 0.5, 1.0}) {
    double rho = f * rho_max;
    auto v = interaction_integrals(s, {{a, BeamFamily::Plain}, {ct, BeamFamily::Tilde}}, rho, q);
    r.rho.push_back(rho);
    r.plain.push_back(rho * rho * v[0]);
    r.tilde.push_back(rho * rho * v[1]);
    r.ratio.push_back(v[1] / v[0]);
  }
  // V(rho) = V_inf + c / rho: V_inf = 2 V(2 rho) - V(rho)
  auto rich = [](const std::vector<cplx>& v, int top) { return 2.0 * v[top] - v[top - 1]; };
  cplx Ep = rich(r.plain, 3), Et = rich(r.tilde, 3);
  cplx Pp = rich(r.plain, 2), Pt = rich(r.tilde, 2);
  r.extrapolated = Et / Ep;
  r.previous = Pt / Pp;
  r.ratio_estimate = r.extrapolated.real();
  r.residual = std::max(std::abs(Ep - Pp) / std::abs(Ep), std::abs(Et - Pt) / std::abs(Et));
  r.reliable = r.residual <= 0.05;
  return r;
}

ScalarField conjugation_potential(const ProductMetric& m, const ScalarField& beta,
                                  double h) {
  // q = -e^beta box_g e^-beta, box_g w = |g|^-1/2 d_i (|g|^1/2 g^ij d_j w)
  return [m, beta, h](const Vec& y) {
    const int d = static_cast<int>(y.size());
    auto w = [&](const Vec& p) { return std::exp(-beta(p)); };
    auto flux = [&](const Vec& p, int i) {
      Mat g = metric_at(m, p), gi = inverse_metric_at(m, p);
      double sq = std::sqrt(std::abs(g.determinant()));
      double f = 0;
      for (int j = 0; j < d; ++j) {
        Vec e = Vec::Unit(d, j) * h;
        f += gi(i, j) * (w(p + e) - w(p - e)) / (2 * h);
      }
      return sq * f;
    };
    double box = 0;
    for (int i = 0; i < d; ++i) {
      Vec e = Vec::Unit(d, i) * (h / 2);
      box += (flux(y + e, i) - flux(y - e, i)) / h;
    }
    box /= std::sqrt(std::abs(metric_at(m, y).determinant()));
    return -std::exp(beta(y)) * box;
  };
}

RayTransformSample ray_transform_q(const ProductMetric& m, const Vec& p0, const Vec& v0,
                                   const ScalarField& q, double s0) {
  RayTransformSample r;
  r.p0 = p0;
  r.v0 = v0;
  r.s0 = s0;
  const double lo = std::min(0.0, s0) - 0.05, hi = std::max(0.0, s0) + 0.05;
  auto chart = std::make_shared<FermiChart>(m, p0, v0, lo, hi);
  const int nt = chart->nt();
  auto ric = std::make_shared<RiccatiSolution>(
      [chart](double t) { return chart->D(t); }, riccati_C(nt), CMat::Identity(nt, nt),
      I1 * CMat::Identity(nt, nt), 0.0, lo, hi);
  auto with_q = amplitude_a1(ric, q, *chart, A1Mode::QDifference);
  auto without = amplitude_a1(ric, ScalarField(), *chart, A1Mode::QDifference);
  r.delta_a1 = with_q(s0) - without(s0);
  r.sqrt_detY = ric->sqrt_detY(s0);
  cplx ex = -2.0 * I1 * r.sqrt_detY * r.delta_a1;
  r.extracted = ex.real();
  r.extracted_imag = ex.imag();
  if (q && s0 != 0) {
    using boost::math::quadrature::gauss_kronrod;
    auto qs = [&](double s) { return q(chart->frame(s).y); };
    r.unweighted = gauss_kronrod<double, 31>::integrate(qs, 0.0, s0, 15, 1e-13);
    auto re = [&](double s) { return qs(s) * ric->sqrt_detY(s).real(); };
    auto im = [&](double s) { return qs(s) * ric->sqrt_detY(s).imag(); };
    r.weighted = {gauss_kronrod<double, 31>::integrate(re, 0.0, s0, 15, 1e-13),
                  gauss_kronrod<double, 31>::integrate(im, 0.0, s0, 15, 1e-13)};
  }
  return r;
}

double ray_transform_derivative(const ProductMetric& m, const Vec& p0, const Vec& v0,
                                const ScalarField& q, double s0, double ds) {
  return (ray_transform_q(m, p0, v0, q, s0 + ds).extracted -
          ray_transform_q(m, p0, v0, q, s0 - ds).extracted) /
         (2 * ds);
}

Detection detect_arrival(const std::vector<double>& trace, double dt, int window,
                         double threshold, double floor) {
  Detection d;
  const int n = static_cast<int>(trace.size());
  std::vector<double> d2(n, 0);
  for (int k = 1; k + 1 < n; ++k) d2[k] = (trace[k + 1] - 2 * trace[k] + trace[k - 1]) / (dt * dt);
  for (int k = 1; k + 1 < n; ++k) d.peak = std::max(d.peak, std::abs(d2[k]));
  // noise at k: the largest mean |d2| over any window of samples before k
  d.noise = floor;
  double run = 0;
  for (int k = 1; k + 1 < n; ++k) {
    if (k > window) {
      if (std::abs(d2[k]) > threshold * d.noise) {
        d.index = k;
        break;
      }
      run -= std::abs(d2[k - window]);
    }
    run += std::abs(d2[k]);
    if (k >= window) d.noise = std::max(d.noise, run / window);
  }
  return d;
}

ArrivalReport observation_set_from_data(const ProductMetric& m, const Vec& q0,
                                        const ScalarField& a, const ArrivalOptions& opt) {
  if (m.spatial_dim() != 1)
    throw PreconditionError("observation_set_from_data: arrival detection is 1+1 only");
  if (!m.is_static)
    throw ConfigError("observation_set_from_data: sources are placed by time reflection, "
                      "which needs a static metric");
  ArrivalReport rep;
  rep.q0 = q0;
  const Domain& dom = m.inner();
  const double xa = dom.lo[0], xb = dom.hi[0];

  // Forward rays give the observation set; in a static metric the backward
  // ray in the same direction meets the same face equally long before q0.
  auto hits = earliest_observation_set(m, q0, 2);
  std::array<double, 2> t_geo{0, 0}, t_src{0, 0};
  std::array<bool, 2> seen{false, false};
  for (const auto& h : hits) {
    if (h.censored) throw PreconditionError("observation_set_from_data: censored ray from q0");
    int face = std::abs(h.point[1] - xa) < std::abs(h.point[1] - xb) ? 0 : 1;
    t_geo[face] = h.point[0];
    t_src[face] = 2 * q0[0] - h.point[0];
    seen[face] = true;
  }
  if (!seen[0] || !seen[1]) throw NumericalError("observation_set_from_data: missing face hit");
  rep.shift = std::max(0.0, -std::min(t_src[0], t_src[1]));
  rep.source_times = {t_src[0], t_src[1]};

  const double w = opt.width, s = rep.shift;
  std::array<BoundaryData, 4> f{
      face_pulse(0, t_src[0] + s + w, w, 1), face_pulse(0, t_src[0] + s + 0.8 * w, 0.8 * w, 1),
      face_pulse(1, t_src[1] + s + w, w, 1), face_pulse(1, t_src[1] + s + 0.8 * w, 0.8 * w, 1)};
  WaveMetric g = wave_metric(m);
  double T = std::max(t_geo[0], t_geo[1]) + s + opt.margin;
  GridSpec gs = make_grid(g, dom, opt.h, T, opt.cfl);
  auto r = dn_fourth_mixed(g, {}, a, f, {opt.eps, opt.eps, opt.eps, opt.eps}, gs, false);
  // roundoff of the stencil, with the same constant as dn_fourth_mixed's bound
  auto lin = solve_linear(g, {}, sum({f[0], f[1], f[2], f[3]}, {opt.eps, opt.eps, opt.eps, opt.eps}),
                          gs).dn;

  for (int face = 0; face < 2; ++face) {
    const Mat& N = r.u4.faces[face].neumann;
    std::vector<double> tr(N.rows());
    for (int k = 0; k < N.rows(); ++k) tr[k] = N(k, 0);
    const Mat& NL = lin.faces[face].neumann;
    double lmax = 0;
    for (int k = 1; k + 1 < NL.rows(); ++k)
      lmax = std::max(lmax, std::abs(NL(k + 1, 0) - 2 * NL(k, 0) + NL(k - 1, 0)) / (gs.dt * gs.dt));
    double floor = 1e-13 * lmax / std::pow(opt.eps, 4);
    auto det = detect_arrival(tr, gs.dt, opt.noise_window, opt.threshold, floor);
    ArrivalEntry e;
    e.face = face;
    e.t_geometric = t_geo[face];
    e.noise = det.noise;
    e.peak = det.peak;
    if (det.index < 0) {
      e.censored = true;
    } else {
      e.t_detected = r.u4.t[det.index] - s;
      e.cell_error = (e.t_detected - e.t_geometric) / opt.h;
    }
    rep.faces.push_back(e);
  }
  return rep;
}

}  // namespace lab

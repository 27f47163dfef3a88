#include "lab/beams.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <numbers>

namespace lab {

namespace {

constexpr cplx I1(0, 1);

Vec to_real(const CVec& c) {
  Vec r(2 * c.size());
  r.head(c.size()) = c.real();
  r.tail(c.size()) = c.imag();
  return r;
}

CVec to_complex(const Vec& r) {
  const Eigen::Index n = r.size() / 2;
  CVec c(n);
  for (Eigen::Index i = 0; i < n; ++i) c[i] = cplx(r[i], r[n + i]);
  return c;
}

double min_eig_sym(const Mat& A) {
  Eigen::SelfAdjointEigenSolver<Mat> es(0.5 * (A + A.transpose()), Eigen::EigenvaluesOnly);
  return es.eigenvalues().minCoeff();
}

// Gamma^i(a, b) for all i
Vec gamma_contract(const std::vector<Mat>& gam, const Vec& a, const Vec& b) {
  Vec r(gam.size());
  for (size_t i = 0; i < gam.size(); ++i) r[static_cast<Eigen::Index>(i)] = a.dot(gam[i] * b);
  return r;
}

// 8th-order central stencils
constexpr std::array<double, 9> kD1 = {1.0 / 280, -4.0 / 105, 1.0 / 5, -4.0 / 5, 0,
                                       4.0 / 5,   -1.0 / 5,   4.0 / 105, -1.0 / 280};
constexpr std::array<double, 9> kD2 = {-1.0 / 560, 8.0 / 315, -1.0 / 5, 8.0 / 5, -205.0 / 72,
                                       8.0 / 5,    -1.0 / 5,  8.0 / 315, -1.0 / 560};

}  // namespace

// ---------------------------------------------------------------- NodePath

NodePath::NodePath(ode::Rhs f, double t_init, const Vec& y_init, double lo, double hi,
                   double spacing, double tol)
    : f_(std::move(f)), lo_(lo), hi_(hi), h_(spacing) {
  if (!(lo <= t_init && t_init <= hi)) throw PreconditionError("NodePath: start outside range");
  const int kl = static_cast<int>(std::ceil((t_init - lo) / spacing - 1e-9));
  const int kh = static_cast<int>(std::ceil((hi - t_init) / spacing - 1e-9));
  k0_ = kl;
  t_.resize(kl + kh + 1);
  y_.resize(kl + kh + 1);
  t_[kl] = t_init;
  y_[kl] = y_init;
  for (int k = kl + 1; k <= kl + kh; ++k) {
    t_[k] = t_init + (k - kl) * spacing;
    y_[k] = ode::integrate(f_, t_[k - 1], y_[k - 1], t_[k], tol, spacing);
  }
  for (int k = kl - 1; k >= 0; --k) {
    t_[k] = t_init + (k - kl) * spacing;
    y_[k] = ode::integrate(f_, t_[k + 1], y_[k + 1], t_[k], tol, spacing);
  }
}

Vec NodePath::at(double t) const {
  if (t_.empty()) throw PreconditionError("NodePath: empty");
  int k = k0_ + static_cast<int>(std::lround((t - t_[k0_]) / h_));
  k = std::clamp(k, 0, static_cast<int>(t_.size()) - 1);
  double dt = t - t_[k];
  if (dt == 0) return y_[k];
  const int steps = std::max(1, static_cast<int>(std::ceil(std::abs(dt) / 0.0025)));
  Vec y = y_[k];
  double s = t_[k], h = dt / steps;
  for (int i = 0; i < steps; ++i, s += h) y = ode::rk4_step(f_, s, y, h);
  return y;
}

// ---------------------------------------------------------------- FermiChart

FermiChart::FermiChart(const ProductMetric& m, const Vec& p0, const Vec& v0, double tau_lo,
                       double tau_hi, double delta)
    : m_(m), n_(m.spatial_dim()), lo_(tau_lo), hi_(tau_hi), delta_(delta) {
  const int n = n_, d = n + 1;
  if (!(tau_lo <= 0 && 0 <= tau_hi)) throw PreconditionError("FermiChart: tau range must contain 0");
  if (delta <= 0) throw PreconditionError("FermiChart: delta must be positive");
  Mat g = metric_at(m, p0);
  if (std::abs(v0.dot(g * v0)) > 1e-8 * v0.squaredNorm())
    throw PreconditionError("FermiChart: reference velocity is not null");
  const double alpha = m.alpha(p0).v, S = m.scale(p0).v;
  Vec w = v0.tail(n);
  Mat E(d, n);
  E.col(0) << -1 / (2 * alpha * v0[0]), w / (2 * S * w.squaredNorm());
  // spatial unit vectors orthogonal to w
  std::vector<Vec> basis{w.normalized()};
  for (int i = 0; i < n && static_cast<int>(basis.size()) < n; ++i) {
    Vec e = Vec::Unit(n, i);
    for (const Vec& b : basis) e -= e.dot(b) * b;
    if (e.norm() < 0.3) continue;
    basis.push_back(e.normalized());
  }
  for (int a = 1; a < n; ++a) {
    E.col(a).setZero();
    E.col(a).tail(n) = basis[a] / std::sqrt(S);
  }
  Vec st(d * (2 + n));
  st << p0, v0, Eigen::Map<const Vec>(E.data(), d * n);
  if (m.flat) {
    frame_path_ = NodePath([](double, const Vec& s) {
      Vec r = Vec::Zero(s.size());
      const Eigen::Index dd = s.size() / 2;  // only y moves
      (void)dd;
      return r;
    }, 0, st, tau_lo, tau_hi, std::max(tau_hi - tau_lo, 1e-3));
  } else {
    const ProductMetric* mp = &m_;
    frame_path_ = NodePath(
        [mp, d, n](double, const Vec& s) {
          Vec y = s.head(d), v = s.segment(d, d);
          auto gam = christoffel_at(*mp, y);
          Vec r(s.size());
          r.head(d) = v;
          r.segment(d, d) = -gamma_contract(gam, v, v);
          for (int i = 0; i < n; ++i)
            r.segment(d * (2 + i), d) = -gamma_contract(gam, v, s.segment(d * (2 + i), d));
          return r;
        },
        0, st, tau_lo, tau_hi, 0.01, 1e-12);
    // conjugate-point monitor: the exponential map must stay nondegenerate out to delta/2
    const auto& ts = frame_path_.times();
    for (size_t k = 0; k < ts.size(); k += 10) {
      Mat J0 = jacobian(ts[k], Vec::Zero(n));
      double d0 = std::abs(J0.determinant());
      for (int i = 0; i < n; ++i)
        for (double sg : {-1.0, 1.0}) {
          Vec z = Vec::Zero(n);
          z[i] = sg * delta / 2;
          double r = std::abs(jacobian(ts[k], z).determinant()) / d0;
          if (r < 0.1)
            throw NumericalError("conjugate point near tau = " + std::to_string(ts[k]) +
                                 " within the chart width");
        }
    }
  }
}

FermiChart::Frame FermiChart::frame(double tau) const {
  const int d = n_ + 1;
  Frame f;
  if (flat()) {
    const Vec& s = frame_path_.states().front();
    f.L = s.segment(d, d);
    f.y = s.head(d) + tau * f.L;
    f.E = Eigen::Map<const Mat>(s.data() + 2 * d, d, n_);
    return f;
  }
  Vec s = frame_path_.at(tau);
  f.y = s.head(d);
  f.L = s.segment(d, d);
  f.E = Eigen::Map<const Mat>(s.data() + 2 * d, d, n_);
  return f;
}

Vec FermiChart::forward(double tau, const Vec& z) const {
  Frame f = frame(tau);
  Vec v = f.E * z;
  if (flat() || z.squaredNorm() == 0) return f.y + v;
  Vec st(2 * f.y.size());
  st << f.y, v;
  const ProductMetric* mp = &m_;
  Vec e = ode::integrate([mp](double, const Vec& s) { return geodesic_rhs(*mp, s); }, 0, st, 1,
                         1e-12, 0.05);
  return e.head(f.y.size());
}

Mat FermiChart::jacobian(double tau, const Vec& z) const {
  const int d = n_ + 1;
  Frame f = frame(tau);
  Mat J(d, d);
  if (flat()) {
    J << f.L, f.E;
    return J;
  }
  Mat Jy0 = Mat::Zero(d, d), Jv0(d, d);
  Jy0.col(0) = f.L;
  Vec v = f.E * z;
  Jv0.col(0) = -gamma_contract(christoffel_at(m_, f.y), f.L, v);
  Jv0.rightCols(n_) = f.E;
  FlowState fl = geodesic_flow(m_, f.y, v, Jy0, Jv0, 1.0, 1e-12);
  return fl.Jy;
}

Mat FermiChart::pullback_metric(double tau, const Vec& z) const {
  Mat J = jacobian(tau, z);
  return J.transpose() * metric_at(m_, forward(tau, z)) * J;
}

Mat FermiChart::D(double tau) const {
  Mat D = Mat::Zero(n_, n_);
  if (flat()) return D;
  Frame f = frame(tau);
  for (int i = 0; i < n_; ++i)
    for (int j = i; j < n_; ++j)
      D(i, j) = D(j, i) = 0.5 * riemann_contract(m_, f.y, f.L, f.E.col(i), f.L, f.E.col(j));
  return D;
}

std::optional<Vec> FermiChart::inverse(const Vec& x) const {
  const int d = n_ + 1;
  Vec xi(d);
  if (flat()) {
    Frame f = frame(0);
    Mat A(d, d);
    A << f.L, f.E;
    xi = A.partialPivLu().solve(x - f.y);
  } else {
    const auto& ts = frame_path_.times();
    const auto& ys = frame_path_.states();
    size_t best = 0;
    for (size_t k = 1; k < ts.size(); ++k)
      if ((ys[k].head(d) - x).norm() < (ys[best].head(d) - x).norm()) best = k;
    xi.setZero();
    xi[0] = ts[best];
    bool ok = false;
    for (int it = 0; it < 30; ++it) {
      Vec r = forward(xi[0], xi.tail(n_)) - x;
      if (r.norm() < 1e-12) {
        ok = true;
        break;
      }
      xi -= jacobian(xi[0], xi.tail(n_)).partialPivLu().solve(r);
      if (xi[0] < lo_ - 1 || xi[0] > hi_ + 1 || xi.tail(n_).norm() > delta_) return std::nullopt;
    }
    if (!ok) return std::nullopt;
  }
  if (xi[0] < lo_ || xi[0] > hi_ || xi.tail(n_).norm() >= delta_) return std::nullopt;
  return xi;
}

FermiChart build_fermi_chart(const ProductMetric& m, const BrokenNullGeodesic& g, int segment,
                             double delta) {
  if (segment < 0 || segment >= static_cast<int>(g.segments.size()))
    throw PreconditionError("build_fermi_chart: no such segment");
  const auto& seg = g.segments[segment];
  return FermiChart(m, seg.front().y, seg.front().v, 0, seg.back().s - seg.front().s, delta);
}

// ---------------------------------------------------------------- Riccati

CMat riccati_C(int nt) {
  CMat C = CMat::Zero(nt, nt);
  for (int i = 1; i < nt; ++i) C(i, i) = 2;
  return C;
}

RiccatiSolution::RiccatiSolution(MatPath D, CMat C, const CMat& Y0, const CMat& H0,
                                 double tau0, double tau_lo, double tau_hi,
                                 bool require_positive, double spacing)
    : D_(std::move(D)), C_(std::move(C)), tau0_(tau0) {
  const int nt = static_cast<int>(C_.rows());
  if (Y0.rows() != nt || H0.rows() != nt) throw PreconditionError("solve_riccati: shape");
  if (std::abs(Y0.determinant()) < 1e-14) throw PreconditionError("solve_riccati: Y0 singular");
  if (require_positive && min_eig_sym(H0.imag()) <= 0)
    throw PreconditionError("solve_riccati: Im H0 must be positive definite");
  const int q = nt * nt;
  CVec s0(2 * q);
  CMat Z0 = H0 * Y0;
  s0.head(q) = Eigen::Map<const CVec>(Y0.data(), q);
  s0.tail(q) = Eigen::Map<const CVec>(Z0.data(), q);
  CMat Cc = C_;
  MatPath Df = D_;
  path_ = NodePath(
      [Cc, Df, nt, q](double t, const Vec& r) {
        CVec s = to_complex(r);
        Eigen::Map<const CMat> Y(s.data(), nt, nt), Z(s.data() + q, nt, nt);
        CVec o(2 * q);
        Eigen::Map<CMat> dY(o.data(), nt, nt), dZ(o.data() + q, nt, nt);
        dY = Cc * Z;
        dZ = -Df(t).cast<cplx>() * Y;
        return to_real(o);
      },
      tau0, to_real(s0), tau_lo, tau_hi, spacing);

  const auto& ts = path_.times();
  arg_.resize(ts.size());
  const int k0 = static_cast<int>(std::find(ts.begin(), ts.end(), tau0) - ts.begin());
  auto principal = [&](int k) { return std::arg(unpack(path_.states()[k], 0).determinant()); };
  arg_[k0] = principal(k0);
  for (int k = k0 + 1; k < static_cast<int>(ts.size()); ++k) {
    double a = principal(k);
    arg_[k] = a + 2 * std::numbers::pi * std::round((arg_[k - 1] - a) / (2 * std::numbers::pi));
  }
  for (int k = k0 - 1; k >= 0; --k) {
    double a = principal(k);
    arg_[k] = a + 2 * std::numbers::pi * std::round((arg_[k + 1] - a) / (2 * std::numbers::pi));
  }
  c0_ = conserved(tau0);
  for (double t : ts) {
    CMat Y = this->Y(t);
    if (std::abs(Y.determinant()) < 1e-12) throw NumericalError("Riccati: Y degenerate");
    CMat H = this->H(t);
    if ((H - H.transpose()).cwiseAbs().maxCoeff() > 1e-9 * std::max(1.0, H.cwiseAbs().maxCoeff()))
      throw NumericalError("Riccati: H lost symmetry at tau = " + std::to_string(t));
    if (require_positive && min_eig_sym(H.imag()) <= 0)
      throw NumericalError("Riccati: Im H lost positivity at tau = " + std::to_string(t));
  }
}

CMat RiccatiSolution::unpack(const Vec& s, int which) const {
  const int nt = this->nt(), q = nt * nt;
  CVec c = to_complex(s);
  return Eigen::Map<const CMat>(c.data() + which * q, nt, nt);
}

CMat RiccatiSolution::Y(double tau) const { return unpack(path_.at(tau), 0); }
CMat RiccatiSolution::Z(double tau) const { return unpack(path_.at(tau), 1); }

CMat RiccatiSolution::H(double tau) const {
  Vec s = path_.at(tau);
  CMat Y = unpack(s, 0), Z = unpack(s, 1);
  return Y.transpose().partialPivLu().solve(Z.transpose()).transpose();
}

cplx RiccatiSolution::detY(double tau) const { return Y(tau).determinant(); }

cplx RiccatiSolution::sqrt_detY(double tau) const {
  cplx dY = detY(tau);
  if (std::abs(dY) < 1e-12) throw NumericalError("det Y near zero: square-root branch ambiguous");
  const auto& ts = path_.times();
  double h = ts.size() > 1 ? ts[1] - ts[0] : 1;
  int k = std::clamp(static_cast<int>(std::lround((tau - ts[0]) / h)), 0,
                     static_cast<int>(ts.size()) - 1);
  double a = std::arg(dY);
  a += 2 * std::numbers::pi * std::round((arg_[k] - a) / (2 * std::numbers::pi));
  return std::sqrt(std::abs(dY)) * std::exp(I1 * (a / 2));
}

double RiccatiSolution::conserved(double tau) const {
  Vec s = path_.at(tau);
  CMat Y = unpack(s, 0), Z = unpack(s, 1);
  CMat H = Y.transpose().partialPivLu().solve(Z.transpose()).transpose();
  Mat ImH = 0.5 * (H.imag() + H.imag().transpose());
  return ImH.determinant() * std::norm(Y.determinant());
}

RiccatiSolution solve_riccati(MatPath D, const CMat& C, const CMat& Y0, const CMat& H0,
                              double tau_lo, double tau_hi) {
  return RiccatiSolution(std::move(D), C, Y0, H0, tau_lo, tau_lo, tau_hi);
}

ComplexPath amplitude_a0(std::shared_ptr<const RiccatiSolution> ric) {
  return [ric](double tau) { return 1.0 / ric->sqrt_detY(tau); };
}

// ---------------------------------------------------------------- jets

JetSystem::JetSystem(std::shared_ptr<const FermiChart> chart, int order, A1Mode mode,
                     ScalarField q, bool q_in_a1)
    : chart_(std::move(chart)), N_(order), nt_(chart_->nt()), mode_(mode), q_(std::move(q)),
      q_in_a1_(q_in_a1) {
  if (!chart_->flat()) throw ConfigError("transverse jets are available on flat charts only");
  if (order < 2 || order > 6) throw ConfigError("beam order must be in [2, 6]");
  if (mode == A1Mode::Full && order < 4)
    throw ConfigError("full a1 mode needs order >= 4 (a0 jets to degree 2)");
  sp_ = std::make_shared<PolySpace>(nt_, N_);
  C_ = riccati_C(nt_);
  size_ = 2 * nt_ * nt_ + (N_ - 2) * sp_->size() + 2 * sp_->size();
}

JetSystem::Unpacked JetSystem::unpack(const CVec& s) const {
  const int q = nt_ * nt_, S = sp_->size();
  Unpacked u;
  u.Y = Eigen::Map<const CMat>(s.data(), nt_, nt_);
  u.Z = Eigen::Map<const CMat>(s.data() + q, nt_, nt_);
  u.phi.assign(N_ + 1, Poly(sp_));
  u.phi[1] = Poly::variable(sp_, 0);
  int off = 2 * q;
  for (int m = 3; m <= N_; ++m, off += S) u.phi[m] = Poly(sp_, s.segment(off, S));
  u.a0 = Poly(sp_, s.segment(off, S));
  u.a1 = Poly(sp_, s.segment(off + S, S));
  return u;
}

CVec JetSystem::pack(const Unpacked& u) const {
  const int q = nt_ * nt_, S = sp_->size();
  CVec s(size_);
  s.head(q) = Eigen::Map<const CVec>(u.Y.data(), q);
  s.segment(q, q) = Eigen::Map<const CVec>(u.Z.data(), q);
  int off = 2 * q;
  for (int m = 3; m <= N_; ++m, off += S) s.segment(off, S) = u.phi[m].coeffs();
  s.segment(off, S) = u.a0.coeffs();
  s.segment(off + S, S) = u.a1.coeffs();
  return s;
}

Poly JetSystem::phase(const Unpacked& u) const {
  CMat H = u.Y.transpose().partialPivLu().solve(u.Z.transpose()).transpose();
  Poly p = Poly::variable(sp_, 0) + Poly::quadratic(sp_, H);
  for (int m = 3; m <= N_; ++m) p += u.phi[m];
  return p;
}

CVec JetSystem::rhs(double tau, const CVec& s) const {
  Unpacked u = unpack(s);
  CMat H = u.Y.transpose().partialPivLu().solve(u.Z.transpose()).transpose();
  CMat Hp = -H * C_ * H;
  std::vector<Poly> P = u.phi, Pt(N_ + 1, Poly(sp_));
  P[2] = Poly::quadratic(sp_, H);
  Pt[2] = Poly::quadratic(sp_, Hp);
  // eikonal, degree m: d_tau phi_m = -sum_j d_tau phi_j d_1 phi_{m-j+1}
  //                                  - 1/2 sum_a sum_{j+k=m} d_a phi_{j+1} d_a phi_{k+1}
  for (int m = 3; m <= N_; ++m) {
    Poly acc(sp_);
    for (int j = 2; j <= m - 1; ++j) acc += Pt[j] * P[m - j + 1].d(0);
    for (int a = 1; a < nt_; ++a)
      for (int j = 1; j <= m - 1; ++j) acc += P[j + 1].d(a) * P[m - j + 1].d(a) * 0.5;
    Pt[m] = acc.part(m) * -1.0;
  }
  Poly phi(sp_), phit(sp_);
  for (int m = 1; m <= N_; ++m) phi += P[m];
  for (int m = 2; m <= N_; ++m) phit += Pt[m];
  Poly box_phi = phit.d(0) * 2.0;
  for (int a = 1; a < nt_; ++a) box_phi += phi.d(a).d(a);
  Poly phi1m = phi.d(0) - Poly::constant(sp_, 1);

  // transport T a = 2 <dphi, da> + (box phi) a, solved degree by degree for d_tau a0
  const int d0 = N_ - 2;
  Poly base = phit * u.a0.d(0) * 2.0 + box_phi * u.a0;
  for (int a = 1; a < nt_; ++a) base += phi.d(a) * u.a0.d(a) * 2.0;
  Poly A(sp_);
  for (int d = 0; d <= d0; ++d) {
    Poly R = base + phi1m * A * 2.0;
    A += R.part(d) * -0.5;
  }
  // a1 at degree 0: T a1 = i (box + q) a0
  Poly A1(sp_);
  if (mode_ != A1Mode::None) {
    cplx src = 0;
    if (mode_ == A1Mode::Full) {
      cplx box_a0 = 2.0 * A.d(0)[0];
      for (int a = 1; a < nt_; ++a) box_a0 += u.a0.d(a).d(a)[0];
      src += box_a0;
    }
    if (q_ && q_in_a1_) src += q_(chart_->frame(tau).y) * u.a0[0];
    A1[0] = 0.5 * (I1 * src - box_phi[0] * u.a1[0]);
  }
  Unpacked du;
  du.Y = C_ * u.Z;
  du.Z = CMat::Zero(nt_, nt_);
  du.phi = std::vector<Poly>(N_ + 1, Poly(sp_));
  for (int m = 3; m <= N_; ++m) du.phi[m] = Pt[m];
  du.a0 = A;
  du.a1 = A1;
  return pack(du);
}

std::vector<std::array<Poly, 3>> JetSystem::derivatives(double tau, const CVec& s) const {
  const double h = 5e-3;
  auto f = [this](double t, const Vec& r) { return to_real(rhs(t, to_complex(r))); };
  std::array<CVec, 5> st;
  st[2] = s;
  Vec r = to_real(s);
  Vec a = r, b = r;
  for (int k = 1; k <= 2; ++k) {
    a = ode::rk4_step(f, tau + (k - 1) * h, a, h);
    b = ode::rk4_step(f, tau - (k - 1) * h, b, -h);
    st[2 + k] = to_complex(a);
    st[2 - k] = to_complex(b);
  }
  std::array<std::array<Poly, 3>, 5> v;
  for (int k = 0; k < 5; ++k) {
    Unpacked u = unpack(st[k]);
    v[k] = {phase(u), u.a0, u.a1};
  }
  std::vector<std::array<Poly, 3>> out(3);
  for (int c = 0; c < 3; ++c) {
    out[0][c] = v[2][c];
    out[1][c] = (v[0][c] - v[1][c] * 8.0 + v[3][c] * 8.0 - v[4][c]) * (1.0 / (12 * h));
    out[2][c] =
        (v[0][c] * -1.0 + v[1][c] * 16.0 - v[2][c] * 30.0 + v[3][c] * 16.0 - v[4][c]) *
        (1.0 / (12 * h * h));
  }
  return out;
}

// ---------------------------------------------------------------- beams

GaussianBeam::GaussianBeam(std::shared_ptr<const FermiChart> chart,
                           std::shared_ptr<const RiccatiSolution> ric, BeamOptions opt)
    : chart_(std::move(chart)), ric_(std::move(ric)), opt_(std::move(opt)) {
  if (ric_->nt() != chart_->nt()) throw PreconditionError("beam: chart/Riccati dimension mismatch");
  if (chart_->flat()) {
    jets_ = std::make_shared<JetSystem>(chart_, opt_.order, opt_.a1, opt_.q, opt_.q_in_a1);
    const double t0 = ric_->tau0();
    JetSystem::Unpacked u = jets_->unpack(CVec::Zero(jets_->size()));
    u.Y = ric_->Y(t0);
    u.Z = ric_->Z(t0);
    u.a0[0] = opt_.a0_init / ric_->sqrt_detY(t0);
    u.a1[0] = opt_.a1_init;
    auto js = jets_;
    jet_path_ = NodePath(
        [js](double t, const Vec& r) { return to_real(js->rhs(t, to_complex(r))); }, t0,
        to_real(jets_->pack(u)), ric_->tau_lo(), ric_->tau_hi(), opt_.spacing);
  } else {
    if (opt_.order != 2) throw ConfigError("beam orders above 2 need a flat chart");
    if (opt_.a1 == A1Mode::Full) throw ConfigError("full a1 mode needs a0 jets (flat chart)");
    auto a0p = amplitude_a0(ric_);
    const cplx c0 = opt_.a0_init, c1 = opt_.a1_init * ric_->sqrt_detY(ric_->tau0());
    a0_ = [a0p, c0](double t) { return c0 * a0p(t); };
    ComplexPath d1 = opt_.a1 == A1Mode::QDifference && opt_.q_in_a1
                         ? amplitude_a1(ric_, opt_.q, *chart_, A1Mode::QDifference)
                         : ComplexPath([](double) { return cplx(0); });
    a1_ = [a0p, c0, c1, d1](double t) { return c1 * a0p(t) + c0 * d1(t); };
  }
  init_common();
}

GaussianBeam::GaussianBeam(std::shared_ptr<const FermiChart> chart,
                           std::shared_ptr<const RiccatiSolution> ric, BeamOptions opt,
                           const CVec& jet_state)
    : chart_(std::move(chart)), ric_(std::move(ric)), opt_(std::move(opt)) {
  jets_ = std::make_shared<JetSystem>(chart_, opt_.order, opt_.a1, opt_.q, opt_.q_in_a1);
  if (jet_state.size() != jets_->size()) throw PreconditionError("beam: jet state size");
  auto js = jets_;
  jet_path_ = NodePath([js](double t, const Vec& r) { return to_real(js->rhs(t, to_complex(r))); },
                       ric_->tau0(), to_real(jet_state), ric_->tau_lo(), ric_->tau_hi(),
                       opt_.spacing);
  init_common();
}

void GaussianBeam::init_common() {
  sp_ = jets_ ? jets_->space() : std::make_shared<PolySpace>(chart_->nt(), 2);
  lambda_min_ = 1e300;
  for (double t : ric_->nodes())
    if (t >= chart_->tau_lo() - 1e-12 && t <= chart_->tau_hi() + 1e-12)
      lambda_min_ = std::min(lambda_min_, min_eig_sym(ric_->H(t).imag()));
}

CVec GaussianBeam::jet_state(double tau) const {
  if (!jets_) throw ConfigError("beam has no jet state (curved chart)");
  return to_complex(jet_path_.at(tau));
}

GaussianBeam::Slice GaussianBeam::slice(double tau) const {
  Slice s{tau, CMat(), Poly(sp_), Poly(sp_), Poly(sp_)};
  if (jets_) {
    auto u = jets_->unpack(jet_state(tau));
    s.H = u.Y.transpose().partialPivLu().solve(u.Z.transpose()).transpose();
    s.phase = jets_->phase(u);
    s.a0 = u.a0;
    s.a1 = u.a1;
  } else {
    s.H = ric_->H(tau);
    s.phase = Poly::variable(sp_, 0) + Poly::quadratic(sp_, s.H);
    s.a0 = Poly::constant(sp_, a0_(tau));
    s.a1 = Poly::constant(sp_, a1_(tau));
  }
  return s;
}

cplx GaussianBeam::eval_slice(const Slice& s, const Vec& z, double rho) const {
  double r = z.norm() / chart_->delta();
  if (r >= 0.5) return 0;
  std::vector<double> m(sp_->size());
  sp_->monomials(z.data(), m.data());
  cplx amp = s.a0.dot(m.data()) + s.a1.dot(m.data()) / rho;
  return std::exp(I1 * rho * s.phase.dot(m.data())) * cutoff(r) * amp;
}

cplx GaussianBeam::eval_chart(double tau, const Vec& z, double rho) const {
  return eval_slice(slice(tau), z, rho);
}

ComplexPath amplitude_a1(std::shared_ptr<const RiccatiSolution> ric, const ScalarField& q,
                         const FermiChart& chart, A1Mode mode) {
  if (mode == A1Mode::None) return [](double) { return cplx(0); };
  if (mode == A1Mode::Full) {
    if (!chart.flat()) throw ConfigError("full a1 mode needs a0 jets (flat chart)");
    BeamOptions o;
    o.order = 4;
    o.a1 = A1Mode::Full;
    o.q = q;
    auto b = std::make_shared<GaussianBeam>(std::make_shared<FermiChart>(chart), ric, o);
    return [b](double t) { return b->slice(t).a1[0]; };
  }
  if (!q) return [](double) { return cplx(0); };
  auto ch = std::make_shared<FermiChart>(chart);
  auto path = std::make_shared<NodePath>(
      [ric, ch, q](double t, const Vec& r) {
        cplx a1(r[0], r[1]);
        CMat H = ric->H(t);
        cplx tr = (ric->C() * H).trace();
        cplx a0 = 1.0 / ric->sqrt_detY(t);
        cplx d = -0.5 * tr * a1 + 0.5 * I1 * q(ch->frame(t).y) * a0;
        return Vec((Vec(2) << d.real(), d.imag()).finished());
      },
      ric->tau0(), Vec::Zero(2), ric->tau_lo(), ric->tau_hi(), 0.01, 1e-13);
  return [path](double t) {
    Vec r = path->at(t);
    return cplx(r[0], r[1]);
  };
}

BeamValue evaluate_beam(const GaussianBeam& b, const Vec& x, double rho) {
  if (rho == 0) throw PreconditionError("evaluate_beam: rho must be nonzero");
  auto xi = b.chart().inverse(x);
  BeamValue v;
  if (!xi || (*xi)[0] < b.riccati().tau_lo() || (*xi)[0] > b.riccati().tau_hi()) {
    v.out_of_chart = true;
    return v;
  }
  v.value = b.eval_chart((*xi)[0], xi->tail(b.chart().nt()), rho);
  return v;
}

// ---------------------------------------------------------------- residual

double beam_residual_norm(const GaussianBeam& b, const ScalarField& q, double rho,
                          const ResidualGrid& grid) {
  if (!b.has_jets()) throw ConfigError("beam_residual_norm: flat charts only");
  if (grid.cells_per_width < 8)
    throw PreconditionError("resolution: need at least 8 cells across 1/sqrt(rho), got " +
                            std::to_string(grid.cells_per_width));
  const int nt = b.chart().nt();
  const double sr = std::sqrt(rho), hz = 1 / (sr * grid.cells_per_width);
  const double ht = grid.htau;
  double lam = 1e300;
  for (double t : b.riccati().nodes())
    if (t >= grid.tau_lo - 4 * ht - 0.01 && t <= grid.tau_hi + 4 * ht + 0.01)
      lam = std::min(lam, min_eig_sym(b.riccati().H(t).imag()));
  if (!(lam > 0)) throw NumericalError("beam_residual_norm: Im H not positive on the window");
  const double Lz = grid.box_widths / std::sqrt(rho * lam);
  // beyond this radius |w| < exp(-(box_widths + 1)^2): left at zero
  const double Rcut = (grid.box_widths + 1) / std::sqrt(rho * lam);
  const int half = static_cast<int>(std::ceil(Lz / hz));
  const int G = 4, M = 2 * half + 1 + 2 * G;
  const int J = static_cast<int>(std::lround((grid.tau_hi - grid.tau_lo) / ht));
  if (grid.tau_lo - G * ht < b.riccati().tau_lo() - 1e-12 ||
      grid.tau_hi + G * ht > b.riccati().tau_hi() + 1e-12)
    throw PreconditionError("beam_residual_norm: tau window exceeds the beam range");
  long total = 1;
  for (int i = 0; i < nt; ++i) total *= M;
  std::vector<long> stride(nt);
  stride[nt - 1] = 1;
  for (int i = nt - 2; i >= 0; --i) stride[i] = stride[i + 1] * M;
  // grid points where w can be nonzero, and interior points whose stencils can see them
  struct Pt {
    long k;
    std::array<double, 3> z;
    double chi;
  };
  std::vector<Pt> active, inner;
  {
    std::vector<int> c(nt, 0);
    for (long k = 0; k < total; ++k) {
      Pt p{k, {0, 0, 0}, 0};
      double zn2 = 0;
      bool interior = true;
      for (int i = 0; i < nt; ++i) {
        p.z[i] = (c[i] - G - half) * hz;
        zn2 += p.z[i] * p.z[i];
        if (c[i] < G || c[i] >= M - G) interior = false;
      }
      const double zn = std::sqrt(zn2), r = zn / b.chart().delta();
      if (r < 0.5 && zn <= Rcut) {
        p.chi = cutoff(r);
        active.push_back(p);
      }
      if (interior && zn <= Rcut + (G + 1) * hz * std::sqrt(double(nt))) inner.push_back(p);
      for (int i = nt - 1; i >= 0; --i) {
        if (++c[i] < M) break;
        c[i] = 0;
      }
    }
  }
  const auto& sp = *b.space();
  // w = exp(-i rho z^1) u at one tau on the full grid
  auto fill = [&](double tau, std::vector<cplx>& w) {
    auto s = b.slice(tau);
    Poly ph = s.phase - Poly::variable(b.space(), 0);
    Poly amp = s.a0 + s.a1 * (1 / rho);
    std::vector<double> m(sp.size());
    w.assign(total, 0);
    for (const Pt& p : active) {
      sp.monomials(p.z.data(), m.data());
      w[p.k] = std::exp(I1 * rho * ph.dot(m.data())) * p.chi * amp.dot(m.data());
    }
  };
  std::vector<std::vector<cplx>> win(9);
  for (int k = 0; k < 8; ++k) fill(grid.tau_lo + (k - G) * ht, win[k + 1]);
  double sum = 0;
  std::vector<cplx> wt(total);
  for (int j = 0; j <= J; ++j) {
    std::rotate(win.begin(), win.begin() + 1, win.end());
    const double tau = grid.tau_lo + j * ht;
    fill(tau + G * ht, win[8]);
    for (long k = 0; k < total; ++k) {
      cplx acc = 0;
      for (int s = 0; s < 9; ++s) acc += kD1[s] * win[s][k];
      wt[k] = acc / ht;
    }
    const auto& wc = win[4];
    double slab = 0;
    Vec z(nt);
    for (const Pt& p : inner) {
      const long k = p.k;
      cplx r = 2.0 * I1 * rho * wt[k];
      cplx d1 = 0;
      for (int s = 0; s < 9; ++s) d1 += kD1[s] * wt[k + (s - 4) * stride[0]];
      r += 2.0 * d1 / hz;
      for (int a = 1; a < nt; ++a) {
        cplx d2 = 0;
        for (int s = 0; s < 9; ++s) d2 += kD2[s] * wc[k + (s - 4) * stride[a]];
        r += d2 / (hz * hz);
      }
      if (q && wc[k] != cplx(0)) {
        for (int i = 0; i < nt; ++i) z[i] = p.z[i];
        r += q(b.chart().forward(tau, z)) * wc[k];
      }
      slab += std::norm(r);
    }
    double wj = (j == 0 || j == J) ? 0.5 : 1.0;
    sum += wj * ht * slab * std::pow(hz, nt);
  }
  return std::sqrt(sum);
}

double loglog_slope(const std::vector<double>& x, const std::vector<double>& y) {
  const size_t n = x.size();
  if (n < 2 || y.size() != n) throw PreconditionError("loglog_slope: need matching ladders");
  double sx = 0, sy = 0, sxx = 0, sxy = 0;
  for (size_t i = 0; i < n; ++i) {
    double a = std::log(x[i]), c = std::log(y[i]);
    sx += a;
    sy += c;
    sxx += a * a;
    sxy += a * c;
  }
  return (n * sxy - sx * sy) / (n * sxx - sx * sx);
}

// ---------------------------------------------------------------- reflection

Vec BoundaryGraph::point(const Vec& y) const {
  const int n = static_cast<int>(y.size());
  Vec x = p + T * y;
  if (radius > 0) {
    double s2 = y.tail(n - 1).squaredNorm();
    if (s2 >= radius * radius) throw DomainError("boundary graph: point beyond the sphere");
    x -= (radius - std::sqrt(radius * radius - s2)) * n_out;
  }
  return x;
}

double BoundaryGraph::area_element(const Vec& y) const {
  if (radius == 0) return 1;
  const int n = static_cast<int>(y.size());
  return radius / std::sqrt(radius * radius - y.tail(n - 1).squaredNorm());
}

std::vector<Poly> BoundaryGraph::taylor(std::shared_ptr<const PolySpace> sp) const {
  const int n = sp->nvars(), d = static_cast<int>(p.size());
  if (n != d - 1) throw PreconditionError("boundary graph: space arity");
  Poly h(sp);
  if (radius > 0) {
    // R - sqrt(R^2 - u) in powers of u = |y_s|^2
    const double c[] = {0, 1 / (2 * radius), 1 / (8 * std::pow(radius, 3)),
                        1 / (16 * std::pow(radius, 5)), 5 / (128 * std::pow(radius, 7))};
    Poly u(sp), up = Poly::constant(sp, 1);
    for (int a = 1; a < n; ++a) u += Poly::variable(sp, a) * Poly::variable(sp, a);
    for (int j = 1; 2 * j <= sp->maxdeg() && j <= 4; ++j) {
      up = up * u;
      h += up * c[j];
    }
  }
  std::vector<Poly> X;
  for (int i = 0; i < d; ++i) {
    Poly xi = h * (-n_out[i]);
    for (int k = 0; k < n; ++k) xi += Poly::variable(sp, k) * T(i, k);
    X.push_back(xi);
  }
  return X;
}

BoundaryGraph boundary_graph(const ProductMetric& m, const Vec& p) {
  const int n = m.spatial_dim(), d = n + 1;
  const Domain& D = m.inner();
  Vec xs = p.tail(n);
  if (std::abs(D.defining(xs)) > 1e-6) throw PreconditionError("boundary graph: point is not on the boundary");
  BoundaryGraph bg;
  bg.p = p;
  Vec nu = D.outward_normal(xs);
  if (D.kind == Domain::Kind::Disk) {
    nu = (xs - D.center).normalized();
    bg.radius = D.radius;
  }
  bg.n_out = Vec::Zero(d);
  bg.n_out.tail(n) = nu;
  bg.T = Mat::Zero(d, n);
  bg.T(0, 0) = 1;
  std::vector<Vec> basis{nu};
  for (int i = 0; i < n && static_cast<int>(basis.size()) < n; ++i) {
    Vec e = Vec::Unit(n, i);
    for (const Vec& b : basis) e -= e.dot(b) * b;
    if (e.norm() < 0.3) continue;
    basis.push_back(e.normalized());
  }
  for (int a = 1; a < n; ++a) bg.T.col(a).tail(n) = basis[a];
  return bg;
}

namespace {

// Boundary trace of (phase, a0, a1) from a jet state at tau_e: Taylor in the
// chart-time offset (to second order) composed with the chart coordinates of
// the boundary graph.
TracePolys trace_from_state(const JetSystem& J, const FermiChart& chart, double tau_e,
                            const CVec& s, const BoundaryGraph& bg,
                            std::shared_ptr<const PolySpace> ysp) {
  const int nt = chart.nt(), d = nt + 1;
  auto f = chart.frame(tau_e);
  Mat A(d, d);
  A << f.L, f.E;
  Mat Ai = A.inverse();
  std::vector<Poly> X = bg.taylor(ysp);
  Vec c = Ai * (bg.p - f.y);
  std::vector<Poly> xi;
  for (int i = 0; i < d; ++i) {
    Poly v = Poly::constant(ysp, c[i]);
    for (int j = 0; j < d; ++j) v += X[j] * Ai(i, j);
    xi.push_back(v);
  }
  Poly dtau = xi[0];
  std::vector<Poly> z(xi.begin() + 1, xi.end());
  auto der = J.derivatives(tau_e, s);
  TracePolys t{Poly(ysp), Poly(ysp), Poly(ysp)};
  Poly pw = Poly::constant(ysp, 1);
  double fact = 1;
  for (int k = 0; k < 3; ++k) {
    if (k > 0) {
      pw = pw * dtau;
      fact *= k;
    }
    t.phase += pw * compose(der[k][0], z) * (1 / fact);
    t.a0 += pw * compose(der[k][1], z) * (1 / fact);
    t.a1 += pw * compose(der[k][2], z) * (1 / fact);
  }
  return t;
}

CMat quadratic_matrix(const Poly& p) {
  const PolySpace& sp = p.space();
  const int n = sp.nvars();
  CMat Q(n, n);
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < n; ++j) {
      std::vector<int> e(n, 0);
      ++e[i];
      ++e[j];
      Q(i, j) = p[sp.index(e)] * (i == j ? 1.0 : 0.5);
    }
  return Q;
}

// Beam slices on a uniform tau grid; coefficients interpolated by cubic Lagrange.
class SliceCache {
 public:
  SliceCache(const GaussianBeam& b, double lo, double hi, double h) : b_(b), lo_(lo), h_(h) {
    const int K = static_cast<int>(std::ceil((hi - lo) / h)) + 1;
    for (int k = 0; k < K; ++k) s_.push_back(b.slice(lo + k * h));
  }

  cplx eval(double tau, const Vec& z, double rho) const {
    double r = z.norm() / b_.chart().delta();
    if (r >= 0.5) return 0;
    double u = (tau - lo_) / h_;
    int k = std::clamp(static_cast<int>(std::floor(u)), 1, static_cast<int>(s_.size()) - 3);
    double t = u - k;
    const double w[4] = {-t * (t - 1) * (t - 2) / 6, (t + 1) * (t - 1) * (t - 2) / 2,
                         -(t + 1) * t * (t - 2) / 2, (t + 1) * t * (t - 1) / 6};
    const PolySpace& sp = *b_.space();
    std::vector<double> m(sp.size());
    sp.monomials(z.data(), m.data());
    cplx ph = 0, amp = 0;
    for (int j = 0; j < 4; ++j) {
      const auto& s = s_[k - 1 + j];
      ph += w[j] * s.phase.dot(m.data());
      amp += w[j] * (s.a0.dot(m.data()) + s.a1.dot(m.data()) / rho);
    }
    return std::exp(I1 * rho * ph) * cutoff(r) * amp;
  }

 private:
  const GaussianBeam& b_;
  double lo_, h_;
  std::vector<GaussianBeam::Slice> s_;
};

}  // namespace

TracePolys boundary_trace_taylor(const GaussianBeam& b, const BoundaryGraph& bg,
                                 std::shared_ptr<const PolySpace> ysp) {
  if (!b.has_jets()) throw ConfigError("boundary traces need a flat chart");
  auto xi = b.chart().inverse(bg.p);
  if (!xi) throw PreconditionError("boundary trace: point outside the beam chart");
  return trace_from_state(b.jets(), b.chart(), (*xi)[0], b.jet_state((*xi)[0]), bg, ysp);
}

ReflectedBeam reflect_beam(const GaussianBeam& inc, const GeoEvent& ev, double tau_hi,
                           double tau_lo) {
  if (!inc.has_jets()) throw ConfigError("reflect_beam: flat charts only");
  if (ev.kind != EventKind::Reflect) throw PreconditionError("reflect_beam: not a reflection event");
  const ProductMetric& m = inc.chart().metric();
  const int nt = inc.chart().nt(), N = inc.order();
  BoundaryGraph bg = boundary_graph(m, ev.y);
  auto xi = inc.chart().inverse(ev.y);
  if (!xi || xi->tail(nt).norm() > 1e-8)
    throw PreconditionError("reflect_beam: event point is not on the incident ray");
  const double tau_e = (*xi)[0];
  auto chr = std::make_shared<FermiChart>(m, ev.y, ev.v_out, tau_lo, tau_hi, inc.chart().delta());
  const BeamOptions& opt = inc.options();
  JetSystem Jr(chr, N, opt.a1, opt.q, opt.q_in_a1);
  auto sp = Jr.space();

  TracePolys ti = trace_from_state(inc.jets(), inc.chart(), tau_e, inc.jet_state(tau_e), bg, sp);
  auto U = Jr.unpack(CVec::Zero(Jr.size()));
  U.Y = CMat::Identity(nt, nt);
  U.Z = CMat::Zero(nt, nt);
  auto trace_ref = [&] { return trace_from_state(Jr, *chr, 0, Jr.pack(U), bg, sp); };

  // linear part of y -> z on the reflected chart
  auto f = chr->frame(0);
  Mat A(nt + 1, nt + 1);
  A << f.L, f.E;
  Mat W = A.partialPivLu().solve(bg.T).bottomRows(nt);
  Mat Wi = W.inverse();
  std::vector<Poly> sub;
  for (int k = 0; k < nt; ++k) {
    Poly v(sp);
    for (int j = 0; j < nt; ++j) v += Poly::variable(sp, j) * Wi(k, j);
    sub.push_back(v);
  }
  {
    Poly low = (ti.phase - trace_ref().phase).upto(1);
    if (low.coeffs().cwiseAbs().maxCoeff() > 1e-7)
      throw NumericalError("reflect_beam: linear phase traces disagree (reflection law)");
  }
  for (int deg = 2; deg <= N; ++deg) {
    Poly c = compose((ti.phase - trace_ref().phase).part(deg), sub);
    if (deg == 2)
      U.Z += quadratic_matrix(c);
    else
      U.phi[deg] += c;
  }
  for (int deg = 0; deg <= N - 2; ++deg)
    U.a0 += compose((ti.a0 * -1.0 - trace_ref().a0).part(deg), sub);
  if (Jr.has_a1()) U.a1[0] += -ti.a1[0] - trace_ref().a1[0];

  CMat H = U.Z;
  auto ric = std::make_shared<RiccatiSolution>(
      [nt](double) { return Mat::Zero(nt, nt).eval(); }, riccati_C(nt), CMat::Identity(nt, nt), H,
      0.0, tau_lo, tau_hi);
  GaussianBeam beam(chr, ric, opt, Jr.pack(U));
  return ReflectedBeam{std::move(beam), bg, tau_e, N, N - 2};
}

double boundary_trace_norm(const GaussianBeam& inc, const GaussianBeam& ref,
                           const BoundaryGraph& bg, double rho, double box_widths,
                           double cells_per_width) {
  const int n = inc.chart().nt();
  auto sp2 = std::make_shared<PolySpace>(n, 2);
  TracePolys ti = boundary_trace_taylor(inc, bg, sp2);
  Mat Mi = quadratic_matrix(ti.phase).imag();
  if (min_eig_sym(Mi) <= 0)
    throw NumericalError("boundary trace is not Gaussian (Im Hessian not positive)");
  Mat Minv = Mi.inverse();
  // per-axis extent of the ellipsoid rho y^T M y <= box_widths^2
  const double hy = 1 / (std::sqrt(rho) * cells_per_width);
  std::vector<int> half(n);
  long total = 1;
  for (int i = 0; i < n; ++i) {
    half[i] = static_cast<int>(std::ceil(box_widths * std::sqrt(Minv(i, i) / rho) / hy));
    total *= 2 * half[i] + 1;
  }
  if (bg.radius > 0) {
    double ys2 = 0;
    for (int i = 1; i < n; ++i) ys2 += std::pow(half[i] * hy, 2);
    if (ys2 >= 0.8 * bg.radius * bg.radius)
      throw PreconditionError("boundary trace box does not fit the boundary graph; raise rho");
  }
  const GaussianBeam* beams[2] = {&inc, &ref};
  Mat Ai[2];
  Vec o[2];
  double tlo[2] = {1e300, 1e300}, thi[2] = {-1e300, -1e300};
  std::vector<Vec> ys(total);
  for (long k = 0; k < total; ++k) {
    Vec y(n);
    long r = k;
    for (int i = n - 1; i >= 0; --i) {
      const int Mi2 = 2 * half[i] + 1;
      y[i] = (r % Mi2 - half[i]) * hy;
      r /= Mi2;
    }
    ys[k] = y;
  }
  for (int b = 0; b < 2; ++b) {
    auto f = beams[b]->chart().frame(0);
    Mat A(n + 1, n + 1);
    A << f.L, f.E;
    Ai[b] = A.inverse();
    o[b] = f.y;
    for (const Vec& y : ys) {
      double t = (Ai[b] * (bg.point(y) - o[b]))[0];
      tlo[b] = std::min(tlo[b], t);
      thi[b] = std::max(thi[b], t);
    }
    if (tlo[b] < beams[b]->riccati().tau_lo() || thi[b] > beams[b]->riccati().tau_hi())
      throw PreconditionError("boundary trace box leaves the beam range");
  }
  const double hc = 2e-3;
  SliceCache ci(inc, std::max(tlo[0] - 2 * hc, inc.riccati().tau_lo()), thi[0] + 3 * hc, hc);
  SliceCache cr(ref, std::max(tlo[1] - 2 * hc, ref.riccati().tau_lo()), thi[1] + 3 * hc, hc);
  const SliceCache* caches[2] = {&ci, &cr};
  double sum = 0;
  for (const Vec& y : ys) {
    Vec x = bg.point(y);
    cplx u = 0;
    for (int b = 0; b < 2; ++b) {
      Vec xi = Ai[b] * (x - o[b]);
      u += caches[b]->eval(xi[0], xi.tail(n), rho);
    }
    sum += std::norm(u) * bg.area_element(y);
  }
  return std::sqrt(sum * std::pow(hy, n));
}

}  // namespace lab

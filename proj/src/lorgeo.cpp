#include "lab/lorgeo.hpp"

#include "lab/ode.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

namespace lab {

namespace {

void check_domain(const Metric& m, const Vec& p) {
  if (!m.in_domain(p)) throw DomainError("point outside the extended domain");
}

std::vector<Mat> christoffel_from(const MetricJet& J, const Mat& gi) {
  const int d = static_cast<int>(J.g.rows());
  std::vector<Mat> gam(d, Mat::Zero(d, d));
  for (int i = 0; i < d; ++i)
    for (int j = 0; j < d; ++j)
      for (int k = j; k < d; ++k) {
        double s = 0;
        for (int l = 0; l < d; ++l)
          s += gi(i, l) * (J.dg[j](l, k) + J.dg[k](l, j) - J.dg[l](j, k));
        gam[i](j, k) = gam[i](k, j) = 0.5 * s;
      }
  return gam;
}

std::vector<Mat> christoffel_raw(const Metric& m, const Vec& p) {
  MetricJet J = m.jet(p, 1);
  return christoffel_from(J, J.g.inverse());
}

std::vector<std::vector<Mat>> christoffel_derivs_raw(const Metric& m, const Vec& p) {
  MetricJet J = m.jet(p, 2);
  const int d = static_cast<int>(J.g.rows());
  Mat gi = J.g.inverse();
  std::vector<std::vector<Mat>> out(d, std::vector<Mat>(d, Mat::Zero(d, d)));
  for (int q = 0; q < d; ++q) {
    Mat dgi = -gi * J.dg[q] * gi;
    for (int i = 0; i < d; ++i)
      for (int j = 0; j < d; ++j)
        for (int k = j; k < d; ++k) {
          double s = 0;
          for (int l = 0; l < d; ++l) {
            double A = J.dg[j](l, k) + J.dg[k](l, j) - J.dg[l](j, k);
            double dA = J.d2g[q][j](l, k) + J.d2g[q][k](l, j) - J.d2g[q][l](j, k);
            s += dgi(i, l) * A + gi(i, l) * dA;
          }
          out[q][i](j, k) = out[q][i](k, j) = 0.5 * s;
        }
  }
  return out;
}

}  // namespace

Mat metric_at(const Metric& m, const Vec& p) {
  check_domain(m, p);
  return m.jet(p, 0).g;
}

Mat inverse_metric_at(const Metric& m, const Vec& p) {
  return metric_at(m, p).inverse();
}

std::vector<Mat> christoffel_at(const Metric& m, const Vec& p) {
  check_domain(m, p);
  return christoffel_raw(m, p);
}

std::vector<std::vector<Mat>> christoffel_derivs_at(const Metric& m, const Vec& p) {
  check_domain(m, p);
  return christoffel_derivs_raw(m, p);
}

double riemann_contract(const Metric& m, const Vec& p, const Vec& a, const Vec& b,
                        const Vec& c, const Vec& dd) {
  check_domain(m, p);
  MetricJet J = m.jet(p, 2);
  const int d = static_cast<int>(J.g.rows());
  Mat gi = J.g.inverse();
  auto gam = christoffel_from(J, gi);
  auto dgam = christoffel_derivs_raw(m, p);
  // R^r_{s m n} b^s c^m dd^n, then lower with g and contract with a.
  Vec up = Vec::Zero(d);
  for (int r = 0; r < d; ++r) {
    double s = 0;
    for (int sg = 0; sg < d; ++sg)
      for (int mu = 0; mu < d; ++mu)
        for (int nu = 0; nu < d; ++nu) {
          double w = b[sg] * c[mu] * dd[nu];
          if (w == 0) continue;
          double R = dgam[mu][r](nu, sg) - dgam[nu][r](mu, sg);
          for (int l = 0; l < d; ++l)
            R += gam[r](mu, l) * gam[l](nu, sg) - gam[r](nu, l) * gam[l](mu, sg);
          s += R * w;
        }
    up[r] = s;
  }
  return a.dot(J.g * up);
}

Vec geodesic_rhs(const Metric& m, const Vec& st) {
  const int d = static_cast<int>(st.size() / 2);
  Vec y = st.head(d), v = st.tail(d);
  auto gam = christoffel_raw(m, y);
  Vec out(2 * d);
  out.head(d) = v;
  for (int i = 0; i < d; ++i) out[d + i] = -v.dot(gam[i] * v);
  return out;
}

FlowState geodesic_flow(const Metric& m, const Vec& y0, const Vec& v0, const Mat& Jy0,
                        const Mat& Jv0, double s1, double tol) {
  const int d = static_cast<int>(y0.size());
  const int k = static_cast<int>(Jy0.cols());
  auto rhs = [&](double, const Vec& st) {
    Vec y = st.head(d), v = st.segment(d, d);
    Eigen::Map<const Mat> Jy(st.data() + 2 * d, d, k);
    Eigen::Map<const Mat> Jv(st.data() + 2 * d + d * k, d, k);
    auto gam = christoffel_raw(m, y);
    auto dgam = christoffel_derivs_raw(m, y);
    Vec out(st.size());
    out.head(d) = v;
    for (int i = 0; i < d; ++i) out[d + i] = -v.dot(gam[i] * v);
    Eigen::Map<Mat> dJy(out.data() + 2 * d, d, k);
    Eigen::Map<Mat> dJv(out.data() + 2 * d + d * k, d, k);
    dJy = Jv;
    for (int i = 0; i < d; ++i) {
      Vec row = Vec::Zero(d);  // d/dy^l of -Gam^i(v, v)
      for (int l = 0; l < d; ++l) row[l] = -v.dot(dgam[l][i] * v);
      Vec rowv = -2 * (gam[i] * v);
      dJv.row(i) = row.transpose() * Jy + rowv.transpose() * Jv;
    }
    return out;
  };
  Vec st(2 * d + 2 * d * k);
  st.head(d) = y0;
  st.segment(d, d) = v0;
  Eigen::Map<Mat>(st.data() + 2 * d, d, k) = Jy0;
  Eigen::Map<Mat>(st.data() + 2 * d + d * k, d, k) = Jv0;
  Vec out = s1 == 0 ? st : ode::integrate(rhs, 0, st, s1, tol, 0.05);
  FlowState f;
  f.y = out.head(d);
  f.v = out.segment(d, d);
  f.Jy = Eigen::Map<const Mat>(out.data() + 2 * d, d, k);
  f.Jv = Eigen::Map<const Mat>(out.data() + 2 * d + d * k, d, k);
  return f;
}

CausalClass causal_class(const Metric& m, const Vec& p, const Vec& v, double tol_null) {
  double q = v.dot(metric_at(m, p) * v);
  if (std::abs(q) <= tol_null) return CausalClass::Null;
  return q < 0 ? CausalClass::Timelike : CausalClass::Spacelike;
}

Vec null_vector(const ProductMetric& m, const Vec& p, const Vec& dir, double sign) {
  const int n = m.spatial_dim();
  double a = m.alpha(p).v, s = m.scale(p).v;
  Vec v(n + 1);
  v[0] = sign;
  v.tail(n) = dir.normalized() * std::sqrt(a / s);
  return v;
}

Vec renormalize_null(const Metric& m, const Vec& p, const Vec& v) {
  Mat g = metric_at(m, p);
  const int d = static_cast<int>(v.size());
  Vec w = v.tail(d - 1);
  double A = g(0, 0), B = 2 * g.row(0).tail(d - 1).dot(w),
         C = w.dot(g.bottomRightCorner(d - 1, d - 1) * w);
  double disc = B * B - 4 * A * C;
  if (disc < 0) throw NumericalError("renormalize_null: no null completion");
  double r1 = (-B + std::sqrt(disc)) / (2 * A), r2 = (-B - std::sqrt(disc)) / (2 * A);
  Vec out = v;
  out[0] = std::abs(r1 - v[0]) < std::abs(r2 - v[0]) ? r1 : r2;
  return out;
}

Vec unit_outer_normal(const ProductMetric& m, const Vec& b) {
  const int n = m.spatial_dim();
  Vec cov = Vec::Zero(n + 1);
  cov.tail(n) = m.inner().outward_normal(b.tail(n));
  Mat gi = inverse_metric_at(m, b);
  Vec nu = gi * cov;
  return nu / std::sqrt(cov.dot(nu));
}

Vec reflect_velocity(const ProductMetric& m, const Vec& b, const Vec& v,
                     double tol_tangent) {
  if (std::abs(m.inner().defining(b.tail(m.spatial_dim()))) > 1e-6)
    throw PreconditionError("reflect_velocity: point is not on the boundary");
  Vec nu = unit_outer_normal(m, b);
  double gvn = nu.dot(metric_at(m, b) * v);
  if (std::abs(gvn) < tol_tangent)
    throw PreconditionError("reflect_velocity: velocity tangential to the boundary");
  return v - 2 * gvn * nu;
}

GeoSample BrokenNullGeodesic::at(const Metric& m, double s) const {
  for (const auto& seg : segments) {
    if (seg.empty() || s < seg.front().s - 1e-15 || s > seg.back().s + 1e-15) continue;
    auto it = std::lower_bound(seg.begin(), seg.end(), s,
                               [](const GeoSample& a, double x) { return a.s < x; });
    if (it == seg.begin()) return seg.front();
    if (it == seg.end()) return seg.back();
    const GeoSample& b = *it;
    const GeoSample& a = *(it - 1);
    double h = b.s - a.s;
    if (h <= 0) return b;
    // integrate from the left sample for an accurate state
    const int d = static_cast<int>(a.y.size());
    Vec st(2 * d);
    st << a.y, a.v;
    auto rhs = [&](double, const Vec& x) { return geodesic_rhs(m, x); };
    Vec out = ode::integrate(rhs, a.s, st, s, 1e-12, h);
    return {s, out.head(d), out.tail(d)};
  }
  throw PreconditionError("BrokenNullGeodesic::at: parameter outside the path");
}

BrokenNullGeodesic integrate_null_geodesic(const ProductMetric& m, const Vec& p0,
                                           const Vec& v0, GeoMode mode,
                                           const StepControl& ctl) {
  const int n = m.spatial_dim(), d = n + 1;
  if (p0.size() != d || v0.size() != d)
    throw PreconditionError("integrate_null_geodesic: dimension mismatch");
  if (!m.outer().contains(p0.tail(n), 1e-12))
    throw DomainError("integrate_null_geodesic: start outside the extended domain");
  Mat g0 = metric_at(m, p0);
  if (std::abs(v0.dot(g0 * v0)) > ctl.tol_null * std::max(1.0, v0.squaredNorm()))
    throw PreconditionError("integrate_null_geodesic: initial velocity is not null");
  if (v0[0] == 0) throw PreconditionError("integrate_null_geodesic: v0 has no time part");
  const double tdir = v0[0] > 0 ? 1 : -1;
  if (mode == GeoMode::Reflect && m.inner().defining(p0.tail(n)) < -1e-9)
    throw PreconditionError("integrate_null_geodesic: reflect mode starts outside N");

  auto rhs = [&](double, const Vec& st) { return geodesic_rhs(m, st); };
  auto inner = [&](const Vec& st) { return m.inner().defining(st.segment(1, n)); };
  auto outer = [&](const Vec& st) { return m.outer().defining(st.segment(1, n)); };
  auto horizon = [&](const Vec& st) { return tdir > 0 ? m.horizon() - st[0] : st[0]; };

  BrokenNullGeodesic geo;
  geo.mode = mode;
  Vec Y(2 * d);
  Y << p0, v0;
  double s = 0, h = ctl.h0;
  geo.segments.push_back({{s, p0, v0}});

  struct Cand {
    EventKind kind;
    std::function<double(const Vec&)> f;
    bool from_nonneg;  // crossing from >= 0 to < 0, else from < 0 to >= 0
  };

  long guard = 0;
  while (s < ctl.s_max) {
    if (++guard > 5000000) throw NumericalError("integrate_null_geodesic: too many steps");
    double hh = std::min(h, ctl.s_max - s);
    auto r = ode::dp45_step(rhs, s, Y, hh, ctl.tol, ctl.tol);
    if (r.err > 1) {
      h = ode::next_step(hh, r.err);
      if (h < 1e-13) {
        geo.events.push_back({EventKind::Tangency, s, Y.head(d), Y.tail(d), Y.tail(d)});
        return geo;
      }
      continue;
    }
    std::vector<Cand> cands;
    double fi0 = inner(Y), fi1 = inner(r.y);
    if (mode == GeoMode::Reflect) {
      if (fi0 >= 0 && fi1 < 0) cands.push_back({EventKind::Reflect, inner, true});
    } else {
      if (fi0 >= 0 && fi1 < 0) cands.push_back({EventKind::Exit, inner, true});
      if (fi0 < 0 && fi1 >= 0) cands.push_back({EventKind::Enter, inner, false});
    }
    if (outer(Y) >= 0 && outer(r.y) < 0)
      cands.push_back({EventKind::LeaveOuter, outer, true});
    if (horizon(Y) > 0 && horizon(r.y) <= 0)
      cands.push_back({EventKind::Horizon, horizon, true});

    if (cands.empty()) {
      s += hh;
      Y = r.y;
    } else {
      double best = 1e300, best_lo = 0;
      const Cand* hit = nullptr;
      for (const auto& c : cands) {
        double lo = 0, hi = hh;
        while (hi - lo > ctl.event_tol) {
          double mid = 0.5 * (lo + hi);
          Vec ym = ode::dp45_step(rhs, s, Y, mid, ctl.tol, ctl.tol).y;
          double fm = c.f(ym);
          bool same = c.from_nonneg ? fm >= 0 : fm < 0;
          (same ? lo : hi) = mid;
        }
        if (hi < best) {
          best = hi;
          best_lo = lo;
          hit = &c;
        }
      }
      double hev = hit->kind == EventKind::Reflect ? best_lo : best;
      Y = hev > 0 ? ode::dp45_step(rhs, s, Y, hev, ctl.tol, ctl.tol).y : Y;
      s += hev;
      Vec y = Y.head(d), v = Y.tail(d);
      geo.segments.back().push_back({s, y, v});
      GeoEvent ev{hit->kind, s, y, v, v};
      if (hit->kind == EventKind::Reflect || hit->kind == EventKind::Enter ||
          hit->kind == EventKind::Exit) {
        Vec nu = unit_outer_normal(m, y);
        double gvn = nu.dot(metric_at(m, y) * v);
        if (std::abs(gvn) < ctl.tol_tangent) {
          ev.kind = EventKind::Tangency;
          geo.events.push_back(ev);
          return geo;
        }
        if (hit->kind == EventKind::Reflect) {
          ev.v_out = v - 2 * gvn * nu;
          Y.tail(d) = ev.v_out;
          geo.events.push_back(ev);
          geo.segments.push_back({{s, y, ev.v_out}});
          if (static_cast<int>(geo.events.size()) >= ctl.max_events) return geo;
        } else {
          geo.events.push_back(ev);
        }
      } else {
        geo.events.push_back(ev);
        return geo;
      }
      h = std::max(hh, 1e-6);
      continue;
    }

    // null drift control
    Vec y = Y.head(d), v = Y.tail(d);
    double drift = std::abs(v.dot(metric_at(m, y) * v)) / std::max(1.0, v.squaredNorm());
    geo.max_null_drift = std::max(geo.max_null_drift, drift);
    if (drift > 10 * ctl.tol) {
      Y.tail(d) = renormalize_null(m, y, v);
      ++geo.renormalizations;
    }
    geo.segments.back().push_back({s, y, Y.tail(d)});
    h = std::min(ode::next_step(hh, r.err), ctl.hmax);
  }
  return geo;
}

const char* to_string(TransitClass c) {
  switch (c) {
    case TransitClass::NoEntry: return "NoEntry";
    case TransitClass::I: return "I";
    case TransitClass::IO: return "IO";
    case TransitClass::IOI: return "IOI";
  }
  return "?";
}

TransitRecord classify_transit(const ProductMetric& m, const Vec& z0, const Vec& zeta0,
                               const StepControl& ctl) {
  const int n = m.spatial_dim();
  if (m.inner().defining(z0.tail(n)) >= 0)
    throw PreconditionError("classify_transit: z0 must lie outside N");
  if (zeta0[0] <= 0) throw PreconditionError("classify_transit: zeta0 must be future");
  TransitRecord rec;
  BrokenNullGeodesic geo;
  try {
    geo = integrate_null_geodesic(m, z0, zeta0, GeoMode::Transmit, ctl);
  } catch (const std::exception& e) {
    rec.failure = e.what();
    return rec;
  }
  int stage = 0;
  for (const auto& ev : geo.events) {
    if (ev.kind == EventKind::Tangency) {
      if (stage == 0) rec.tangency = true;
      break;
    }
    if (stage == 0 && ev.kind == EventKind::Enter) {
      rec.t0 = ev.s;
      stage = 1;
    } else if (stage == 1 && ev.kind == EventKind::Exit) {
      rec.t1 = ev.s;
      stage = 2;
    } else if (stage == 2 && ev.kind == EventKind::Enter) {
      rec.t2 = ev.s;
      stage = 3;
      break;
    }
  }
  rec.cls = stage == 0   ? TransitClass::NoEntry
            : stage == 1 ? TransitClass::I
            : stage == 2 ? TransitClass::IO
                         : TransitClass::IOI;
  return rec;
}

namespace {

std::vector<Vec> fan_directions(int n, int fan) {
  std::vector<Vec> dirs;
  if (n == 1) {
    dirs.push_back(Vec::Constant(1, -1));
    dirs.push_back(Vec::Constant(1, 1));
  } else if (n == 2) {
    for (int k = 0; k < fan; ++k) {
      double a = 2 * std::numbers::pi * k / fan;
      Vec w(2);
      w << std::cos(a), std::sin(a);
      dirs.push_back(w);
    }
  } else {
    // Fibonacci sphere
    const double ga = std::numbers::pi * (3 - std::sqrt(5.0));
    for (int k = 0; k < fan; ++k) {
      double z = 1 - 2 * (k + 0.5) / fan, r = std::sqrt(1 - z * z);
      Vec w(3);
      w << r * std::cos(ga * k), r * std::sin(ga * k), z;
      dirs.push_back(w);
    }
  }
  return dirs;
}

}  // namespace

std::vector<ObservationHit> earliest_observation_set(const ProductMetric& m,
                                                     const Vec& q0, int fan,
                                                     const StepControl& ctl) {
  const int n = m.spatial_dim();
  if (m.inner().defining(q0.tail(n)) <= 0 || q0[0] <= 0 || q0[0] >= m.horizon())
    throw PreconditionError("earliest_observation_set: q0 must be interior");
  std::vector<ObservationHit> out;
  for (const Vec& w : fan_directions(n, fan)) {
    ObservationHit hit;
    hit.direction = w;
    auto geo = integrate_null_geodesic(m, q0, null_vector(m, q0, w), GeoMode::Transmit, ctl);
    hit.censored = true;
    for (const auto& ev : geo.events) {
      if (ev.kind == EventKind::Exit) {
        hit.censored = false;
        hit.s = ev.s;
        hit.point = ev.y;
        hit.velocity = ev.v_in;
      }
      break;
    }
    out.push_back(hit);
  }
  return out;
}

BoundaryNormalChart::BoundaryNormalChart(const ProductMetric& m, BoundaryPatch patch,
                                         double eps, double tol)
    : m_(&m), patch_(std::move(patch)), eps_(eps), tol_(tol) {
  const int n = m.spatial_dim();
  if (patch_.u_lo.size() != n || patch_.u_hi.size() != n)
    throw PreconditionError("boundary patch must have n parameters (t, tangential)");
  if (m.inner().kind == Domain::Kind::Interval && n != 1)
    throw PreconditionError("interval domain needs n = 1");
  // Jacobian monitoring on patch corners and centre.
  std::vector<Vec> us;
  us.push_back(0.5 * (patch_.u_lo + patch_.u_hi));
  for (int mask = 0; mask < (1 << n); ++mask) {
    Vec u(n);
    for (int i = 0; i < n; ++i) u[i] = (mask >> i & 1) ? patch_.u_hi[i] : patch_.u_lo[i];
    us.push_back(u);
  }
  const int steps = 16;
  for (const Vec& u : us) {
    double det0 = std::abs(eval(u, 0).J.determinant());
    for (int k = 1; k <= steps; ++k) {
      double xn = eps * k / steps;
      double det = std::abs(eval(u, xn).J.determinant());
      if (det < 0.1 * det0) {
        throw PreconditionError(
            "boundary_normal_chart: normal geodesics degenerate; largest admissible "
            "depth is about " + std::to_string(eps * (k - 1) / steps));
      }
    }
  }
}

int BoundaryNormalChart::dim() const { return m_->spatial_dim() + 1; }

Vec BoundaryNormalChart::boundary_point(const Vec& u) const {
  const Domain& D = m_->inner();
  const int n = m_->spatial_dim();
  Vec y(n + 1);
  y[0] = u[0];
  switch (D.kind) {
    case Domain::Kind::Interval:
      y[1] = patch_.face == 0 ? D.lo[0] : D.hi[0];
      break;
    case Domain::Kind::Box: {
      int axis = patch_.face / 2, j = 1;
      for (int i = 0; i < n; ++i)
        y[1 + i] = i == axis ? (patch_.face % 2 ? D.hi[i] : D.lo[i]) : u[j++];
      break;
    }
    case Domain::Kind::Disk:
      if (n == 2) {
        y[1] = D.center[0] + D.radius * std::cos(u[1]);
        y[2] = D.center[1] + D.radius * std::sin(u[1]);
      } else {  // u = (t, polar, azimuth)
        y[1] = D.center[0] + D.radius * std::sin(u[1]) * std::cos(u[2]);
        y[2] = D.center[1] + D.radius * std::sin(u[1]) * std::sin(u[2]);
        y[3] = D.center[2] + D.radius * std::cos(u[1]);
      }
      break;
  }
  return y;
}

Mat BoundaryNormalChart::boundary_tangents(const Vec& u) const {
  const Domain& D = m_->inner();
  const int n = m_->spatial_dim();
  Mat T = Mat::Zero(n + 1, n);
  T(0, 0) = 1;
  if (D.kind == Domain::Kind::Box) {
    int axis = patch_.face / 2, j = 1;
    for (int i = 0; i < n; ++i)
      if (i != axis) T(1 + i, j++) = 1;
  } else if (D.kind == Domain::Kind::Disk && n == 2) {
    T(1, 1) = -D.radius * std::sin(u[1]);
    T(2, 1) = D.radius * std::cos(u[1]);
  } else if (D.kind == Domain::Kind::Disk) {
    double st = std::sin(u[1]), ct = std::cos(u[1]), sp = std::sin(u[2]), cp = std::cos(u[2]);
    T.col(1) << 0, D.radius * ct * cp, D.radius * ct * sp, -D.radius * st;
    T.col(2) << 0, -D.radius * st * sp, D.radius * st * cp, 0;
  }
  return T;
}

Vec BoundaryNormalChart::inward_normal(const Vec& u) const {
  return -unit_outer_normal(*m_, boundary_point(u));
}

BoundaryNormalChart::Eval BoundaryNormalChart::eval(const Vec& u, double xn) const {
  const int n = m_->spatial_dim(), d = n + 1;
  Vec b = boundary_point(u);
  Vec nu = inward_normal(u);
  Mat Jy0 = boundary_tangents(u);
  Mat Jv0(d, n);
  const double step = 1e-6;
  for (int a = 0; a < n; ++a) {
    Vec up = u, um = u;
    up[a] += step;
    um[a] -= step;
    Jv0.col(a) = (inward_normal(up) - inward_normal(um)) / (2 * step);
  }
  FlowState f = geodesic_flow(*m_, b, nu, Jy0, Jv0, xn, tol_);
  Eval e;
  e.x = f.y;
  e.J.resize(d, d);
  e.J.leftCols(n) = f.Jy;
  e.J.col(n) = f.v;
  e.g_pull = e.J.transpose() * metric_at(*m_, f.y) * e.J;
  return e;
}

std::vector<InteractionSource> choose_interaction_sources(const ProductMetric& m,
                                                          const Vec& q0, double sigma,
                                                          double scale, double r0,
                                                          int sign) {
  const int n = m.spatial_dim(), d = n + 1;
  if (n < 2) throw PreconditionError("choose_interaction_sources: needs n >= 2");
  if (!(sigma > 0 && sigma < 1))
    throw PreconditionError("choose_interaction_sources: sigma must lie in (0, 1)");
  double cs = std::sqrt(1 - sigma * sigma);
  auto dir = [n](double a, double b) {
    Vec w = Vec::Zero(n);
    w[0] = a;
    w[1] = b;
    return w;
  };
  std::vector<Vec> ws = {dir(sign * std::sqrt(1 - r0 * r0), r0), dir(1, 0), dir(cs, sigma),
                         dir(cs, -sigma)};
  std::vector<Vec> thetas;
  for (const Vec& w : ws) thetas.push_back(null_vector(m, q0, w, -1));
  // pairwise independence and rank of the three principal directions
  for (size_t i = 0; i < thetas.size(); ++i)
    for (size_t j = i + 1; j < thetas.size(); ++j) {
      Mat P(d, 2);
      P << thetas[i], thetas[j];
      Eigen::JacobiSVD<Mat> svd(P);
      if (svd.singularValues()[1] < 1e-8 * svd.singularValues()[0])
        throw PreconditionError("choose_interaction_sources: degenerate directions");
    }
  Mat P3(d, 3);
  P3 << thetas[1], thetas[2], thetas[3];
  Eigen::FullPivLU<Mat> lu(P3);
  lu.setThreshold(1e-10);
  if (lu.rank() < std::min(3, d))
    throw PreconditionError("choose_interaction_sources: rank deficient directions");

  std::vector<InteractionSource> out;
  for (const Vec& th : thetas) {
    auto geo = integrate_null_geodesic(m, q0, th, GeoMode::Transmit);
    const GeoEvent* ex = nullptr;
    for (const auto& ev : geo.events)
      if (ev.kind == EventKind::Exit) {
        ex = &ev;
        break;
      }
    if (!ex) throw PreconditionError("choose_interaction_sources: ray misses the boundary");
    double s_src = ex->s + scale;
    if (s_src > geo.last().s)
      throw PreconditionError("choose_interaction_sources: source point leaves the domain");
    GeoSample smp = geo.at(m, s_src);
    InteractionSource src;
    src.theta = th;
    src.z = smp.y;
    src.zeta = -smp.v;
    src.transit = classify_transit(m, src.z, src.zeta);
    out.push_back(src);
  }
  return out;
}

}  // namespace lab

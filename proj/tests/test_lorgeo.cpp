#include "lab/lorgeo.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <random>

using namespace lab;

namespace {

Vec V(std::initializer_list<double> xs) {
  Vec v(static_cast<Eigen::Index>(xs.size()));
  int i = 0;
  for (double x : xs) v[i++] = x;
  return v;
}

// Lens ray oracle: spatial geodesics of n(x)^2 |dx|^2 (alpha = 1), RK4 with a
// fixed small step, written against the closed-form Christoffel symbols of a
// conformally flat spatial metric.
struct LensOracle {
  double amp, w;
  Vec l;
  double n(const Vec& x) const { return 1 + amp * std::exp(-(x - l).squaredNorm() / (w * w)); }
  Vec grad_log_n(const Vec& x) const {
    double e = std::exp(-(x - l).squaredNorm() / (w * w));
    return amp * e * (-2 * (x - l) / (w * w)) / n(x);
  }
  Vec rhs(const Vec& st) const {  // st = (t, x, y, vt, vx, vy)
    Vec x = st.segment(1, 2), v = st.segment(4, 2);
    Vec g = grad_log_n(x);
    Vec a = -(2 * g.dot(v) * v - v.squaredNorm() * g);
    Vec out(6);
    out << st[3], v, 0, a;
    return out;
  }
  Vec step(const Vec& y, double h) const {
    Vec k1 = rhs(y), k2 = rhs(y + h / 2 * k1), k3 = rhs(y + h / 2 * k2), k4 = rhs(y + h * k3);
    return y + h / 6 * (k1 + 2 * k2 + 2 * k3 + k4);
  }
  // Crossing parameters of |x| = 1 in order, up to s_end.
  std::vector<double> crossings(Vec y, double s_end, double h) const {
    std::vector<double> out;
    auto psi = [](const Vec& st) { return 1 - st.segment(1, 2).norm(); };
    double s = 0;
    while (s < s_end) {
      Vec yn = step(y, h);
      if ((psi(y) < 0) != (psi(yn) < 0)) {
        double lo = 0, hi = h;
        while (hi - lo > 1e-13) {
          double mid = 0.5 * (lo + hi);
          ((psi(step(y, mid)) < 0) == (psi(y) < 0) ? lo : hi) = mid;
        }
        out.push_back(s + hi);
      }
      y = yn;
      s += h;
    }
    return out;
  }
};

}  // namespace

TEST(InverseMetric, MinkowskiIsDiagonal) {
  for (int n = 1; n <= 3; ++n) {
    auto m = make_preset("minkowski", n);
    Vec p = Vec::Constant(n + 1, 0.3);
    Mat expect = Mat::Identity(n + 1, n + 1);
    expect(0, 0) = -1;
    EXPECT_LT((inverse_metric_at(m, p) - expect).cwiseAbs().maxCoeff(), 1e-15);
  }
}

TEST(InverseMetric, ConformalScaling) {
  // beta(c) = amp at the bump centre
  auto m = make_preset("conformal_bump", 2, {{"amp", 0.1}, {"ct", 0.2}, {"c1", 0.1}, {"c2", 0.3}});
  Vec p = V({0.2, 0.1, 0.3});
  Mat expect = std::exp(-0.2) * Mat::Identity(3, 3);
  expect(0, 0) *= -1;
  EXPECT_LT((inverse_metric_at(m, p) - expect).cwiseAbs().maxCoeff(), 1e-14);
}

TEST(InverseMetric, LensMatchesDenseInversion) {
  auto m = make_preset("lens", 2);
  Vec p = V({0, 0.3, 0});
  Mat g = metric_at(m, p);
  Mat gi = inverse_metric_at(m, p);
  EXPECT_LT((g * gi - Mat::Identity(3, 3)).cwiseAbs().maxCoeff(), 1e-12);
  Mat lu = g.fullPivLu().inverse();
  EXPECT_LT((gi - lu).cwiseAbs().maxCoeff(), 1e-12);
}

TEST(InverseMetric, OutsideExtendedDomainThrows) {
  auto m = make_preset("minkowski", 1);
  EXPECT_THROW(inverse_metric_at(m, V({0, 5})), DomainError);
}

TEST(Christoffel, MinkowskiVanishes) {
  auto m = make_preset("minkowski", 2);
  for (const Mat& G : christoffel_at(m, V({0.1, 0.2, 0.3}))) EXPECT_EQ(G.cwiseAbs().maxCoeff(), 0);
}

TEST(Christoffel, ConformalMatchesFiniteDifferenceOracle) {
  auto m = make_preset("conformal_bump", 2, {{"amp", 0.15}, {"width", 0.5}});
  Vec p = V({0.45, 0.6, 0.35});
  const int d = 3;
  const double h = 1e-5;
  // d_l g by central differences of metric_at
  std::vector<Mat> dg(d);
  for (int l = 0; l < d; ++l) {
    Vec e = Vec::Zero(d);
    e[l] = h;
    dg[l] = (metric_at(m, p + e) - metric_at(m, p - e)) / (2 * h);
  }
  Mat gi = inverse_metric_at(m, p);
  auto gam = christoffel_at(m, p);
  // beta gradient from g_00 = -exp(2 beta)
  Vec db(d);
  for (int l = 0; l < d; ++l) db[l] = dg[l](0, 0) / (2 * metric_at(m, p)(0, 0));
  Mat eta = Mat::Identity(d, d);
  eta(0, 0) = -1;
  for (int i = 0; i < d; ++i)
    for (int j = 0; j < d; ++j)
      for (int k = 0; k < d; ++k) {
        double fd = 0;
        for (int l = 0; l < d; ++l) fd += 0.5 * gi(i, l) * (dg[j](l, k) + dg[k](l, j) - dg[l](j, k));
        double closed = (i == j) * db[k] + (i == k) * db[j] - eta(j, k) * eta(i, i) * db[i];
        EXPECT_NEAR(gam[i](j, k), fd, 1e-8);
        EXPECT_NEAR(gam[i](j, k), closed, 1e-8);
      }
}

TEST(Christoffel, SymmetricInLowerIndices) {
  for (const auto& name : preset_names()) {
    int n = name == "lens" ? 2 : 2;
    auto m = make_preset(name, n);
    Vec p = V({0.4, 0.3, 0.45});
    for (const Mat& G : christoffel_at(m, p)) EXPECT_EQ((G - G.transpose()).cwiseAbs().maxCoeff(), 0);
  }
}

TEST(Geodesic, MinkowskiStraightLine) {
  auto m = make_preset("minkowski", 1);
  StepControl c;
  c.s_max = 0.25;
  auto g = integrate_null_geodesic(m, V({0, 0.5}), V({1, 1}), GeoMode::Transmit, c);
  EXPECT_NEAR(g.last().s, 0.25, 1e-15);
  EXPECT_NEAR(g.last().y[0], 0.25, 1e-12);
  EXPECT_NEAR(g.last().y[1], 0.75, 1e-12);
}

TEST(Geodesic, MinkowskiMirrorReflection) {
  auto m = make_preset("minkowski", 1);
  auto g = integrate_null_geodesic(m, V({0, 0.5}), V({1, 1}), GeoMode::Reflect);
  ASSERT_FALSE(g.events.empty());
  const auto& ev = g.events.front();
  EXPECT_EQ(ev.kind, EventKind::Reflect);
  EXPECT_NEAR(ev.y[0], 0.5, 1e-9);
  EXPECT_NEAR(ev.y[1], 1.0, 1e-9);
  EXPECT_NEAR(ev.v_out[0], 1, 1e-12);
  EXPECT_NEAR(ev.v_out[1], -1, 1e-12);
}

TEST(Geodesic, NonNullRejected) {
  auto m = make_preset("minkowski", 1);
  EXPECT_THROW(integrate_null_geodesic(m, V({0, 0.5}), V({1, 0.5}), GeoMode::Transmit),
               PreconditionError);
}

TEST(Geodesic, LensEndpointStableUnderTolerance) {
  auto m = make_preset("lens", 2, {{"T", 8}});
  Vec p0 = V({0.1, -1.2, 0.6});
  Vec v0 = null_vector(m, p0, V({1, 0}));
  StepControl a, b;
  a.s_max = b.s_max = 3.0;
  a.tol = 1e-11;
  b.tol = a.tol / 32;
  b.hmax = a.hmax / 2;
  auto ga = integrate_null_geodesic(m, p0, v0, GeoMode::Transmit, a);
  auto gb = integrate_null_geodesic(m, p0, v0, GeoMode::Transmit, b);
  EXPECT_LT((ga.last().y - gb.last().y).cwiseAbs().maxCoeff(), 1e-8);
}

TEST(Geodesic, NullConservation) {
  auto m = make_preset("lens", 2, {{"T", 8}});
  Vec p0 = V({0.1, -1.2, 0.6});
  StepControl c;
  auto g = integrate_null_geodesic(m, p0, null_vector(m, p0, V({1, 0})), GeoMode::Transmit, c);
  for (const auto& seg : g.segments)
    for (const auto& smp : seg) {
      double q = smp.v.dot(metric_at(m, smp.y) * smp.v) / std::max(1.0, smp.v.squaredNorm());
      EXPECT_LE(std::abs(q), 10 * c.tol);
    }
}

TEST(Geodesic, TimeReversalOnStaticPreset) {
  auto m = make_preset("static_profile", 2, {{"T", 4}});
  Vec p0 = V({0.2, 0.3, 0.4});
  Vec v0 = null_vector(m, p0, V({0.6, 0.8}));
  StepControl c;
  c.s_max = 0.3;
  auto g = integrate_null_geodesic(m, p0, v0, GeoMode::Transmit, c);
  Vec pe = g.last().y, ve = g.last().v;
  // time-reflected ray: same spatial path traversed backwards
  Vec v1 = -ve;
  v1[0] = ve[0];
  auto back = integrate_null_geodesic(m, pe, v1, GeoMode::Transmit, c);
  EXPECT_LT((back.last().y.tail(2) - p0.tail(2)).cwiseAbs().maxCoeff(), 1e-9);
}

TEST(Reflect, MinkowskiFace) {
  auto m = make_preset("minkowski", 1);
  Vec r = reflect_velocity(m, V({0.5, 1}), V({1, 1}));
  EXPECT_NEAR(r[0], 1, 1e-15);
  EXPECT_NEAR(r[1], -1, 1e-15);
}

TEST(Reflect, IsometryInvolutionAndTangentialParts) {
  std::mt19937_64 rng(7);
  std::uniform_real_distribution<double> U(-1, 1);
  for (const auto& name : preset_names()) {
    auto m = make_preset(name, 2);
    for (int k = 0; k < 10; ++k) {
      double ang = 3.1 * U(rng);
      Vec b(3);
      if (m.inner().kind == Domain::Kind::Disk)
        b << 0.5 + 0.3 * U(rng), std::cos(ang), std::sin(ang);
      else
        b << 0.5 + 0.3 * U(rng), 0.5 + 0.4 * U(rng), 1.0;
      Vec v(3);
      v << 2, U(rng), U(rng);
      Vec w = reflect_velocity(m, b, v);
      Mat g = metric_at(m, b);
      EXPECT_LE(std::abs(w.dot(g * w) - v.dot(g * v)), 1e-12);
      EXPECT_LT((reflect_velocity(m, b, w) - v).cwiseAbs().maxCoeff(), 1e-12);
      // tangential projection with the numerically computed normal
      Vec nu = unit_outer_normal(m, b);
      Vec tv = v - v.dot(g * nu) * nu, tw = w - w.dot(g * nu) * nu;
      EXPECT_LT((tv - tw).cwiseAbs().maxCoeff(), 1e-12);
      EXPECT_NEAR(w.dot(g * nu), -v.dot(g * nu), 1e-12);
    }
  }
}

TEST(Reflect, TangentialRejected) {
  auto m = make_preset("minkowski", 2, {{"box", 1}});
  EXPECT_THROW(reflect_velocity(m, V({0.5, 0.5, 1.0}), V({1, 1, 0})), PreconditionError);
}

TEST(Transit, MinkowskiIO) {
  auto m = make_preset("minkowski", 1);
  auto r = classify_transit(m, V({0, -0.1}), V({1, 1}));
  EXPECT_EQ(r.cls, TransitClass::IO);
  EXPECT_NEAR(*r.t0, 0.1, 1e-9);
  EXPECT_NEAR(*r.t1, 1.1, 1e-9);
  EXPECT_FALSE(r.t2);
}

TEST(Transit, MinkowskiNoEntry) {
  auto m = make_preset("minkowski", 1);
  EXPECT_EQ(classify_transit(m, V({0, -0.1}), V({1, -1})).cls, TransitClass::NoEntry);
}

TEST(Transit, LensIOIAgainstFineStepOracle) {
  auto m = make_preset("lens", 2, {{"T", 8}});
  Vec z0 = V({0.1, -1.2, 0.6});
  Vec v0 = null_vector(m, z0, V({1, 0}));
  auto r = classify_transit(m, z0, v0);
  ASSERT_EQ(r.cls, TransitClass::IOI);
  EXPECT_LT(*r.t0, *r.t1);
  EXPECT_LT(*r.t1, *r.t2);
  LensOracle o{2.0, 0.4, V({1.5, 0})};
  Vec st(6);
  st << z0, v0;
  auto cr = o.crossings(st, *r.t2 + 0.1, 1e-3);
  ASSERT_GE(cr.size(), 3u);
  EXPECT_NEAR(*r.t0, cr[0], 1e-6);
  EXPECT_NEAR(*r.t1, cr[1], 1e-6);
  EXPECT_NEAR(*r.t2, cr[2], 1e-6);
}

TEST(Transit, OrderingOnRandomLensRays) {
  auto m = make_preset("lens", 2, {{"T", 8}});
  std::mt19937_64 rng(11);
  std::uniform_real_distribution<double> U(-1, 1);
  for (int k = 0; k < 20; ++k) {
    Vec z0 = V({0.1, -1.25, 0.9 * U(rng)});
    Vec v0 = null_vector(m, z0, V({1, 0.3 * U(rng)}));
    auto r = classify_transit(m, z0, v0);
    if (r.cls == TransitClass::IOI) {
      EXPECT_LT(*r.t0, *r.t1);
      EXPECT_LT(*r.t1, *r.t2);
    }
    if (r.cls == TransitClass::IO) EXPECT_LT(*r.t0, *r.t1);
  }
}

TEST(Observation, Minkowski1p1) {
  auto m = make_preset("minkowski", 1);
  auto hits = earliest_observation_set(m, V({0.5, 0.5}), 2);
  ASSERT_EQ(hits.size(), 2u);
  for (const auto& h : hits) {
    ASSERT_FALSE(h.censored);
    EXPECT_NEAR(h.point[0], 1.0, 1e-9);
  }
  EXPECT_NEAR(hits[0].point[1], 0.0, 1e-9);
  EXPECT_NEAR(hits[1].point[1], 1.0, 1e-9);
}

TEST(Observation, Minkowski1p2DiskIsRadial) {
  auto m = make_preset("minkowski", 2);
  const int fan = 24;
  auto hits = earliest_observation_set(m, V({0.5, 0, 0}), fan);
  ASSERT_EQ(static_cast<int>(hits.size()), fan);
  for (const auto& h : hits) {
    ASSERT_FALSE(h.censored);
    EXPECT_NEAR(h.point[0], 1.5, 1e-9);
    // hit lies along the launch direction, within the fan spacing
    double ang = std::acos(std::clamp(h.point.tail(2).normalized().dot(h.direction), -1.0, 1.0));
    EXPECT_LE(ang, 2 * 3.14159265 / fan);
  }
}

TEST(Observation, CensoredWhenHorizonComesFirst) {
  auto m = make_preset("minkowski", 1, {{"T", 0.7}});
  auto hits = earliest_observation_set(m, V({0.5, 0.5}), 2);
  for (const auto& h : hits) EXPECT_TRUE(h.censored);
}

TEST(Observation, FirstHitsOnlyRetrace) {
  auto m = make_preset("lens", 2, {{"T", 8}});
  Vec q0 = V({0.3, 0.2, -0.1});
  auto hits = earliest_observation_set(m, q0, 16);
  for (const auto& h : hits) {
    if (h.censored) continue;
    Vec v = -h.velocity;  // backward along the same ray
    StepControl c;
    c.s_max = h.s;
    auto back = integrate_null_geodesic(m, h.point, v, GeoMode::Transmit, c);
    int exits = 0;
    for (const auto& ev : back.events) exits += ev.kind == EventKind::Exit;
    // the start sits a hair outside N, so only one entry is allowed and no exit
    EXPECT_EQ(exits, 0);
    EXPECT_LT((back.last().y - q0).cwiseAbs().maxCoeff(), 1e-7);
  }
}

TEST(Chart, MinkowskiHalfSpaceIsIdentity) {
  auto m = make_preset("minkowski", 2, {{"box", 1}});
  BoundaryPatch p{2, V({0.2, 0.2}), V({0.8, 0.8})};  // face y = 0
  BoundaryNormalChart ch(m, p, 0.3);
  for (double xn : {0.0, 0.1, 0.25}) {
    auto e = ch.eval(V({0.5, 0.4}), xn);
    EXPECT_LT((e.x - V({0.5, 0.4, xn})).cwiseAbs().maxCoeff(), 1e-12);
    Mat eta = Mat::Identity(3, 3);
    eta(0, 0) = -1;
    EXPECT_LT((e.g_pull - eta).cwiseAbs().maxCoeff(), 1e-10);
  }
}

TEST(Chart, StaticProfileArclengthMatchesQuadrature) {
  auto m = make_preset("static_profile", 1);
  BoundaryPatch p{0, V({0.4}), V({0.6})};
  BoundaryNormalChart ch(m, p, 0.5);
  auto c = [&](double x) {
    Vec y = V({0.5, x});
    return 1 / std::sqrt(m.scale(y).v);
  };
  for (double xn : {0.1, 0.3, 0.5}) {
    double x = ch.eval(V({0.5}), xn).x[1];
    // composite Simpson with many panels for int_0^x dx / c
    const int N = 4000;
    double h = x / N, s = 1 / c(0) + 1 / c(x);
    for (int i = 1; i < N; ++i) s += (i % 2 ? 4 : 2) / c(i * h);
    EXPECT_NEAR(s * h / 3, xn, 1e-8);
  }
}

TEST(Chart, LensOrthogonality) {
  auto m = make_preset("lens", 2, {{"lx", 1.3}, {"width", 0.5}, {"amp", 0.5}});
  BoundaryPatch p{0, V({0.0, -0.4}), V({0.5, 0.4})};
  BoundaryNormalChart ch(m, p, 0.2);
  double worst_an = 0, worst_nn = 0;
  for (double t : {0.0, 0.25, 0.5})
    for (double a : {-0.4, 0.0, 0.4})
      for (double xn : {0.05, 0.1, 0.2}) {
        auto e = ch.eval(V({t, a}), xn);
        worst_nn = std::max(worst_nn, std::abs(e.g_pull(2, 2) - 1));
        worst_an = std::max({worst_an, std::abs(e.g_pull(0, 2)), std::abs(e.g_pull(1, 2))});
      }
  EXPECT_LE(worst_nn, 1e-8);
  EXPECT_LE(worst_an, 1e-8);
}

TEST(Chart, OversizedDepthReportsAdmissibleEstimate) {
  // strongly focusing lens just inside the boundary: normal geodesics cross
  auto m = make_preset("lens", 2, {{"lx", 0.5}, {"width", 0.3}, {"amp", 3.0}});
  BoundaryPatch p{0, V({0.0, -0.3}), V({0.2, 0.3})};
  try {
    BoundaryNormalChart ch(m, p, 1.9);
    FAIL() << "expected degeneracy";
  } catch (const PreconditionError& e) {
    EXPECT_NE(std::string(e.what()).find("largest admissible depth"), std::string::npos);
  }
}

TEST(Sources, MinkowskiBackwardRaysReachBoundary) {
  auto m = make_preset("minkowski", 2, {{"radius", 0.4}, {"outer_radius", 0.8}});
  Vec q0 = V({0.5, 0, 0});
  auto src = choose_interaction_sources(m, q0, 0.6, 0.05);
  ASSERT_EQ(src.size(), 4u);
  for (const auto& s : src) {
    EXPECT_GT(s.z[0], 0);
    EXPECT_LT(m.inner().defining(s.z.tail(2)), 0);
    EXPECT_TRUE(s.transit.cls == TransitClass::I || s.transit.cls == TransitClass::IO);
    // re-classification round trip
    auto again = classify_transit(m, s.z, s.zeta);
    EXPECT_EQ(again.cls, s.transit.cls);
  }
}

TEST(Sources, ZeroSigmaRejected) {
  auto m = make_preset("minkowski", 2, {{"radius", 0.4}, {"outer_radius", 0.8}});
  EXPECT_THROW(choose_interaction_sources(m, V({0.5, 0, 0}), 0.0, 0.05), PreconditionError);
}

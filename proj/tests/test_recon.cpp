#include "lab/recon.hpp"

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

ScalarField one() {
  return [](const Vec&) { return 1.0; };
}

// Coefficient, conformal factor and its potential shared by the ratio tests.
const Vec kBetaCenter = V({1.6, 0.1, -0.05, 0.05});
ScalarField beta_field() {
  return [](const Vec& y) { return 0.3 * std::exp(-(y - kBetaCenter).squaredNorm() / 0.16); };
}
ScalarField a_field() {
  return [](const Vec& y) { return 1 + 0.3 * y[1] + 0.2 * y[2]; };
}

const InteractionSetup& with_potential() {
  static const InteractionSetup s = [] {
    InteractionOptions o;
    o.q = conjugation_potential(make_preset("minkowski", 3, {{"ball", 1}, {"T", 3}}),
                                beta_field());
    return make_interaction_setup(o);
  }();
  return s;
}

const RatioReport& ratio_one() {
  static const RatioReport r = [] {
    auto a = a_field(), b = beta_field();
    ScalarField at = [a, b](const Vec& y) { return std::exp(-b(y)) * a(y); };
    return recover_amplitude_ratio(with_potential(), a, at, b, 400);
  }();
  return r;
}

// Cheap quadrature for identities that hold at any accuracy.
QuadratureOptions rough() {
  QuadratureOptions q;
  q.decay = 6;
  return q;
}

}  // namespace

// ---------------------------------------------------------------- kappa

TEST(Kappa, WorkedExample) {
  auto k = kappa_coefficients(1, 0.6, 1);
  EXPECT_NEAR(k.alpha[0], -4, 1e-14);
  EXPECT_NEAR(k.alpha[1], 10.0 / 3, 1e-14);
  EXPECT_NEAR(k.alpha[2], 5.0 / 3, 1e-14);
  EXPECT_EQ(k.kappa[0], 1);
  EXPECT_NEAR(k.kappa[1], 4, 1e-14);
  EXPECT_NEAR(k.kappa[2], -10.0 / 3, 1e-14);
  EXPECT_NEAR(k.kappa[3], -5.0 / 3, 1e-14);
  // oracle: sum by hand with the numbers above
  Vec r = V({-1, 0, 1, 0}) + 4 * V({-1, 1, 0, 0}) - 10.0 / 3 * V({-1, 0.8, 0.6, 0}) -
          5.0 / 3 * V({-1, 0.8, -0.6, 0});
  EXPECT_LE(r.cwiseAbs().maxCoeff(), 1e-12);
  EXPECT_LE(k.residual, 1e-12);
}

TEST(Kappa, LinearRelationHoldsOnRandomParameters) {
  std::mt19937 rng(7);
  std::uniform_real_distribution<double> ur(-1, 1), us(0.02, 0.98);
  int accepted = 0;
  for (int i = 0; i < 500; ++i) {
    double r0 = ur(rng), sg = us(rng);
    int sign = i % 2 ? 1 : -1;
    auto k = kappa_coefficients(r0, sg, sign);
    Vec sum = Vec::Zero(4);
    for (int j = 0; j < 4; ++j) sum += k.kappa[j] * k.theta[j];
    double scale = 1;
    for (double c : k.kappa) scale = std::max(scale, std::abs(c));
    EXPECT_LE(sum.cwiseAbs().maxCoeff(), 1e-12 * scale);
    for (int j = 0; j < 4; ++j) {
      const Vec& t = k.theta[j];
      EXPECT_NEAR(-t[0] * t[0] + t.tail(3).squaredNorm(), 0, 1e-14);  // null
    }
    ++accepted;
  }
  EXPECT_EQ(accepted, 500);
}

TEST(Kappa, CoefficientsBlowUpAsSigmaShrinks) {
  for (double r0 : {1.0, 0.5, -0.4}) {
    std::array<double, 4> prev{0, 0, 0, 0};
    for (double sg : {0.3, 0.1, 0.03}) {
      auto k = kappa_coefficients(r0, sg, 1);
      for (int j = 1; j <= 3; ++j) {
        EXPECT_GT(std::abs(k.kappa[j]), prev[j]) << "r0 " << r0 << " sigma " << sg;
        prev[j] = std::abs(k.kappa[j]);
      }
    }
  }
}

TEST(Kappa, DegenerateDirectionRejected) {
  EXPECT_THROW(kappa_coefficients(0, 0.6, 1), PreconditionError);
  EXPECT_NO_THROW(kappa_coefficients(0, 0.6, -1));
  EXPECT_THROW(kappa_coefficients(0.5, 0, 1), PreconditionError);
  EXPECT_THROW(kappa_coefficients(0.5, 1, 1), PreconditionError);
  EXPECT_THROW(kappa_coefficients(1.5, 0.5, 1), PreconditionError);
}

// ---------------------------------------------------------------- setup

TEST(Setup, BeamsStartOnTheBoundaryAndMeetAtQ0) {
  auto s = make_interaction_setup();
  EXPECT_TRUE(std::isinf(s.min_approach));
  for (int j = 0; j < 4; ++j) {
    const auto& b = s.beams[j];
    Vec x = b.plain->chart().forward(b.tau_source, Vec::Zero(3));
    EXPECT_NEAR(x.tail(3).norm(), 1, 1e-12);
    EXPECT_EQ(b.tau_source > 0, j == 0);  // b0 runs backward from its exit point
    EXPECT_EQ(b.conj, s.k.kappa[j] < 0);
  }
  EXPECT_EQ(s.beams[3].power, 2);
  EXPECT_NEAR(s.beams[3].freq, std::abs(s.k.kappa[3]) / 2, 1e-15);
}

TEST(Setup, RaysMeetingAwayFromQ0Rejected) {
  // move ray 1 so that it crosses ray 2 at q0 + 0.6 L_2
  auto k = kappa_coefficients(1, 0.6, 1);
  InteractionOptions o;
  o.offsets[1] = 0.6 * (k.theta[2].tail(3) - k.theta[1].tail(3));
  EXPECT_THROW(make_interaction_setup(o), PreconditionError);
}

// ---------------------------------------------------------------- phase sum

TEST(PhaseSum, VanishesAndIsStationaryAtQ0) {
  auto s = make_interaction_setup();
  EXPECT_LT(std::abs(phase_sum(s, s.q0)), 1e-15);
  const double e = 1e-5;
  for (int i = 0; i < 4; ++i) {
    Vec d = Vec::Unit(4, i) * e;
    cplx g = (phase_sum(s, s.q0 + d) - phase_sum(s, s.q0 - d)) / (2 * e);
    EXPECT_LT(std::abs(g), 1e-8) << i;
  }
}

TEST(PhaseSum, ImaginaryPartPositiveAwayFromQ0) {
  for (int sign : {1, -1}) {
    InteractionOptions o;
    o.r0 = 0.4;
    o.sigma = 0.5;
    o.sign = sign;
    auto s = make_interaction_setup(o);
    const double cell = 1 / (8 * std::sqrt(400.0));
    std::mt19937 rng(11);
    std::normal_distribution<double> nd;
    for (int i = 0; i < 400; ++i) {
      Vec d(4);
      for (int k = 0; k < 4; ++k) d[k] = nd(rng);
      double r = (i % 4 + 1) * 0.08 * (0.05 + std::abs(nd(rng)));
      d *= r / d.norm();
      double im = phase_sum(s, s.q0 + d).imag();
      EXPECT_GE(im, -1e-14);
      if (r > cell) EXPECT_GT(im, 0) << "r " << r;
    }
  }
}

// ---------------------------------------------------------------- integrals

TEST(Interaction, LadderIsCauchyWithHalvingDifferences) {
  const auto& r = ratio_one();
  for (int i = 0; i + 2 < 4; ++i) {
    double d1 = std::abs(r.plain[i + 1] - r.plain[i]);
    double d2 = std::abs(r.plain[i + 2] - r.plain[i + 1]);
    EXPECT_NEAR(d1 / d2, 2, 0.3) << "rung " << i;
  }
  EXPECT_GT(std::abs(r.plain[3]), 0.01);
}

TEST(Interaction, RaysWithoutCommonPointGiveLittle) {
  // offset two rays transversally (the z direction is transverse to all four)
  InteractionOptions o;
  o.offsets[1] = V({0, 0, 0.25});
  o.offsets[2] = V({0, 0, -0.25});
  auto apart = make_interaction_setup(o);
  EXPECT_GT(apart.min_approach, 0.1);
  auto met = make_interaction_setup();
  const double rho = 100;
  cplx far = interaction_integral(apart, one(), {}, rho);
  cplx near = interaction_integral(met, one(), {}, rho);
  EXPECT_LE(std::abs(rho * rho * far), 0.1 * std::abs(rho * rho * near));
}

TEST(Interaction, LinearInTheCoefficient) {
  auto s = make_interaction_setup();
  auto a = a_field();
  ScalarField a2 = [a](const Vec& y) { return 2 * a(y); };
  cplx v1 = interaction_integral(s, a, {}, 80, BeamFamily::Plain, rough());
  cplx v2 = interaction_integral(s, a2, {}, 80, BeamFamily::Plain, rough());
  EXPECT_LE(std::abs(v2 - 2.0 * v1), 1e-12 * std::abs(v1));
}

TEST(Interaction, UnderResolvedGridIsAnError) {
  auto s = make_interaction_setup();
  QuadratureOptions q;
  q.cells_per_width = 6;
  EXPECT_THROW(interaction_integral(s, one(), {}, 100, BeamFamily::Plain, q), PreconditionError);
}

// ---------------------------------------------------------------- ratio

TEST(Ratio, ConformalPairGivesOne) {
  const auto& r = ratio_one();
  EXPECT_NEAR(r.ratio_estimate, 1, 0.01);
  EXPECT_TRUE(r.reliable) << r.residual;
  // the potential's a1 term is an O(1/rho) effect on the raw ratios
  EXPECT_GT(std::abs(r.ratio[0] - 1.0), std::abs(r.ratio[3] - 1.0));
}

TEST(Ratio, DoubledCoefficientGivesTwo) {
  auto a = a_field(), b = beta_field();
  ScalarField at = [a, b](const Vec& y) { return 2 * std::exp(-b(y)) * a(y); };
  auto r = recover_amplitude_ratio(with_potential(), a, at, b, 400);
  EXPECT_NEAR(r.ratio_estimate, 2, 0.04);
  EXPECT_TRUE(r.reliable);
}

TEST(Ratio, FlippingTheCoefficientGivesMinusOneAtEveryRho) {
  auto s = make_interaction_setup();
  auto a = a_field();
  ScalarField neg = [a](const Vec& y) { return -a(y); };
  for (double rho : {50.0, 100.0, 200.0, 400.0}) {
    auto v = interaction_integrals(s, {{a, BeamFamily::Plain}, {neg, BeamFamily::Plain}}, rho,
                                   rough());
    EXPECT_EQ(v[1] / v[0], cplx(-1));
  }
}

TEST(Ratio, CommonBeamConstantCancels) {
  auto a = a_field(), b = beta_field();
  ScalarField at = [a, b](const Vec& y) { return 1.5 * std::exp(-b(y)) * a(y); };
  InteractionOptions o;
  o.q = conjugation_potential(make_preset("minkowski", 3, {{"ball", 1}, {"T", 3}}), b);
  auto base = make_interaction_setup(o);
  o.amp_scale = std::polar(0.7, 0.9);
  auto scaled = make_interaction_setup(o);
  auto r1 = recover_amplitude_ratio(base, a, at, b, 200, rough());
  auto r2 = recover_amplitude_ratio(scaled, a, at, b, 200, rough());
  EXPECT_NEAR(r2.ratio_estimate, r1.ratio_estimate, 1e-12);
  EXPECT_LT(std::abs(r2.extrapolated - r1.extrapolated), 1e-12);
}

TEST(Ratio, PotentialOfConstantBetaVanishes) {
  auto m = make_preset("minkowski", 3, {{"ball", 1}, {"T", 3}});
  auto q = conjugation_potential(m, [](const Vec&) { return 0.4; });
  EXPECT_NEAR(q(V({1.5, 0.1, 0.2, 0.3})), 0, 1e-9);
  // beta = c t^2 / 2: e^beta box e^-beta = -(beta_t^2 - beta_tt) - ... with box = -d_t^2
  auto q2 = conjugation_potential(m, [](const Vec& y) { return 0.1 * y[0] * y[0]; });
  double t = 1.2, bt = 0.2 * t, btt = 0.2;
  // box e^-beta = -(e^-beta)'' = -(bt^2 - btt) e^-beta, so q = bt^2 - btt
  EXPECT_NEAR(q2(V({t, 0, 0, 0})), bt * bt - btt, 1e-6);
}

// ---------------------------------------------------------------- ray transform

namespace {

Vec ray_point(double s) { return V({0.1 + s, 0.1 + s}); }
ScalarField q_bump(double c = 0.5, double w = 0.1, double amp = 1) {
  return [=](const Vec& y) {
    double u = y[1] - 0.1 - c;
    return amp * std::exp(-u * u / (w * w)) * (1 + 0.2 * y[0]);
  };
}

}  // namespace

TEST(RayTransform, ZeroPotential) {
  auto m = make_preset("minkowski", 1);
  auto r = ray_transform_q(m, ray_point(0), V({1, 1}), ScalarField(), 0.7);
  EXPECT_EQ(r.weighted, cplx(0));
  EXPECT_EQ(r.unweighted, 0);
  EXPECT_LT(std::abs(r.extracted), 1e-12);
  auto z = ray_transform_q(m, ray_point(0), V({1, 1}), [](const Vec&) { return 0.0; }, 0.7);
  EXPECT_LT(std::abs(z.extracted), 1e-12);
  EXPECT_LT(std::abs(z.weighted), 1e-12);
}

TEST(RayTransform, MatchesQuadratureOnAFlatRay) {
  auto m = make_preset("minkowski", 1);
  auto q = q_bump();
  for (double s0 : {0.3, 0.5, 0.75}) {
    auto r = ray_transform_q(m, ray_point(0), V({1, 1}), q, s0);
    // oracle: composite Simpson of q along the straight ray; det Y = 1 in 1+1
    const int n = 4000;
    double h = s0 / n, sum = q(ray_point(0)) + q(ray_point(s0));
    for (int i = 1; i < n; ++i) sum += (i % 2 ? 4 : 2) * q(ray_point(i * h));
    sum *= h / 3;
    EXPECT_NEAR(r.extracted, sum, 1e-8) << s0;
    EXPECT_NEAR(r.weighted.real(), sum, 1e-8);
    EXPECT_NEAR(r.unweighted, sum, 1e-8);
    EXPECT_LT(std::abs(r.extracted_imag), 1e-10);
  }
}

TEST(RayTransform, DifferentiatingInTheEndpointRecoversQ) {
  auto m = make_preset("minkowski", 1);
  auto q = q_bump();
  for (double s0 : {0.35, 0.45, 0.5, 0.6}) {
    double d = ray_transform_derivative(m, ray_point(0), V({1, 1}), q, s0);
    EXPECT_NEAR(d, q(ray_point(s0)), 1e-3) << s0;
  }
}

TEST(RayTransform, LinearInQ) {
  auto m = make_preset("minkowski", 1);
  auto q1 = q_bump(0.4, 0.1), q2 = q_bump(0.6, 0.15, -0.7);
  ScalarField mix = [q1, q2](const Vec& y) { return q1(y) - 2.5 * q2(y); };
  auto r1 = ray_transform_q(m, ray_point(0), V({1, 1}), q1, 0.8);
  auto r2 = ray_transform_q(m, ray_point(0), V({1, 1}), q2, 0.8);
  auto rm = ray_transform_q(m, ray_point(0), V({1, 1}), mix, 0.8);
  EXPECT_NEAR(rm.extracted, r1.extracted - 2.5 * r2.extracted, 1e-12);
}

// In 1+2 det Y varies along the ray: the extracted value is the plain
// integral of q, while the weighted one differs.
TEST(RayTransform, ExtractedIsTheUnweightedIntegralWhenDetYVaries) {
  auto m = make_preset("minkowski", 2);
  ScalarField q = [](const Vec& y) {
    double u = y[1] + 0.4;
    return std::exp(-u * u / 0.02) * (1 + 0.3 * y[2]);
  };
  Vec p0 = V({0.2, -0.8, 0.1});
  auto r = ray_transform_q(m, p0, V({1, 1, 0}), q, 0.8);
  EXPECT_NEAR(r.extracted, r.unweighted, 1e-8);
  EXPECT_GT(std::abs(r.weighted - cplx(r.unweighted)), 1e-3);
}

// ---------------------------------------------------------------- detection

TEST(Detection, SyntheticOnsetAndPureNoise) {
  const double dt = 0.01;
  std::vector<double> tr(300, 0.0);
  std::mt19937 rng(3);
  std::uniform_real_distribution<double> u(-1e-9, 1e-9);
  for (int k = 0; k < 300; ++k) {
    double t = k * dt - 2.0;
    tr[k] = u(rng) + (t > 0 ? t * t * t : 0.0);
  }
  auto d = detect_arrival(tr, dt, 10, 5);
  ASSERT_GE(d.index, 0);
  EXPECT_NEAR(d.index, 200, 2);

  std::vector<double> noise(300);
  for (auto& v : noise) v = u(rng);
  EXPECT_EQ(detect_arrival(noise, dt, 10, 5).index, -1);
}

TEST(Detection, MinkowskiArrivalsAtTheGeometricTime) {
  auto m = make_preset("minkowski", 1);
  auto r = observation_set_from_data(m, V({0.5, 0.5}), one());
  ASSERT_EQ(r.faces.size(), 2u);
  for (const auto& e : r.faces) {
    ASSERT_FALSE(e.censored) << e.face;
    EXPECT_NEAR(e.t_geometric, 1.0, 1e-9);
    EXPECT_LE(std::abs(e.cell_error), 2) << "face " << e.face;
  }
}

TEST(Detection, ZeroCouplingDetectsNothing) {
  auto m = make_preset("minkowski", 1);
  for (double x : {0.5, 0.3}) {
    auto r = observation_set_from_data(m, V({0.5, x}), [](const Vec&) { return 0.0; });
    for (const auto& e : r.faces) EXPECT_TRUE(e.censored) << x << " face " << e.face;
  }
}

TEST(Detection, MovingQ0ShiftsArrivalsByTheTravelTimes) {
  auto m = make_preset("minkowski", 1);
  auto c = observation_set_from_data(m, V({0.5, 0.5}), one());
  auto r = observation_set_from_data(m, V({0.5, 0.3}), one());
  EXPECT_NEAR(r.shift, 0.2, 1e-9);
  const double h = ArrivalOptions{}.h;
  ASSERT_FALSE(r.faces[0].censored || r.faces[1].censored);
  EXPECT_NEAR(r.faces[0].t_detected - c.faces[0].t_detected, -0.2, 2 * h);
  EXPECT_NEAR(r.faces[1].t_detected - c.faces[1].t_detected, 0.2, 2 * h);
  EXPECT_LT(r.faces[0].t_detected, c.faces[0].t_detected);
  EXPECT_GT(r.faces[1].t_detected, c.faces[1].t_detected);
}

TEST(Detection, NeverEarlierThanTwoCellsOnMinkowski) {
  auto m = make_preset("minkowski", 1);
  ScalarField a = [](const Vec& y) { return 1 + 0.5 * std::sin(3 * y[1]); };
  for (double x : {0.3, 0.4, 0.5, 0.6, 0.7})
    for (double t : {0.5, 0.7}) {
      auto r = observation_set_from_data(m, V({t, x}), a);
      for (const auto& e : r.faces) {
        ASSERT_FALSE(e.censored);
        EXPECT_GE(e.cell_error, -2) << "q0 (" << t << ", " << x << ") face " << e.face;
      }
    }
}

TEST(Detection, PreconditionsAndConfig) {
  EXPECT_THROW(observation_set_from_data(make_preset("minkowski", 2), V({0.5, 0.5, 0.5}), one()),
               PreconditionError);
  EXPECT_THROW(observation_set_from_data(make_preset("conformal_bump", 1), V({0.5, 0.5}), one()),
               ConfigError);
}

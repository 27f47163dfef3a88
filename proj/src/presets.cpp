#include "lab/lorgeo.hpp"

#include <algorithm>
#include <cmath>
#include <set>

namespace lab {

double cutoff(double t) {
  t = std::abs(t);
  if (t <= 0.25) return 1;
  if (t >= 0.5) return 0;
  auto psi = [](double x) { return x > 0 ? std::exp(-1 / x) : 0.0; };
  double u = (t - 0.25) / 0.25;
  return psi(1 - u) / (psi(1 - u) + psi(u));
}

void bump_s(double s, double& f, double& df, double& d2f) {
  if (s >= 1) {
    f = df = d2f = 0;
    return;
  }
  double w = 1 - s;
  f = std::exp(1 - 1 / w);
  df = -f / (w * w);
  d2f = f / (w * w * w * w) - 2 * f / (w * w * w);
}

Domain Domain::interval(double a, double b) {
  Domain d;
  d.kind = Kind::Interval;
  d.lo = Vec::Constant(1, a);
  d.hi = Vec::Constant(1, b);
  return d;
}

Domain Domain::box(Vec lo, Vec hi) {
  Domain d;
  d.kind = Kind::Box;
  d.lo = std::move(lo);
  d.hi = std::move(hi);
  return d;
}

Domain Domain::disk(Vec c, double r) {
  Domain d;
  d.kind = Kind::Disk;
  d.center = std::move(c);
  d.radius = r;
  return d;
}

int Domain::dim() const {
  return kind == Kind::Disk ? static_cast<int>(center.size()) : static_cast<int>(lo.size());
}

double Domain::defining(const Vec& x) const {
  if (kind == Kind::Disk) return radius - (x - center).norm();
  double r = 1e300;
  for (int i = 0; i < lo.size(); ++i) r = std::min({r, x[i] - lo[i], hi[i] - x[i]});
  return r;
}

Vec Domain::outward_normal(const Vec& x) const {
  if (kind == Kind::Disk) return (x - center).normalized();
  Vec n = Vec::Zero(lo.size());
  double best = 1e300;
  for (int i = 0; i < lo.size(); ++i) {
    if (x[i] - lo[i] < best) {
      best = x[i] - lo[i];
      n.setZero();
      n[i] = -1;
    }
    if (hi[i] - x[i] < best) {
      best = hi[i] - x[i];
      n.setZero();
      n[i] = 1;
    }
  }
  return n;
}

bool Domain::contains(const Vec& x, double slack) const { return defining(x) >= -slack; }

ProductMetric::ProductMetric(std::string name, int n, FieldFn alpha, FieldFn scale,
                             Domain inner, Domain outer, double T)
    : name_(std::move(name)),
      n_(n),
      alpha_(std::move(alpha)),
      scale_(std::move(scale)),
      inner_(std::move(inner)),
      outer_(std::move(outer)),
      T_(T) {}

bool ProductMetric::in_domain(const Vec& y) const {
  return outer_.contains(y.tail(n_), 1e-7);
}

MetricJet ProductMetric::jet(const Vec& y, int order) const {
  const int d = n_ + 1;
  ScalarJet a = alpha_(y), s = scale_(y);
  if (a.v <= 0 || s.v <= 0) throw DomainError("metric lost its signature");
  MetricJet J;
  auto build = [&](double av, double sv) {
    Mat g = Mat::Zero(d, d);
    g(0, 0) = -av;
    for (int i = 1; i < d; ++i) g(i, i) = sv;
    return g;
  };
  J.g = build(a.v, s.v);
  if (order >= 1) {
    J.dg.resize(d);
    for (int l = 0; l < d; ++l) J.dg[l] = build(a.g[l], s.g[l]);
  }
  if (order >= 2) {
    J.d2g.assign(d, std::vector<Mat>(d));
    for (int l = 0; l < d; ++l)
      for (int m = 0; m < d; ++m) J.d2g[l][m] = build(a.H(l, m), s.H(l, m));
  }
  return J;
}

namespace {

double get(const PresetParams& p, const std::string& k, double def) {
  auto it = p.find(k);
  return it == p.end() ? def : it->second;
}

void check_keys(const PresetParams& p, const std::set<std::string>& allowed,
                const std::string& preset) {
  for (const auto& [k, v] : p)
    if (!allowed.count(k))
      throw ConfigError("preset " + preset + ": unknown parameter '" + k + "'");
}

const std::set<std::string> kDomainKeys = {"T",  "a",  "b",  "pad", "box", "radius",
                                           "outer_radius", "cx", "cy", "cz", "ball"};

// Default inner/outer domains shared by the presets.
std::pair<Domain, Domain> domains(int n, const PresetParams& p, PresetParams& out) {
  double pad = get(p, "pad", 0.2);
  out["pad"] = pad;
  if (n == 1) {
    double a = get(p, "a", 0), b = get(p, "b", 1);
    out["a"] = a;
    out["b"] = b;
    return {Domain::interval(a, b), Domain::interval(a - pad, b + pad)};
  }
  // n = 2 defaults to a disk, n = 3 to a box; "box" / "ball" switch.
  if ((n == 2 && get(p, "box", 0) == 0) || (n == 3 && get(p, "ball", 0) != 0)) {
    double r = get(p, "radius", 1), R = get(p, "outer_radius", 1.5 * r);
    Vec c(n);
    c[0] = get(p, "cx", 0);
    c[1] = get(p, "cy", 0);
    if (n == 3) c[2] = get(p, "cz", 0);
    out["radius"] = r;
    out["outer_radius"] = R;
    out["cx"] = c[0];
    out["cy"] = c[1];
    if (n == 3) {
      out["cz"] = c[2];
      out["ball"] = 1;
    } else {
      out["box"] = 0;
    }
    if (R <= r) throw ConfigError("outer_radius must exceed radius");
    return {Domain::disk(c, r), Domain::disk(c, R)};
  }
  double a = get(p, "a", 0), b = get(p, "b", 1);
  out["a"] = a;
  out["b"] = b;
  if (n == 2) out["box"] = 1;
  if (n == 3) out["ball"] = 0;
  return {Domain::box(Vec::Constant(n, a), Vec::Constant(n, b)),
          Domain::box(Vec::Constant(n, a - pad), Vec::Constant(n, b + pad))};
}

// p0 + p1*x_k + amp*exp(-(x_k - mu)^2 / w^2), as a jet over y = (t, x).
ScalarJet layered(const Vec& y, int k, double p0, double p1, double amp, double mu,
                  double w) {
  const int d = static_cast<int>(y.size());
  ScalarJet j = ScalarJet::constant(p0, d);
  double xk = y[k + 1];
  double e = std::exp(-(xk - mu) * (xk - mu) / (w * w));
  j.v += p1 * xk + amp * e;
  j.g[k + 1] += p1 + amp * e * (-2 * (xk - mu) / (w * w));
  double u = (xk - mu) / (w * w);
  j.H(k + 1, k + 1) += amp * e * (4 * u * u - 2 / (w * w));
  return j;
}

}  // namespace

std::vector<std::string> preset_names() {
  return {"minkowski", "conformal_bump", "static_profile", "lens", "lapse_linear"};
}

ProductMetric make_preset(const std::string& name, int n, const PresetParams& p) {
  if (n < 1 || n > 3) throw ConfigError("spatial dimension must be 1, 2 or 3");
  PresetParams res;
  double T = get(p, "T", 2.0);
  res["T"] = T;
  const int d = n + 1;
  auto one = [d](const Vec&) { return ScalarJet::constant(1, d); };

  if (name == "minkowski") {
    check_keys(p, kDomainKeys, name);
    auto [in, out] = domains(n, p, res);
    ProductMetric m(name, n, one, one, in, out, T);
    m.flat = m.is_static = true;
    m.params = res;
    return m;
  }
  if (name == "conformal_bump") {
    auto keys = kDomainKeys;
    keys.insert({"amp", "width", "ct", "c1", "c2", "c3"});
    check_keys(p, keys, name);
    auto [in, out] = domains(n, p, res);
    double amp = get(p, "amp", 0.1), w = get(p, "width", 0.3);
    Vec c(d);
    c[0] = get(p, "ct", 0.5);
    for (int i = 1; i < d; ++i) c[i] = get(p, "c" + std::to_string(i), 0.5);
    res["amp"] = amp;
    res["width"] = w;
    res["ct"] = c[0];
    for (int i = 1; i < d; ++i) res["c" + std::to_string(i)] = c[i];
    // alpha = S = exp(2 beta), beta = amp * bump(|y - c|^2 / w^2)
    auto e2b = [=](const Vec& y) {
      Vec r = y - c;
      double s = r.squaredNorm() / (w * w);
      ScalarJet sj{s, 2 * r / (w * w), 2 * Mat::Identity(d, d) / (w * w)};
      double f, df, d2f;
      bump_s(s, f, df, d2f);
      ScalarJet beta = sj.compose(amp * f, amp * df, amp * d2f);
      double ev = std::exp(2 * beta.v);
      return beta.compose(ev, 2 * ev, 4 * ev);
    };
    ProductMetric m(name, n, e2b, e2b, in, out, T);
    m.params = res;
    return m;
  }
  if (name == "static_profile") {
    auto keys = kDomainKeys;
    keys.insert({"axis", "alpha0", "alpha1", "alpha_amp", "alpha_mu", "alpha_w", "c0",
                 "c1", "c_amp", "c_mu", "c_w"});
    check_keys(p, keys, name);
    auto [in, out] = domains(n, p, res);
    int k = static_cast<int>(get(p, "axis", n - 1));
    if (k < 0 || k >= n) throw ConfigError("static_profile: axis out of range");
    double a0 = get(p, "alpha0", 1), a1 = get(p, "alpha1", 0.3),
           aa = get(p, "alpha_amp", 0.2), am = get(p, "alpha_mu", 0.5),
           aw = get(p, "alpha_w", 0.3);
    double c0 = get(p, "c0", 1), c1 = get(p, "c1", 0.0), ca = get(p, "c_amp", 0.25),
           cm = get(p, "c_mu", 0.4), cw = get(p, "c_w", 0.35);
    res.insert({{"axis", k}, {"alpha0", a0}, {"alpha1", a1}, {"alpha_amp", aa},
                {"alpha_mu", am}, {"alpha_w", aw}, {"c0", c0}, {"c1", c1},
                {"c_amp", ca}, {"c_mu", cm}, {"c_w", cw}});
    auto alpha = [=](const Vec& y) { return layered(y, k, a0, a1, aa, am, aw); };
    auto scale = [=](const Vec& y) {
      ScalarJet c = layered(y, k, c0, c1, ca, cm, cw);
      double iv = 1 / (c.v * c.v);  // S = c^-2
      return c.compose(iv, -2 * iv / c.v, 6 * iv / (c.v * c.v));
    };
    ProductMetric m(name, n, alpha, scale, in, out, T);
    m.is_static = true;
    m.params = res;
    return m;
  }
  if (name == "lens") {
    if (n != 2) throw ConfigError("lens preset is 1+2 only");
    auto keys = kDomainKeys;
    keys.insert({"amp", "width", "lx", "ly"});
    check_keys(p, keys, name);
    PresetParams q = p;
    if (!q.count("outer_radius")) q["outer_radius"] = 3.0;
    auto [in, out] = domains(n, q, res);
    double amp = get(p, "amp", 2.0), w = get(p, "width", 0.4);
    Vec l(2);
    l << get(p, "lx", 1.5), get(p, "ly", 0);
    res.insert({{"amp", amp}, {"width", w}, {"lx", l[0]}, {"ly", l[1]}});
    auto scale = [=](const Vec& y) {
      Vec r = Vec::Zero(3);
      r.tail(2) = y.tail(2) - l;
      double s = r.squaredNorm() / (w * w);
      Mat Hs = Mat::Zero(3, 3);
      Hs.bottomRightCorner(2, 2) = 2 * Mat::Identity(2, 2) / (w * w);
      ScalarJet sj{s, 2 * r / (w * w), Hs};
      double e = std::exp(-s);
      ScalarJet ind = sj.compose(1 + amp * e, -amp * e, amp * e);  // index of refraction
      return ind * ind;
    };
    ProductMetric m(name, n, one, scale, in, out, T);
    m.is_static = true;
    m.params = res;
    return m;
  }
  if (name == "lapse_linear") {
    auto keys = kDomainKeys;
    keys.insert({"axis", "slope"});
    check_keys(p, keys, name);
    PresetParams q = p;
    if (n == 2 && !q.count("box")) q["box"] = 1;
    auto [in, out] = domains(n, q, res);
    int k = static_cast<int>(get(p, "axis", n - 1));
    double sl = get(p, "slope", 1.0);
    res["axis"] = k;
    res["slope"] = sl;
    auto alpha = [=](const Vec& y) { return layered(y, k, 1, sl, 0, 0, 1); };
    ProductMetric m(name, n, alpha, one, in, out, T);
    m.is_static = true;
    m.params = res;
    return m;
  }
  throw ConfigError("unknown metric preset '" + name + "'");
}

}  // namespace lab

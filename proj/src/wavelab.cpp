#include "lab/wavelab.hpp"

#include <cmath>
#include <limits>

namespace lab {

namespace {

double bump(double s) {
  double f, df, d2f;
  bump_s(s, f, df, d2f);
  return f;
}

// smooth 0 -> 1 over [0, 1]
double ramp(double s) {
  if (s <= 0) return 0;
  if (s >= 1) return 1;
  double a = std::exp(-1 / s), b = std::exp(-1 / (1 - s));
  return a / (a + b);
}

double eval(const ScalarField& f, const Vec& y) { return f ? f(y) : 0.0; }

Vec st(double t, const Vec& x) {
  Vec y(x.size() + 1);
  y[0] = t;
  y.tail(x.size()) = x;
  return y;
}

// Coefficients of the divergence form at one point.
struct Coef {
  double w;   // sqrt|det g|
  Mat W;      // w g^{jk}
  Mat ginv;
};

Coef coef(const WaveMetric& m, const Vec& y) {
  Mat g = m.g(y);
  Coef c;
  c.ginv = g.inverse();
  c.w = std::sqrt(std::abs(g.determinant()));
  c.W = c.w * c.ginv;
  return c;
}

// Node layout of a grid.
struct Layout {
  int n = 1;
  std::vector<int> shape;
  Vec origin;
  double h = 0;
  std::vector<bool> inside, dirichlet;
  std::vector<int> dir_face;            // face of each Dirichlet node, -1 otherwise
  std::vector<std::vector<int>> faces;  // nodes carrying traces, per face
  std::vector<std::vector<Vec>> normals;
  int size() const {
    int s = 1;
    for (int v : shape) s *= v;
    return s;
  }
  Vec node(int k) const {
    Vec x(n);
    for (int a = 0; a < n; ++a) {
      x[a] = origin[a] + h * (k % shape[a]);
      k /= shape[a];
    }
    return x;
  }
  int index(int i, int j) const { return i + shape[0] * j; }
};

int cells(double len, double h) {
  double r = len / h;
  int N = static_cast<int>(std::lround(r));
  if (N < 4 || std::abs(r - N) > 1e-6 * std::max(1.0, r))
    throw ConfigError("grid: domain length must be a multiple of h (got " + std::to_string(r) +
                      " cells)");
  return N;
}

Layout make_layout(const GridSpec& gs) {
  const Domain& D = gs.domain;
  Layout L;
  L.h = gs.h;
  L.n = D.dim();
  if (L.n == 1) {
    int N = cells(D.hi[0] - D.lo[0], gs.h);
    L.shape = {N + 1};
    L.origin = D.lo;
    L.inside.assign(N + 1, true);
    L.dirichlet.assign(N + 1, false);
    L.dir_face.assign(N + 1, -1);
    L.inside[0] = L.inside[N] = false;
    L.dirichlet[0] = L.dirichlet[N] = true;
    L.dir_face[0] = 0;
    L.dir_face[N] = 1;
    L.faces = {{0}, {N}};
    L.normals = {{Vec::Constant(1, -1)}, {Vec::Constant(1, 1)}};
    return L;
  }
  if (L.n != 2) throw ConfigError("wave solver: 1+1 and 1+2 only");
  if (D.kind == Domain::Kind::Box) {
    int N0 = cells(D.hi[0] - D.lo[0], gs.h), N1 = cells(D.hi[1] - D.lo[1], gs.h);
    L.shape = {N0 + 1, N1 + 1};
    L.origin = D.lo;
    int S = L.size();
    L.inside.assign(S, false);
    L.dirichlet.assign(S, false);
    L.dir_face.assign(S, -1);
    L.faces.assign(4, {});
    L.normals.assign(4, {});
    for (int j = 0; j <= N1; ++j)
      for (int i = 0; i <= N0; ++i) {
        int k = L.index(i, j);
        bool edge0 = i == 0 || i == N0, edge1 = j == 0 || j == N1;
        if (!edge0 && !edge1) {
          L.inside[k] = true;
          continue;
        }
        L.dirichlet[k] = true;
        L.dir_face[k] = edge0 ? (i == N0) : 2 + (j == N1);
        if (edge0 && edge1) continue;  // corners carry no trace
        int f = L.dir_face[k];
        Vec nrm = Vec::Zero(2);
        nrm[f / 2] = f % 2 ? 1 : -1;
        L.faces[f].push_back(k);
        L.normals[f].push_back(nrm);
      }
    return L;
  }
  // disk, staircased
  double r = D.radius;
  int N = static_cast<int>(std::ceil(2 * r / gs.h)) + 4;
  L.shape = {N + 1, N + 1};
  L.origin = D.center - Vec::Constant(2, 0.5 * N * gs.h);
  int S = L.size();
  L.inside.assign(S, false);
  L.dirichlet.assign(S, false);
  L.dir_face.assign(S, -1);
  for (int k = 0; k < S; ++k) L.inside[k] = (L.node(k) - D.center).norm() < r;
  L.faces.assign(1, {});
  L.normals.assign(1, {});
  for (int j = 1; j < N; ++j)
    for (int i = 1; i < N; ++i) {
      int k = L.index(i, j);
      if (L.inside[k]) continue;
      if (L.inside[k - 1] || L.inside[k + 1] || L.inside[k - N - 1] || L.inside[k + N + 1]) {
        L.dirichlet[k] = true;
        L.dir_face[k] = 0;
        L.faces[0].push_back(k);
        L.normals[0].push_back((L.node(k) - D.center).normalized());
      }
    }
  return L;
}

WaveField empty_field(const Layout& L, double dt) {
  WaveField w;
  w.shape = L.shape;
  w.origin = L.origin;
  w.h = L.h;
  w.dt = dt;
  w.inside = L.inside;
  return w;
}

void check_cfl(const WaveMetric& m, const GridSpec& g) {
  if (!(g.cfl > 0 && g.cfl <= 0.9)) throw ConfigError("grid: cfl factor must lie in (0, 0.9]");
  if (!(g.dt > 0)) throw ConfigError("grid: dt must be positive");
  double lim = g.cfl * g.h / (max_speed(m, g) * std::sqrt(double(m.n)));
  if (g.dt > lim * (1 + 1e-12))
    throw ConfigError("grid: CFL violated, dt = " + std::to_string(g.dt) + " > " +
                      std::to_string(lim));
}

// Second-order one-sided derivative along axis a from node k toward direction d.
bool one_sided(const Layout& L, const Vec& u, int k, int a, int d, double& out) {
  int stride = a == 0 ? 1 : L.shape[0];
  int coord = a == 0 ? k % L.shape[0] : k / L.shape[0];
  auto ok = [&](int c) {
    return c >= 0 && c < L.shape[a] &&
           (L.inside[k + (c - coord) * stride] || L.dirichlet[k + (c - coord) * stride]);
  };
  if (ok(coord + d) && ok(coord + 2 * d)) {
    out = d * (-3 * u[k] + 4 * u[k + d * stride] - u[k + 2 * d * stride]) / (2 * L.h);
    return true;
  }
  if (ok(coord + d)) {
    out = d * (u[k + d * stride] - u[k]) / L.h;
    return true;
  }
  return false;
}

struct Solver {
  const WaveMetric& m;
  ScalarField q, a;
  const BoundaryData& f;
  const GridSpec& gs;
  const SolveOptions& opt;
  Layout L;
  int steps = 0;

  Solver(const WaveMetric& m_, ScalarField q_, ScalarField a_, const BoundaryData& f_,
         const GridSpec& gs_, const SolveOptions& o)
      : m(m_), q(std::move(q_)), a(std::move(a_)), f(f_), gs(gs_), opt(o) {
    if (gs.domain.dim() != m.n) throw ConfigError("grid: domain and metric dimensions differ");
    check_cfl(m, gs);
    L = make_layout(gs);
    steps = static_cast<int>(std::ceil(gs.T / gs.dt - 1e-9));
  }

  double t(int n) const { return n * gs.dt; }

  void boundary(int n, Vec& u) const {
    for (int k = 0; k < L.size(); ++k)
      if (L.dirichlet[k]) u[k] = f(L.dir_face[k], t(n), L.node(k));
  }

  DNSignal new_signal() const {
    DNSignal s;
    for (int n = 0; n <= steps; ++n) s.t.push_back(t(n));
    for (size_t fi = 0; fi < L.faces.size(); ++fi) {
      FaceTrace ft;
      for (int k : L.faces[fi]) ft.nodes.push_back(L.node(k));
      ft.f = Mat::Zero(steps + 1, L.faces[fi].size());
      ft.neumann = ft.f;
      s.faces.push_back(ft);
    }
    return s;
  }

  // d_nu u = nu^j d_j u, nu = g^{-1} n / |n|_g with n the outward conormal.
  void neumann(int n, const Vec& u, DNSignal& s) const {
    for (size_t fi = 0; fi < L.faces.size(); ++fi)
      for (size_t c = 0; c < L.faces[fi].size(); ++c) {
        int k = L.faces[fi][c];
        Vec x = L.node(k), y = st(t(n), x);
        Mat gi = m.g(y).inverse();
        const Vec& nr = L.normals[fi][c];
        Vec conorm = Vec::Zero(m.n + 1);
        conorm.tail(m.n) = nr;
        double norm = std::sqrt(conorm.dot(gi * conorm));
        Vec nu = gi * conorm / norm;
        double val = 0;
        if (std::abs(nu[0]) > 0) {
          double fp = f(L.dir_face[k], t(n + 1), x);
          double fm = n > 0 ? f(L.dir_face[k], t(n - 1), x) : 0.0;
          val += nu[0] * (fp - fm) / (2 * gs.dt);
        }
        for (int ax = 0; ax < m.n; ++ax) {
          if (std::abs(nu[1 + ax]) < 1e-14) continue;
          int d = nr[ax] > 0 ? -1 : (nr[ax] < 0 ? 1 : (nu[1 + ax] > 0 ? -1 : 1));
          double du;
          if (one_sided(L, u, k, ax, d, du)) val += nu[1 + ax] * du;
        }
        s.faces[fi].f(n, c) = u[k];
        s.faces[fi].neumann(n, c) = val;
      }
  }

  void check_blowup(const Vec& u, int n) const {
    double mx = u.cwiseAbs().maxCoeff();
    if (!std::isfinite(mx) || mx > gs.blowup_cap)
      throw DivergenceError("wave solver: |u| exceeded " + std::to_string(gs.blowup_cap) +
                            " at time step " + std::to_string(n));
  }

  void snapshot(WaveField& w, int n, const Vec& u) const {
    if (opt.snapshot_stride > 0 && n % opt.snapshot_stride == 0) {
      w.snap_step.push_back(n);
      w.snaps.push_back(u);
    }
  }

  void source(int n, const WaveField& w, Vec& F) const {
    F.setZero();
    if (opt.source) opt.source(n, t(n), w, F);
  }

  WaveResult run1() const;
  WaveResult run2() const;
};

WaveResult Solver::run1() const {
  const int N = L.shape[0] - 1, S = N + 1;
  const double h = L.h, dt = gs.dt;
  WaveResult res;
  res.field = empty_field(L, dt);
  res.dn = new_signal();
  std::vector<Vec> xs(S), xh(N);
  for (int i = 0; i < S; ++i) xs[i] = L.node(i);
  for (int i = 0; i < N; ++i) xh[i] = (xs[i] + xs[i + 1]) / 2;

  // A = w g^tt at nodes, B = w g^tx at nodes and half nodes, C = w g^xx at half nodes
  auto nodesA = [&](double tt, Vec& A, Vec& B) {
    for (int i = 0; i < S; ++i) {
      Coef c = coef(m, st(tt, xs[i]));
      A[i] = c.W(0, 0);
      B[i] = c.W(0, 1);
    }
  };
  auto halves = [&](double tt, Vec& Bh, Vec& Ch) {
    for (int i = 0; i < N; ++i) {
      Coef c = coef(m, st(tt, xh[i]));
      Bh[i] = c.W(0, 1);
      Ch[i] = c.W(1, 1);
    }
  };
  Vec Ahm(S), Ahp(S), Bm(S), B0(S), Bp(S), Bh(N), Ch(N), tmp(S), w0(S);
  Vec qv = Vec::Zero(S), av = Vec::Zero(S);
  const bool stat = m.static_in_time;
  nodesA(-dt / 2, Ahm, tmp);
  nodesA(-dt, tmp, Bm);
  nodesA(0, tmp, B0);
  nodesA(dt / 2, Ahp, tmp);
  halves(0, Bh, Ch);
  auto weights = [&](double tt) {
    for (int i = 0; i < S; ++i) {
      Vec y = st(tt, xs[i]);
      w0[i] = coef(m, y).w;
      qv[i] = eval(q, y);
      av[i] = eval(a, y);
    }
  };
  weights(0);

  Vec um = Vec::Zero(S), u = Vec::Zero(S), up(S), F(S);
  boundary(0, u);
  Vec lo(S), di(S), upc(S), rhs(S);
  neumann(0, u, res.dn);
  snapshot(res.field, 0, u);
  for (int n = 0; n < steps; ++n) {
    double tn = t(n);
    if (!stat && n > 0) {
      Ahm = Ahp;
      nodesA(tn + dt / 2, Ahp, tmp);
      Bm = B0;
      B0 = Bp;
      halves(tn, Bh, Ch);
      if (q || a) weights(tn);
      else
        for (int i = 0; i < S; ++i) w0[i] = coef(m, st(tn, xs[i])).w;
    }
    if (!stat || n == 0) nodesA(tn + dt, tmp, Bp);
    source(n, res.field, F);
    up.setZero();
    boundary(n + 1, up);
    const double c4 = 1 / (4 * h * dt);
    for (int i = 1; i < N; ++i) {
      double T4 = (Ch[i] * (u[i + 1] - u[i]) - Ch[i - 1] * (u[i] - u[i - 1])) / (h * h);
      double u2 = u[i] * u[i];
      double T5 = w0[i] * (qv[i] * u[i] + av[i] * u2 * u2 - F[i]);
      di[i] = Ahp[i] / (dt * dt) + (Bh[i] - Bh[i - 1]) * c4;
      upc[i] = (Bp[i] + Bh[i]) * c4;
      lo[i] = (-Bp[i] - Bh[i - 1]) * c4;
      rhs[i] = Ahp[i] * u[i] / (dt * dt) + Ahm[i] * (u[i] - um[i]) / (dt * dt) +
               Bm[i] * (um[i + 1] - um[i - 1]) * c4 +
               (Bh[i] * (um[i + 1] + um[i]) - Bh[i - 1] * (um[i] + um[i - 1])) * c4 - T4 - T5;
    }
    rhs[1] -= lo[1] * up[0];
    rhs[N - 1] -= upc[N - 1] * up[N];
    // Thomas
    for (int i = 2; i < N; ++i) {
      double r = lo[i] / di[i - 1];
      di[i] -= r * upc[i - 1];
      rhs[i] -= r * rhs[i - 1];
    }
    up[N - 1] = rhs[N - 1] / di[N - 1];
    for (int i = N - 2; i >= 1; --i) up[i] = (rhs[i] - upc[i] * up[i + 1]) / di[i];
    check_blowup(up, n + 1);
    if (opt.record_energy) {
      double e = 0;
      for (int i = 1; i < N; ++i) e += -Ahp[i] * std::pow((up[i] - u[i]) / dt, 2);
      for (int i = 0; i < N; ++i) e += Ch[i] * (up[i + 1] - up[i]) * (u[i + 1] - u[i]) / (h * h);
      res.energy.push_back(0.5 * h * e);
    }
    um.swap(u);
    u.swap(up);
    neumann(n + 1, u, res.dn);
    snapshot(res.field, n + 1, u);
  }
  res.field.prev = um;
  res.field.last = u;
  return res;
}

WaveResult Solver::run2() const {
  const int S = L.size(), nx = L.shape[0];
  const double h = L.h, dt = gs.dt;
  WaveResult res;
  res.field = empty_field(L, dt);
  res.dn = new_signal();
  std::vector<int> act;
  for (int k = 0; k < S; ++k)
    if (L.inside[k]) act.push_back(k);
  const int M = static_cast<int>(act.size());
  std::vector<Vec> xs(M);
  for (int c = 0; c < M; ++c) xs[c] = L.node(act[c]);
  {
    Mat g = m.g(st(0, xs[M / 2]));
    if (std::abs(g(0, 1)) + std::abs(g(0, 2)) + std::abs(g(1, 2)) > 1e-14 * g.norm())
      throw PreconditionError("1+2 wave solver: metric must have no cross terms");
  }
  // per active node: A at n -/+ 1/2, C^x at -/+ h/2, C^y at -/+ h/2, w, q, a
  Vec Ahm(M), Ahp(M), Cxm(M), Cxp(M), Cym(M), Cyp(M), w0(M), qv = Vec::Zero(M),
      av = Vec::Zero(M);
  Vec ex = Vec::Zero(2), ey = Vec::Zero(2);
  ex[0] = h / 2;
  ey[1] = h / 2;
  auto fill = [&](double tn, bool first) {
    for (int c = 0; c < M; ++c) {
      if (first) Ahm[c] = coef(m, st(tn - dt / 2, xs[c])).W(0, 0);
      else Ahm[c] = Ahp[c];
      Ahp[c] = coef(m, st(tn + dt / 2, xs[c])).W(0, 0);
      Cxm[c] = coef(m, st(tn, xs[c] - ex)).W(1, 1);
      Cxp[c] = coef(m, st(tn, xs[c] + ex)).W(1, 1);
      Cym[c] = coef(m, st(tn, xs[c] - ey)).W(2, 2);
      Cyp[c] = coef(m, st(tn, xs[c] + ey)).W(2, 2);
      Vec y = st(tn, xs[c]);
      w0[c] = coef(m, y).w;
      qv[c] = eval(q, y);
      av[c] = eval(a, y);
    }
  };
  fill(0, true);
  Vec um = Vec::Zero(S), u = Vec::Zero(S), up(S), F(S);
  boundary(0, u);
  neumann(0, u, res.dn);
  snapshot(res.field, 0, u);
  for (int n = 0; n < steps; ++n) {
    if (!m.static_in_time && n > 0) fill(t(n), false);
    source(n, res.field, F);
    up.setZero();
    boundary(n + 1, up);
    for (int c = 0; c < M; ++c) {
      int k = act[c];
      double lap = (Cxp[c] * (u[k + 1] - u[k]) - Cxm[c] * (u[k] - u[k - 1]) +
                    Cyp[c] * (u[k + nx] - u[k]) - Cym[c] * (u[k] - u[k - nx])) /
                   (h * h);
      double u2 = u[k] * u[k];
      double src = w0[c] * (qv[c] * u[k] + av[c] * u2 * u2 - F[k]);
      up[k] = u[k] + (Ahm[c] * (u[k] - um[k]) - dt * dt * (lap + src)) / Ahp[c];
    }
    check_blowup(up, n + 1);
    if (opt.record_energy) {
      double e = 0;
      for (int c = 0; c < M; ++c) {
        int k = act[c];
        e += -Ahp[c] * std::pow((up[k] - u[k]) / dt, 2);
      }
      // gradient part over all cell edges touching active nodes
      for (int k = 0; k < S; ++k) {
        int i = k % nx, j = k / nx;
        if (i + 1 < nx && (L.inside[k] || L.inside[k + 1])) {
          Vec mid = L.node(k);
          mid[0] += h / 2;
          e += coef(m, st(t(n), mid)).W(1, 1) * (up[k + 1] - up[k]) * (u[k + 1] - u[k]) / (h * h);
        }
        if (j + 1 < L.shape[1] && (L.inside[k] || L.inside[k + nx])) {
          Vec mid = L.node(k);
          mid[1] += h / 2;
          e += coef(m, st(t(n), mid)).W(2, 2) * (up[k + nx] - up[k]) * (u[k + nx] - u[k]) /
               (h * h);
        }
      }
      res.energy.push_back(0.5 * h * h * e);
    }
    um.swap(u);
    u.swap(up);
    neumann(n + 1, u, res.dn);
    snapshot(res.field, n + 1, u);
  }
  res.field.prev = um;
  res.field.last = u;
  return res;
}

BoundaryData scaled_data(const BoundaryData& f, double s) {
  return [f, s](int face, double t, const Vec& x) { return s * f(face, t, x); };
}

void for_each_sign(const std::function<void(const std::array<int, 4>&)>& body) {
  for (int mask = 0; mask < 16; ++mask) {
    std::array<int, 4> s;
    for (int j = 0; j < 4; ++j) s[j] = (mask >> j & 1) ? -1 : 1;
    body(s);
  }
}

struct Stencil {
  DNSignal u4;
  double max_norm = 0;
};

Stencil mixed_stencil(const WaveMetric& g, const ScalarField& q, const ScalarField& a,
                      const std::array<BoundaryData, 4>& f, const std::array<double, 4>& eps,
                      const GridSpec& grid) {
  double prod = eps[0] * eps[1] * eps[2] * eps[3];
  Stencil out;
  bool first = true;
  for_each_sign([&](const std::array<int, 4>& s) {
    std::vector<BoundaryData> parts(f.begin(), f.end());
    std::vector<double> wts(4);
    for (int j = 0; j < 4; ++j) wts[j] = s[j] * eps[j];
    DNSignal d = solve_semilinear(g, q, a, sum(parts, wts), grid).dn;
    out.max_norm = std::max(out.max_norm, d.norm());
    DNSignal term = d * (s[0] * s[1] * s[2] * s[3] / (16 * prod));
    if (first) out.u4 = term;
    else
      for (size_t fi = 0; fi < term.faces.size(); ++fi)
        out.u4.faces[fi].neumann += term.faces[fi].neumann;
    first = false;
  });
  return out;
}

}  // namespace

Vec WaveField::node(int k) const {
  Vec x(shape.size());
  for (size_t a = 0; a < shape.size(); ++a) {
    x[a] = origin[a] + h * (k % shape[a]);
    k /= shape[a];
  }
  return x;
}

WaveMetric wave_metric(const ProductMetric& m) {
  auto mp = std::make_shared<const ProductMetric>(m);
  WaveMetric w;
  w.n = m.spatial_dim();
  w.static_in_time = m.is_static;
  w.g = [mp](const Vec& y) {
    double al = mp->alpha(y).v, S = mp->scale(y).v;
    Mat g = S * Mat::Identity(y.size(), y.size());
    g(0, 0) = -al;
    return g;
  };
  return w;
}

Diffeo identity_diffeo(int n) {
  return {[](const Vec& y) { return y; },
          [n](const Vec&) { return Mat(Mat::Identity(n + 1, n + 1)); }};
}

Diffeo bump_diffeo(const Vec& center, double radius, const Vec& shift) {
  Diffeo d;
  d.map = [=](const Vec& y) {
    double s = (y - center).squaredNorm() / (radius * radius);
    return Vec(y + shift * bump(s));
  };
  d.jacobian = [=](const Vec& y) {
    double s = (y - center).squaredNorm() / (radius * radius), f, df, d2f;
    bump_s(s, f, df, d2f);
    Mat J = Mat::Identity(y.size(), y.size());
    J += shift * (df * 2 * (y - center) / (radius * radius)).transpose();
    return J;
  };
  return d;
}

Diffeo boundary_shift_diffeo(double amp, double t_on, double rise) {
  auto r = [t_on, rise](double t) { return ramp((t - t_on) / rise); };
  Diffeo d;
  d.map = [=](const Vec& y) {
    Vec z = y;
    z[1] += amp * r(y[0]) * (1 - y[1]);
    return z;
  };
  d.jacobian = [=](const Vec& y) {
    const double e = 1e-6;
    double dr = (r(y[0] + e) - r(y[0] - e)) / (2 * e);
    Mat J = Mat::Identity(2, 2);
    J(1, 0) = amp * dr * (1 - y[1]);
    J(1, 1) = 1 - amp * r(y[0]);
    return J;
  };
  return d;
}

WaveMetric pullback(const WaveMetric& m, const Diffeo& psi) {
  WaveMetric w;
  w.n = m.n;
  w.static_in_time = false;
  w.g = [m, psi](const Vec& y) {
    Mat J = psi.jacobian(y);
    return Mat(J.transpose() * m.g(psi.map(y)) * J);
  };
  return w;
}

ScalarField pullback(const ScalarField& f, const Diffeo& psi) {
  if (!f) return f;
  return [f, psi](const Vec& y) { return f(psi.map(y)); };
}

WaveMetric conformal(const WaveMetric& m, const ScalarField& beta) {
  WaveMetric w;
  w.n = m.n;
  w.static_in_time = false;
  w.g = [m, beta](const Vec& y) { return Mat(std::exp(-2 * beta(y)) * m.g(y)); };
  return w;
}

double max_speed(const WaveMetric& m, const GridSpec& grid) {
  Layout L = make_layout(grid);
  std::vector<double> times{0};
  if (!m.static_in_time)
    for (int k = 1; k <= 16; ++k) times.push_back(grid.T * k / 16);
  double c = 0;
  for (double t : times)
    for (int k = 0; k < L.size(); ++k) {
      if (!L.inside[k] && !L.dirichlet[k]) continue;
      Mat g = m.g(st(t, L.node(k)));
      for (int a = 1; a <= m.n; ++a) {
        // g_tt + 2 g_ta v + g_aa v^2 = 0
        double A = g(a, a), B = g(0, a), C = g(0, 0);
        double disc = std::sqrt(std::max(0.0, B * B - A * C));
        c = std::max({c, std::abs((-B + disc) / A), std::abs((-B - disc) / A)});
      }
    }
  return c;
}

GridSpec make_grid(const WaveMetric& m, const Domain& d, double h, double T, double cfl) {
  GridSpec g;
  g.domain = d;
  double len = d.kind == Domain::Kind::Disk ? 2 * d.radius : (d.hi - d.lo).maxCoeff();
  if (d.kind != Domain::Kind::Disk) {
    int N = std::max(4, static_cast<int>(std::lround((d.hi[0] - d.lo[0]) / h)));
    h = (d.hi[0] - d.lo[0]) / N;
  }
  (void)len;
  g.h = h;
  g.T = T;
  g.cfl = cfl;
  g.dt = 1;  // placeholder for max_speed's layout
  g.dt = cfl * h / (max_speed(m, g) * std::sqrt(double(m.n)));
  return g;
}

BoundaryData zero_data() {
  return [](int, double, const Vec&) { return 0.0; };
}

BoundaryData face_pulse(int face, double t0, double width, double amp, const Vec& c, double r) {
  return [=](int fc, double t, const Vec& x) {
    if (fc != face) return 0.0;
    double v = amp * bump((t - t0) * (t - t0) / (width * width));
    if (r > 0) v *= bump((x - c).squaredNorm() / (r * r));
    return v;
  };
}

BoundaryData sum(const std::vector<BoundaryData>& parts, const std::vector<double>& weights) {
  return [parts, weights](int face, double t, const Vec& x) {
    double v = 0;
    for (size_t j = 0; j < parts.size(); ++j)
      if (weights[j] != 0) v += weights[j] * parts[j](face, t, x);
    return v;
  };
}

double DNSignal::norm() const {
  double dt = t.size() > 1 ? t[1] - t[0] : 1;
  double s = 0;
  for (const auto& f : faces) s += f.neumann.squaredNorm();
  return std::sqrt(s * dt);
}

DNSignal operator-(const DNSignal& a, const DNSignal& b) {
  DNSignal d = a;
  for (size_t i = 0; i < d.faces.size(); ++i) {
    d.faces[i].neumann -= b.faces[i].neumann;
    d.faces[i].f -= b.faces[i].f;
  }
  return d;
}

DNSignal operator*(const DNSignal& a, double s) {
  DNSignal d = a;
  for (auto& f : d.faces) {
    f.neumann *= s;
    f.f *= s;
  }
  return d;
}

double inner(const DNSignal& a, const DNSignal& b) {
  double dt = a.t.size() > 1 ? a.t[1] - a.t[0] : 1;
  double s = 0;
  for (size_t i = 0; i < a.faces.size(); ++i)
    s += (a.faces[i].neumann.array() * b.faces[i].neumann.array()).sum();
  return s * dt;
}

double relative_l2(const DNSignal& a, const DNSignal& ref) {
  double r = ref.norm(), d = (a - ref).norm();
  return r > 0 ? d / r : d;
}

GridSource field_source(const ScalarField& F) {
  return [F](int, double t, const WaveField& w, Vec& out) {
    for (int k = 0; k < out.size(); ++k)
      if (w.inside[k]) out[k] = F(st(t, w.node(k)));
  };
}

WaveResult solve_semilinear(const WaveMetric& g, const ScalarField& q, const ScalarField& a,
                            const BoundaryData& f, const GridSpec& grid,
                            const SolveOptions& opt) {
  Solver s(g, q, a, f, grid, opt);
  return g.n == 1 ? s.run1() : s.run2();
}

WaveResult solve_linear(const WaveMetric& g, const ScalarField& q, const BoundaryData& f,
                        const GridSpec& grid, const SolveOptions& opt) {
  return solve_semilinear(g, q, ScalarField{}, f, grid, opt);
}

DNSignal dn_linearized(const WaveMetric& g, const ScalarField& q, const ScalarField& a,
                       const BoundaryData& f, const GridSpec& grid, double eps, double tol) {
  if (!(eps > 0)) throw PreconditionError("dn_linearized: eps must be positive");
  DNSignal p = solve_semilinear(g, q, a, scaled_data(f, eps), grid).dn;
  DNSignal m = solve_semilinear(g, q, a, scaled_data(f, -eps), grid).dn;
  DNSignal d = (p - m) * (1 / (2 * eps));
  DNSignal lin = solve_linear(g, q, f, grid).dn;
  double rel = relative_l2(d, lin);
  if (rel > tol)
    throw NumericalError("dn_linearized: differs from the linear solve by " +
                         std::to_string(rel) + " (relative)");
  return d;
}

FourthOrderDN dn_fourth_mixed(const WaveMetric& g, const ScalarField& q, const ScalarField& a,
                              const std::array<BoundaryData, 4>& f,
                              const std::array<double, 4>& eps, const GridSpec& grid,
                              bool refine) {
  for (double e : eps)
    if (!(e > 0)) throw PreconditionError("dn_fourth_mixed: eps must be positive");
  Stencil s = mixed_stencil(g, q, a, f, eps, grid);
  FourthOrderDN out;
  out.u4 = s.u4;
  out.signal = s.u4.norm();
  double prod = eps[0] * eps[1] * eps[2] * eps[3];
  double roundoff = 1e-13 * s.max_norm / prod;
  double refinement = 0;
  if (refine) {
    std::array<double, 4> half;
    for (int j = 0; j < 4; ++j) half[j] = eps[j] / 2;
    refinement = (mixed_stencil(g, q, a, f, half, grid).u4 - s.u4).norm();
  }
  out.noise_floor = refinement + roundoff;
  out.warning = out.noise_floor > 0.1 * out.signal;
  return out;
}

DNSignal cascade_fourth(const WaveMetric& g, const ScalarField& q, const ScalarField& a,
                        const std::array<BoundaryData, 4>& f, const GridSpec& grid,
                        double factor) {
  SolveOptions keep;
  keep.snapshot_stride = 1;
  std::array<WaveField, 4> v;
  for (int j = 0; j < 4; ++j) v[j] = solve_linear(g, q, f[j], grid, keep).field;
  SolveOptions opt;
  opt.source = [&](int n, double t, const WaveField& w, Vec& out) {
    for (int k = 0; k < out.size(); ++k) {
      if (!w.inside[k] || !a) continue;
      double p = v[0].snaps[n][k] * v[1].snaps[n][k] * v[2].snaps[n][k] * v[3].snaps[n][k];
      if (p != 0) out[k] = factor * a(st(t, w.node(k))) * p;
    }
  };
  return solve_linear(g, q, zero_data(), grid, opt).dn;
}

namespace {

// Boundary sample points of the grid domain (1+1: the two ends).
std::vector<Vec> boundary_points(const GridSpec& grid) {
  Layout L = make_layout(grid);
  std::vector<Vec> pts;
  for (const auto& face : L.faces)
    for (int k : face) pts.push_back(L.node(k));
  return pts;
}

GridSpec common_grid(const GridSpec& grid, const WaveMetric& a, const WaveMetric& b) {
  GridSpec g = grid;
  double c = std::max(max_speed(a, grid), max_speed(b, grid));
  g.dt = std::min(grid.dt, grid.cfl * grid.h / (c * std::sqrt(double(a.n))));
  return g;
}

}  // namespace

InvarianceReport diffeo_invariance_check(const WaveMetric& g, const ScalarField& a,
                                         const Diffeo& psi, const BoundaryData& f,
                                         const GridSpec& grid, bool check) {
  if (check) {
    // identity near the boundary and near t <= 0
    std::vector<Vec> probes;
    Layout L = make_layout(grid);
    for (const Vec& b : boundary_points(grid))
      for (int k = 0; k <= 64; ++k) {
        double t = -0.1 * grid.T + 1.1 * grid.T * k / 64;
        for (double off : {0.0, 1.0, 2.0}) {
          Vec x = b;
          if (g.n == 1) x[0] += (b[0] > grid.domain.lo[0] ? -off : off) * grid.h;
          probes.push_back(st(t, x));
        }
      }
    for (int k = 0; k < L.size(); ++k)
      if (L.inside[k] || L.dirichlet[k])
        for (double t : {-0.1 * grid.T, 0.0}) probes.push_back(st(t, L.node(k)));
    for (const Vec& y : probes)
      if ((psi.map(y) - y).norm() > 1e-12)
        throw PreconditionError(
            "diffeo_invariance_check: psi is not the identity near the boundary and t <= 0");
  }
  WaveMetric g2 = pullback(g, psi);
  ScalarField a2 = pullback(a, psi);
  GridSpec gr = common_grid(grid, g, g2);
  DNSignal d1 = solve_semilinear(g, {}, a, f, gr).dn;
  DNSignal d2 = solve_semilinear(g2, {}, a2, f, gr).dn;
  return {relative_l2(d2, d1), gr.h, gr.dt};
}

double conformal_a_exponent(int d) { return (d + 2) / 2.0 - 2.0 * (d - 2); }

InvarianceReport conformal_invariance_check(const WaveMetric& g, const ScalarField& a,
                                            const ScalarField& beta, const BoundaryData& f,
                                            const GridSpec& grid, bool check) {
  const int d = g.n + 1;
  if (check) {
    Layout L = make_layout(grid);
    double trace = 0, normal = 0;
    const double e = 1e-4;
    for (size_t fi = 0; fi < L.faces.size(); ++fi)
      for (size_t c = 0; c < L.faces[fi].size(); ++c) {
        Vec x = L.node(L.faces[fi][c]);
        const Vec& nr = L.normals[fi][c];
        for (int k = 0; k <= 64; ++k) {
          double t = grid.T * k / 64;
          trace = std::max(trace, std::abs(beta(st(t, x))));
          normal = std::max(normal, std::abs(beta(st(t, x + e * nr)) - beta(st(t, x - e * nr))) /
                                        (2 * e));
        }
      }
    if (trace > 1e-10)
      throw PreconditionError("conformal_invariance_check: beta does not vanish on the boundary");
    if (normal > 1e-10)
      throw PreconditionError(
          "conformal_invariance_check: the normal derivative of beta does not vanish");
    const double wexp = (d - 2) / 2.0;
    if (wexp != 0) {
      ScalarField ew = [beta, wexp](const Vec& y) { return std::exp(-wexp * beta(y)); };
      double worst = 0;
      for (int k = 0; k < L.size(); k += 7)
        if (L.inside[k])
          for (double t : {0.25 * grid.T, 0.5 * grid.T, 0.75 * grid.T})
            worst = std::max(worst, std::abs(box_fd(g, ew, st(t, L.node(k)), 1e-3)));
      if (worst > 1e-4)
        throw PreconditionError(
            "conformal_invariance_check: box_g exp(-(d-2) beta / 2) does not vanish");
    }
  }
  WaveMetric g2 = conformal(g, beta);
  const double k = conformal_a_exponent(d);
  ScalarField a2;
  if (a) a2 = [a, beta, k](const Vec& y) { return std::exp(k * beta(y)) * a(y); };
  GridSpec gr = common_grid(grid, g, g2);
  DNSignal d1 = solve_semilinear(g, {}, a, f, gr).dn;
  DNSignal d2 = solve_semilinear(g2, {}, a2, f, gr).dn;
  return {relative_l2(d2, d1), gr.h, gr.dt};
}

ScalarField spacetime_beta(double amp, const Vec& center, double r) {
  return [=](const Vec& y) { return -std::log(1 + amp * bump((y - center).squaredNorm() / (r * r))); };
}

double box_fd(const WaveMetric& g, const ScalarField& v, const Vec& y, double h) {
  const int d = static_cast<int>(y.size());
  auto flux = [&](const Vec& z) {
    Coef c = coef(g, z);
    Vec grad(d);
    for (int k = 0; k < d; ++k) {
      Vec zp = z, zm = z;
      zp[k] += h;
      zm[k] -= h;
      grad[k] = (v(zp) - v(zm)) / (2 * h);
    }
    return Vec(c.W * grad);
  };
  double div = 0;
  for (int j = 0; j < d; ++j) {
    Vec yp = y, ym = y;
    yp[j] += h;
    ym[j] -= h;
    div += (flux(yp)[j] - flux(ym)[j]) / (2 * h);
  }
  return div / coef(g, y).w;
}

ScalarField pulse_source(const ExteriorPulse& p) {
  return [p](const Vec& y) {
    double sx = (y[1] - p.x_center) / p.x_width, stt = (y[0] - p.t_center) / p.t_width;
    return p.amp * bump(sx * sx) * bump(stt * stt);
  };
}

ScatteringReport scattering_control(const ProductMetric& m, const ExteriorPulse& pulse,
                                    int passes, double h, double T) {
  if (m.spatial_dim() != 1) throw PreconditionError("scattering_control: 1+1 only");
  const Domain& in = m.inner();
  const Domain& out = m.outer();
  const double a = in.lo[0], b = in.hi[0];
  const double xl = pulse.x_center - pulse.x_width, xr = pulse.x_center + pulse.x_width;
  bool left = xr <= a && xl >= out.lo[0], right = xl >= b && xr <= out.hi[0];
  if (!left && !right)
    throw PreconditionError("scattering_control: pulse must be supported in M1 \\ M");
  if (pulse.t_center - pulse.t_width <= 0)
    throw PreconditionError("scattering_control: pulse must start after t = 0");

  ScatteringReport rep;
  Vec z0(2);
  z0 << pulse.t_center, pulse.x_center;
  Vec dir = Vec::Constant(1, left ? 1.0 : -1.0);
  rep.transit = classify_transit(m, z0, null_vector(m, z0, dir));
  if (rep.transit.cls != TransitClass::IO) return rep;
  rep.entry_face = left ? 0 : 1;
  rep.exit_face = 1 - rep.entry_face;

  WaveMetric g = wave_metric(m);
  GridSpec gM = make_grid(g, in, h, T);
  h = gM.h;
  // extended domain, wide enough that its own boundary stays out of sight
  double speed = max_speed(g, gM);
  int pad = static_cast<int>(std::ceil((speed * T + 0.5) / h));
  Domain ext = Domain::interval(a - pad * h, b + pad * h);
  GridSpec gE = gM;
  gE.domain = ext;
  gE.dt = std::min(gM.dt, gM.cfl * h / max_speed(g, gE));
  gM.dt = gE.dt;

  SolveOptions fo;
  fo.snapshot_stride = 1;
  fo.source = field_source(pulse_source(pulse));
  rep.free_field = solve_linear(g, {}, zero_data(), gE, fo);
  const auto& U = rep.free_field.field.snaps;
  const int steps = static_cast<int>(U.size()) - 1, N = cells(b - a, h);
  const int ia = pad, ib = pad + N;
  auto face_index = [&](int face) { return face == 0 ? ia : ib; };

  // free-field trace and normal derivative on both faces
  Mat u0(steps + 1, 2), dnu0(steps + 1, 2);
  for (int n = 0; n <= steps; ++n)
    for (int face = 0; face < 2; ++face) {
      int i = face_index(face);
      double sgn = face == 0 ? -1 : 1;
      Vec y = st(n * gE.dt, Vec::Constant(1, face == 0 ? a : b));
      double S = m.scale(y).v;
      u0(n, face) = U[n][i];
      dnu0(n, face) = sgn * (U[n][i + 1] - U[n][i - 1]) / (2 * h) / std::sqrt(S);
    }

  std::array<Vec, 2> data{Vec::Zero(steps + 1), Vec::Zero(steps + 1)};
  data[rep.entry_face] = u0.col(rep.entry_face);
  auto as_boundary = [&]() {
    auto d = data;
    double dt = gE.dt;
    return BoundaryData([d, dt](int face, double t, const Vec&) {
      int n = static_cast<int>(std::lround(t / dt));
      return n >= 0 && n < d[face].size() ? d[face][n] : 0.0;
    });
  };

  const int stride = 4;
  auto mismatch = [&](const WaveResult& r) {
    double num = 0, den = 0;
    for (size_t s = 0; s < r.field.snaps.size(); ++s) {
      int n = r.field.snap_step[s];
      for (int i = 0; i <= N; ++i) {
        double e = r.field.snaps[s][i] - U[n][ia + i];
        num += e * e;
        den += U[n][ia + i] * U[n][ia + i];
      }
    }
    return den > 0 ? std::sqrt(num / den) : std::sqrt(num);
  };

  SolveOptions mo;
  mo.snapshot_stride = stride;
  WaveResult r = solve_linear(g, {}, as_boundary(), gM, mo);
  {
    DNSignal f0 = r.dn;
    rep.f0 = f0;
  }
  rep.mismatch.push_back(mismatch(r));
  const int ex = rep.exit_face;
  Vec xb = Vec::Constant(1, ex == 0 ? a : b);
  for (int p = 0; p < passes; ++p) {
    // reflected Neumann trace, then the one-way relation d_t u = sqrt(alpha) d_nu u
    Vec refl = r.dn.faces[ex].neumann.col(0) - dnu0.col(ex);
    Vec trace = Vec::Zero(steps + 1);
    for (int n = 1; n <= steps; ++n) {
      double c0 = std::sqrt(m.alpha(st((n - 1) * gE.dt, xb)).v);
      double c1 = std::sqrt(m.alpha(st(n * gE.dt, xb)).v);
      trace[n] = trace[n - 1] + 0.5 * gE.dt * (c0 * refl[n - 1] + c1 * refl[n]);
    }
    Vec corr = -trace;
    data[ex] += corr;
    rep.corrections.push_back(corr);
    r = solve_linear(g, {}, as_boundary(), gM, mo);
    rep.mismatch.push_back(mismatch(r));
    rep.passes = p + 1;
  }
  return rep;
}

}  // namespace lab

#include "runner.hpp"

#include "lab/bdopt.hpp"
#include "lab/recon.hpp"
#include "lab/wavelab.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <random>
#include <sstream>

namespace labcli {

using namespace lab;

namespace {

json preset_json(const std::string& name, int n, json params = json::object()) {
  return {{"name", name}, {"n", n}, {"params", std::move(params)}};
}

json coeff(double c0, double c1, double k) { return {{"c0", c0}, {"c1", c1}, {"k", k}}; }

json pulse(int face, double t0, double width, double amp) {
  return {{"face", face}, {"t0", t0}, {"width", width}, {"amp", amp}};
}

json two_sided() { return json::array({pulse(0, 0.3, 0.25, 1), pulse(1, 0.5, 0.25, 0.5)}); }

json four_pulses() {
  return json::array({pulse(0, 0.3, 0.2, 1), pulse(0, 0.4, 0.25, 1), pulse(1, 0.35, 0.2, 1),
                      pulse(1, 0.3, 0.25, 1)});
}

json wave_grid_json(double h, double T, double cfl) {
  return {{"h", h}, {"T", T}, {"cfl", cfl}, {"dt", 0.0}};
}

json base(const std::string& exp, json preset, json params, json grid = nullptr) {
  json j = {{"experiment", exp}, {"preset", std::move(preset)}, {"params", std::move(params)},
            {"out", "out/" + exp},  {"seed", 0}};
  if (!grid.is_null()) j["grid"] = std::move(grid);
  return j;
}

const std::map<std::string, json>& defaults() {
  static const std::map<std::string, json> d = [] {
    std::map<std::string, json> m;
    m["geodesic"] = base("geodesic", preset_json("static_profile", 1),
                         {{"p0", {0.0, 0.2}},
                          {"direction", {1.0}},
                          {"mode", "reflect"},
                          {"s_max", 1.5},
                          {"tol", 1e-11},
                          {"max_null_drift", 1e-8}});
    m["transit"] = base("transit", preset_json("minkowski", 1),
                        {{"z0", {0.0, -0.1}}, {"zeta0", {1.0, 1.0}}, {"expect", "IO"}});
    m["chart"] = base("chart", preset_json("static_profile", 1),
                      {{"face", 0},
                       {"u_lo", {0.4}},
                       {"u_hi", {0.6}},
                       {"depth", 0.5},
                       {"samples", 5},
                       {"tol", 1e-8}});
    m["riccati"] = base("riccati", preset_json("minkowski", 3, {{"ball", 1}, {"radius", 3}, {"T", 4}}),
                        {{"cases", {"flat", "oscillator"}},
                         {"p0", {0.0, 0.0, 0.0, 0.0}},
                         {"direction", {1.0, 0.0, 0.0}},
                         {"tau_lo", 0.0},
                         {"tau_hi", 2.0},
                         {"h0", {0.0, 1.0}},
                         {"samples", 41},
                         {"oscillator", {{"k", 1.5}, {"tau_lo", -1.0}, {"tau_hi", 1.0}}},
                         {"drift_tol", 1e-8},
                         {"closed_form_tol", 1e-10},
                         {"oscillator_tol", 1e-9}});
    m["beam-residual"] = base("beam-residual", preset_json("minkowski", 3, {{"ball", 1}}),
                              {{"order", 4},
                               {"p0", {0.0, 0.0, 0.0, 0.0}},
                               {"direction", {1.0, 0.0, 0.0}},
                               {"tau_lo", -0.1},
                               {"tau_hi", 0.4},
                               {"chart_delta", 4.0},
                               {"h0", {0.0, 1.0}},
                               {"rhos", {25.0, 50.0, 100.0, 200.0}},
                               {"residual_tau", {0.0, 0.25}},
                               {"slope_max", -1.2}});
    m["reflect-beam"] = base("reflect-beam",
                             preset_json("minkowski", 3, {{"ball", 1}, {"radius", 3}, {"T", 4}}),
                             {{"order", 4},
                              {"p0", {0.0, 1.8, 1.4, 0.45}},
                              {"direction", {1.0, 0.3, 0.2}},
                              {"chart_delta", 1.5},
                              {"tau_margin", 3.0},
                              {"h0", {0.0, 1.0}},
                              {"rhos", {25.0, 50.0, 100.0, 200.0}},
                              {"slope_margin", 0.3}});
    m["recover-boundary"] = base("recover-boundary", preset_json("static_profile", 1),
                                 {{"faces", {0, 1}},
                                  {"t", 0.0},
                                  {"tangential", 0.5},
                                  {"fan", 10},
                                  {"spread", 0.4},
                                  {"normal_fan", 10},
                                  {"march_eps", 0.01},
                                  {"noise", 0.0},
                                  {"tol_metric", 1e-8},
                                  {"tol_normal", 1e-6}});
    m["dn"] = base("dn", preset_json("minkowski", 1),
                   {{"pulses", two_sided()}, {"eps", 1.0}, {"a", coeff(0, 0, 0)}, {"min_norm", 0.0}},
                   wave_grid_json(0.01, 1.5, 0.5));
    m["invariance-diffeo"] =
        base("invariance-diffeo", preset_json("static_profile", 1),
             {{"levels", 3},
              {"bump", {{"center", {0.7, 0.5}}, {"radius", 0.3}, {"shift", {0.02, 0.04}}}},
              {"a", coeff(1, 0.5, 3)},
              {"pulses", two_sided()},
              {"tol", 0.02},
              {"min_order", 0.8},
              {"negative", {{"amp", 0.1}, {"t_on", 0.2}, {"rise", 0.5}}},
              {"min_negative", 0.2}},
             wave_grid_json(1.0 / 800, 1.5, 0.5));
    m["invariance-conformal"] =
        base("invariance-conformal", preset_json("static_profile", 1),
             {{"levels", 3},
              {"beta", {{"amp", 0.3}, {"center", {0.8, 0.5}}, {"radius", 0.35}}},
              {"a", coeff(1, 0.5, 3)},
              {"pulses", two_sided()},
              {"tol", 0.02},
              {"min_order", 0.8},
              {"exact_tol", 1e-10},
              {"negative", {{"amp", 0.3}}},
              {"min_negative", 0.2}},
             wave_grid_json(1.0 / 800, 1.5, 0.5));
    m["fourwave"] = base("fourwave", preset_json("static_profile", 1),
                         {{"a", coeff(1, 0.5, 3)},
                          {"pulses", four_pulses()},
                          {"eps", {0.05, 0.05, 0.05, 0.05}},
                          {"tol_cascade", 1e-2},
                          {"factor_expected", -24.0},
                          {"factor_tol", 0.5},
                          {"assert_nonzero_signal", true},
                          {"quartic_pulses", two_sided()},
                          {"quartic_eps", {0.05, 0.1, 0.2}},
                          {"quartic_expected", 4.0},
                          {"quartic_tol", 0.2}},
                         wave_grid_json(0.01, 1.5, 0.5));
    m["control"] = base("control", preset_json("minkowski", 1),
                        {{"passes", 1},
                         {"pulse",
                          {{"x_center", -0.1},
                           {"t_center", 0.15},
                           {"x_width", 0.08},
                           {"t_width", 0.1},
                           {"amp", 1.0}}},
                         {"min_uncontrolled", 0.3},
                         {"tol_final", 0.01}},
                        {{"h", 1.0 / 400}, {"T", 2.0}});
    m["stationary-phase"] =
        base("stationary-phase", preset_json("minkowski", 3, {{"ball", 1}, {"T", 3}}),
             {{"r0", 1.0},
              {"sigma", 0.6},
              {"sign", 1},
              {"factor", 1.0},
              {"rho_max", 400.0},
              {"tol", 0.01},
              {"max_residual", 0.05},
              {"beta", {{"amp", 0.3}, {"center", {1.6, 0.1, -0.05, 0.05}}, {"width2", 0.16}}},
              {"a", {{"c0", 1.0}, {"grad", {0.3, 0.2, 0.0}}}},
              {"with_potential", true},
              {"cells_per_width", 8.0},
              {"decay", 18.0}});
    m["ray-q"] = base("ray-q", preset_json("minkowski", 1),
                      {{"p0", {0.1, 0.1}},
                       {"v0", {1.0, 1.0}},
                       {"s0", {0.3, 0.5, 0.75}},
                       {"pointwise_s0", {0.35, 0.45, 0.5, 0.6}},
                       {"q", {{"center", 0.6}, {"width", 0.1}, {"amp", 1.0}, {"tilt", 0.2}}},
                       {"ds", 1e-3},
                       {"panels", 4000},
                       {"tol_quadrature", 1e-8},
                       {"tol_pointwise", 1e-3}});
    m["observation-set"] = base(
        "observation-set", preset_json("minkowski", 1),
        {{"q0", {{0.5, 0.3}, {0.5, 0.4}, {0.5, 0.5}, {0.5, 0.6}, {0.5, 0.7}}},
         {"a", coeff(1, 0, 0)},
         {"width", 0.25},
         {"eps", 0.05},
         {"threshold", 5.0},
         {"noise_window", 10},
         {"margin", 0.3},
         {"max_cell_error", 2.0},
         {"min_positions", 3}},
        {{"h", 1.0 / 400}, {"cfl", 0.9}});
    return m;
  }();
  return d;
}

[[noreturn]] void config_fail(const std::string& path, const std::string& msg) {
  throw ConfigError(path + ": " + msg);
}

std::string join(const std::string& path, const std::string& key) {
  return path.empty() ? key : path + "." + key;
}

bool same_kind(const json& a, const json& b) {
  if (a.is_number() && b.is_number()) return true;
  return a.type() == b.type();
}

const char* kind_name(const json& j) {
  if (j.is_number()) return "number";
  if (j.is_boolean()) return "boolean";
  if (j.is_string()) return "string";
  if (j.is_array()) return "array";
  if (j.is_object()) return "object";
  return "null";
}

// Overlay user onto base, rejecting keys and types base does not know.
void merge_strict(json& base, const json& user, const std::string& path) {
  if (!user.is_object()) config_fail(path, std::string("expected object, got ") + kind_name(user));
  for (const auto& [k, v] : user.items()) {
    const std::string p = join(path, k);
    if (!base.contains(k)) throw ConfigError("unknown key \"" + k + "\" at " + p);
    json& b = base[k];
    if (!same_kind(b, v))
      config_fail(p, std::string("expected ") + kind_name(b) + ", got " + kind_name(v));
    if (b.is_object()) {
      merge_strict(b, v, p);
    } else if (b.is_array() && !b.empty()) {
      json proto = b[0];
      json out = json::array();
      for (size_t i = 0; i < v.size(); ++i) {
        const std::string pi = p + "[" + std::to_string(i) + "]";
        if (!same_kind(proto, v[i]))
          config_fail(pi, std::string("expected ") + kind_name(proto) + ", got " + kind_name(v[i]));
        if (proto.is_object()) {
          json e = proto;
          merge_strict(e, v[i], pi);
          out.push_back(e);
        } else {
          out.push_back(v[i]);
        }
      }
      b = out;
    } else {
      b = v;
    }
  }
}

// Typed access to one config object with field paths in the errors.
class Fields {
 public:
  Fields(const json& j, std::string path) : j_(j), path_(std::move(path)) {}
  const json& raw(const std::string& k) const { return j_.at(k); }
  std::string path(const std::string& k) const { return join(path_, k); }
  [[noreturn]] void fail(const std::string& k, const std::string& msg) const {
    config_fail(path(k), msg);
  }
  double num(const std::string& k) const {
    double v = j_.at(k).get<double>();
    if (!std::isfinite(v)) fail(k, "must be finite");
    return v;
  }
  double pos(const std::string& k) const {
    double v = num(k);
    if (!(v > 0)) fail(k, "must be positive");
    return v;
  }
  double nonneg(const std::string& k) const {
    double v = num(k);
    if (v < 0) fail(k, "must be non-negative");
    return v;
  }
  double range(const std::string& k, double lo, double hi) const {
    double v = num(k);
    if (v < lo || v > hi) fail(k, "must lie in [" + fmt17(lo) + ", " + fmt17(hi) + "]");
    return v;
  }
  int integer(const std::string& k, int lo, int hi) const {
    double v = num(k);
    if (v != std::floor(v) || v < lo || v > hi)
      fail(k, "must be an integer in [" + std::to_string(lo) + ", " + std::to_string(hi) + "]");
    return static_cast<int>(v);
  }
  bool flag(const std::string& k) const { return j_.at(k).get<bool>(); }
  std::string str(const std::string& k) const { return j_.at(k).get<std::string>(); }
  std::vector<double> list(const std::string& k, bool positive = false, size_t min_size = 1) const {
    std::vector<double> out;
    for (const auto& e : j_.at(k)) {
      double v = e.get<double>();
      if (!std::isfinite(v) || (positive && !(v > 0))) fail(k, positive ? "entries must be positive" : "entries must be finite");
      out.push_back(v);
    }
    if (out.size() < min_size) fail(k, "needs at least " + std::to_string(min_size) + " entries");
    return out;
  }
  Vec vec(const std::string& k, int size) const {
    auto v = list(k, false, 0);
    if (static_cast<int>(v.size()) != size) fail(k, "expected " + std::to_string(size) + " entries");
    return Eigen::Map<const Vec>(v.data(), size);
  }
  cplx complex(const std::string& k) const {
    Vec v = vec(k, 2);
    return {v[0], v[1]};
  }
  Fields sub(const std::string& k) const { return Fields(j_.at(k), path(k)); }

 private:
  const json& j_;
  std::string path_;
};

// ---------------------------------------------------------------- output

struct Csv {
  std::string name;
  std::ostringstream s;
  Csv(std::string n, const std::vector<std::string>& cols) : name(std::move(n)) { row(cols); }
  void row(const std::vector<std::string>& cells) {
    for (size_t i = 0; i < cells.size(); ++i) s << (i ? "," : "") << cells[i];
    s << "\n";
  }
};

std::string itos(long v) { return std::to_string(v); }

json cjson(cplx z) { return json::array({z.real(), z.imag()}); }

struct Run {
  Run(const ExperimentConfig& cfg, ProductMetric pm) : c(cfg), m(std::move(pm)) {}
  const ExperimentConfig& c;
  ProductMetric m;
  json results = json::object();
  json checks = json::array();
  json tolerance = json::object();
  json ladder;
  json extrapolated;
  std::vector<Csv> csvs;
  bool pass = true;

  Fields params() const { return Fields(c.params, "params"); }
  Fields grid() const { return Fields(c.grid, "grid"); }

  void check(const std::string& name, double value, const std::string& rel, double bound) {
    bool ok = std::isfinite(value) && (rel == "<=" ? value <= bound : value >= bound);
    checks.push_back({{"name", name}, {"value", value}, {"relation", rel}, {"bound", bound}, {"pass", ok}});
    tolerance[name] = bound;
    pass = pass && ok;
  }
  void check_near(const std::string& name, double value, double target, double tol) {
    bool ok = std::isfinite(value) && std::abs(value - target) <= tol;
    checks.push_back({{"name", name},
                      {"value", value},
                      {"relation", "within"},
                      {"target", target},
                      {"bound", tol},
                      {"pass", ok}});
    tolerance[name] = tol;
    pass = pass && ok;
  }
  void check_flag(const std::string& name, bool ok) {
    checks.push_back({{"name", name}, {"value", ok}, {"relation", "true"}, {"pass", ok}});
    pass = pass && ok;
  }
  Csv& csv(const std::string& name, const std::vector<std::string>& cols) {
    csvs.emplace_back(name, cols);
    return csvs.back();
  }
};

ScalarField coefficient(const Fields& f) {
  double c0 = f.num("c0"), c1 = f.num("c1"), k = f.num("k");
  return [c0, c1, k](const Vec& y) { return c0 + c1 * std::sin(k * y[1]); };
}

BoundaryData pulses(const Fields& p, const std::string& key, int faces) {
  std::vector<BoundaryData> parts;
  const json& arr = p.raw(key);
  for (size_t i = 0; i < arr.size(); ++i) {
    Fields e(arr[i], p.path(key) + "[" + std::to_string(i) + "]");
    parts.push_back(face_pulse(e.integer("face", 0, faces - 1), e.num("t0"), e.pos("width"),
                               e.num("amp")));
  }
  if (parts.empty()) return zero_data();
  return sum(parts, std::vector<double>(parts.size(), 1.0));
}

int face_count(const ProductMetric& m) { return 2 * m.spatial_dim(); }

GridSpec wave_grid(const Run& r, const WaveMetric& g, double h_override = 0) {
  Fields f = r.grid();
  double h = h_override > 0 ? h_override : f.pos("h");
  double T = f.pos("T"), cfl = f.num("cfl"), dt = f.nonneg("dt");
  if (!(cfl > 0 && cfl <= 0.9)) f.fail("cfl", "must lie in (0, 0.9]");
  GridSpec gs = make_grid(g, r.m.inner(), h, T, cfl);
  if (dt > 0) {
    double c = max_speed(g, gs);
    double lim = cfl * gs.h / (c * std::sqrt(double(g.n)));
    if (dt > lim * (1 + 1e-12))
      f.fail("dt", "CFL violated, dt = " + fmt17(dt) + " exceeds the bound cfl*h/(c_max*sqrt(n)) = " +
                       fmt17(lim) + " with c_max = " + fmt17(c) + ", h = " + fmt17(gs.h));
    gs.dt = dt;
  }
  return gs;
}

void write_dn(Csv& out, const DNSignal& s) {
  for (size_t k = 0; k < s.t.size(); ++k)
    for (size_t f = 0; f < s.faces.size(); ++f)
      for (Eigen::Index j = 0; j < s.faces[f].f.cols(); ++j)
        out.row({fmt17(s.t[k]), itos(f), itos(j), fmt17(s.faces[f].f(k, j)),
                 fmt17(s.faces[f].neumann(k, j))});
}

Vec spatial_dir(const Run& r, const Fields& p, const std::string& k) {
  return p.vec(k, r.m.spatial_dim());
}

// ---------------------------------------------------------------- experiments

void run_geodesic(Run& r) {
  Fields p = r.params();
  int d = r.m.spatial_dim() + 1;
  Vec p0 = p.vec("p0", d);
  Vec v0 = null_vector(r.m, p0, spatial_dir(r, p, "direction"));
  std::string mode = p.str("mode");
  if (mode != "reflect" && mode != "transmit") p.fail("mode", "must be \"reflect\" or \"transmit\"");
  StepControl ctl;
  ctl.s_max = p.pos("s_max");
  ctl.tol = p.pos("tol");
  auto g = integrate_null_geodesic(r.m, p0, v0, mode == "reflect" ? GeoMode::Reflect : GeoMode::Transmit,
                                   ctl);
  std::vector<std::string> cols{"segment", "s"};
  for (int i = 0; i < d; ++i) cols.push_back("y" + itos(i));
  for (int i = 0; i < d; ++i) cols.push_back("v" + itos(i));
  Csv& path = r.csv("geodesic.csv", cols);
  for (size_t sgi = 0; sgi < g.segments.size(); ++sgi)
    for (const auto& s : g.segments[sgi]) {
      std::vector<std::string> row{itos(sgi), fmt17(s.s)};
      for (int i = 0; i < d; ++i) row.push_back(fmt17(s.y[i]));
      for (int i = 0; i < d; ++i) row.push_back(fmt17(s.v[i]));
      path.row(row);
    }
  static const char* kinds[] = {"reflect", "enter", "exit", "leave_outer", "horizon", "tangency"};
  json events = json::array();
  for (const auto& e : g.events)
    events.push_back({{"kind", kinds[static_cast<int>(e.kind)]},
                      {"s", e.s},
                      {"y", std::vector<double>(e.y.data(), e.y.data() + e.y.size())}});
  const auto& last = g.last();
  r.results = {{"events", events},
               {"renormalizations", g.renormalizations},
               {"max_null_drift", g.max_null_drift},
               {"s_end", last.s},
               {"y_end", std::vector<double>(last.y.data(), last.y.data() + last.y.size())}};
  r.check("max_null_drift", g.max_null_drift, "<=", p.pos("max_null_drift"));
}

void run_transit(Run& r) {
  Fields p = r.params();
  int d = r.m.spatial_dim() + 1;
  auto t = classify_transit(r.m, p.vec("z0", d), p.vec("zeta0", d));
  auto opt = [](const std::optional<double>& x) { return x ? json(*x) : json(nullptr); };
  r.results = {{"class", to_string(t.cls)},
               {"t0", opt(t.t0)},
               {"t1", opt(t.t1)},
               {"t2", opt(t.t2)},
               {"tangency", t.tangency},
               {"failure", t.failure}};
  Csv& out = r.csv("transit.csv", {"class", "t0", "t1", "t2"});
  auto cell = [](const std::optional<double>& x) { return x ? fmt17(*x) : std::string("nan"); };
  out.row({to_string(t.cls), cell(t.t0), cell(t.t1), cell(t.t2)});
  std::string expect = p.str("expect");
  if (!expect.empty()) r.check_flag("class_is_" + expect, expect == to_string(t.cls));
  r.check_flag("integration_completed", t.failure.empty());
}

void run_chart(Run& r) {
  Fields p = r.params();
  const int nu = r.m.spatial_dim();  // boundary parameters u = (t, tangential...)
  BoundaryPatch patch{p.integer("face", 0, face_count(r.m) - 1), p.vec("u_lo", nu), p.vec("u_hi", nu)};
  double depth = p.pos("depth");
  int ns = p.integer("samples", 2, 50);
  BoundaryNormalChart ch(r.m, patch, depth);
  std::vector<std::string> cols;
  for (int i = 0; i < nu; ++i) cols.push_back("u" + itos(i));
  cols.insert(cols.end(), {"xn", "g_nn_error", "g_an_error"});
  Csv& out = r.csv("chart.csv", cols);
  double worst_nn = 0, worst_an = 0;
  int total = 1;
  for (int i = 0; i < nu; ++i) total *= ns;
  for (int idx = 0; idx < total; ++idx) {
    Vec u(nu);
    for (int i = 0, rest = idx; i < nu; ++i, rest /= ns)
      u[i] = patch.u_lo[i] + (patch.u_hi[i] - patch.u_lo[i]) * (rest % ns) / (ns - 1);
    for (int k = 0; k < ns; ++k) {
      double xn = depth * k / (ns - 1);
      auto e = ch.eval(u, xn);
      double enn = std::abs(e.g_pull(nu, nu) - 1), ean = e.g_pull.col(nu).head(nu).cwiseAbs().maxCoeff();
      worst_nn = std::max(worst_nn, enn);
      worst_an = std::max(worst_an, ean);
      std::vector<std::string> row;
      for (int i = 0; i < nu; ++i) row.push_back(fmt17(u[i]));
      row.insert(row.end(), {fmt17(xn), fmt17(enn), fmt17(ean)});
      out.row(row);
    }
  }
  r.results = {{"worst_g_nn_error", worst_nn}, {"worst_g_an_error", worst_an}};
  double tol = p.pos("tol");
  r.check("g_nn_error", worst_nn, "<=", tol);
  r.check("g_an_error", worst_an, "<=", tol);
}

void run_riccati(Run& r) {
  Fields p = r.params();
  int ns = p.integer("samples", 2, 100000);
  cplx h0 = p.complex("h0");
  Csv& out = r.csv("riccati.csv", {"case", "tau", "conserved", "relative_drift", "closed_form_error"});
  json res = json::object();
  for (size_t ci = 0; ci < p.raw("cases").size(); ++ci) {
    std::string cs = p.raw("cases")[ci].get<std::string>();
    double drift = 0, closed = 0;
    bool has_closed = true;
    if (cs == "flat") {
      double lo = p.num("tau_lo"), hi = p.num("tau_hi");
      if (!(lo <= 0 && hi > 0)) p.fail("tau_lo", "need tau_lo <= 0 < tau_hi");
      int d = r.m.spatial_dim() + 1;
      Vec p0 = p.vec("p0", d);
      auto ch = std::make_shared<FermiChart>(r.m, p0, null_vector(r.m, p0, spatial_dir(r, p, "direction")),
                                             lo, hi);
      const int nt = ch->nt();
      CMat H0 = h0 * CMat::Identity(nt, nt), C = riccati_C(nt);
      RiccatiSolution ric([ch](double t) { return ch->D(t); }, C, CMat::Identity(nt, nt), H0, 0.0, lo, hi);
      has_closed = r.m.flat;
      for (int k = 0; k < ns; ++k) {
        double tau = lo + (hi - lo) * k / (ns - 1);
        double rel = std::abs(ric.conserved(tau) - ric.c0()) / std::abs(ric.c0());
        // D = 0: Z = H0, Y = I + tau C H0
        CMat Y = CMat::Identity(nt, nt) + tau * C * H0;
        double e = has_closed ? std::max((ric.Y(tau) - Y).norm(), (ric.Z(tau) - H0).norm()) : NAN;
        drift = std::max(drift, rel);
        if (has_closed) closed = std::max(closed, e);
        out.row({cs, fmt17(tau), fmt17(ric.conserved(tau)), fmt17(rel), fmt17(e)});
      }
      if (has_closed) r.check("flat_closed_form", closed, "<=", p.pos("closed_form_tol"));
    } else if (cs == "oscillator") {
      Fields o = p.sub("oscillator");
      double k = o.pos("k"), w = std::sqrt(2.0) * k, lo = o.num("tau_lo"), hi = o.num("tau_hi");
      if (!(lo <= 0 && hi > 0)) o.fail("tau_lo", "need tau_lo <= 0 < tau_hi");
      const cplx I1(0, 1);
      CMat H0(2, 2);
      H0 << 0.3 + 1.0 * I1, 0.1 + 0.2 * I1, 0.1 + 0.2 * I1, -0.2 + 0.8 * I1;
      RiccatiSolution ric([k](double) { return (k * k * Mat::Identity(2, 2)).eval(); }, riccati_C(2),
                          CMat::Identity(2, 2), H0, 0.0, lo, hi);
      for (int s = 0; s < ns; ++s) {
        double tau = lo + (hi - lo) * s / (ns - 1);
        // Y1' = 0, Z1' = -k^2 Y1; Y2'' = -2 k^2 Y2
        CMat Y(2, 2), Z(2, 2);
        for (int c = 0; c < 2; ++c) {
          cplx y1 = c == 0 ? 1 : 0, y2 = c == 1 ? 1 : 0, z1 = H0(0, c), z2 = H0(1, c);
          Y(0, c) = y1;
          Z(0, c) = z1 - k * k * tau * y1;
          Y(1, c) = std::cos(w * tau) * y2 + 2 / w * std::sin(w * tau) * z2;
          Z(1, c) = std::cos(w * tau) * z2 - w / 2 * std::sin(w * tau) * y2;
        }
        double rel = std::abs(ric.conserved(tau) - ric.c0()) / std::abs(ric.c0());
        double e = std::max((ric.Y(tau) - Y).norm(), (ric.Z(tau) - Z).norm());
        drift = std::max(drift, rel);
        closed = std::max(closed, e);
        out.row({cs, fmt17(tau), fmt17(ric.conserved(tau)), fmt17(rel), fmt17(e)});
      }
      r.check("oscillator_closed_form", closed, "<=", p.pos("oscillator_tol"));
    } else {
      config_fail("params.cases[" + std::to_string(ci) + "]", "unknown case \"" + cs + "\"");
    }
    r.check(cs + "_conservation_drift", drift, "<=", p.pos("drift_tol"));
    res[cs] = {{"max_relative_drift", drift}, {"closed_form_error", has_closed ? json(closed) : json(nullptr)}};
  }
  r.results = res;
}

struct LaunchedBeam {
  std::shared_ptr<FermiChart> chart;
  std::shared_ptr<GaussianBeam> beam;
};

LaunchedBeam launch(const Run& r, const Fields& p, int order, double lo, double hi) {
  int d = r.m.spatial_dim() + 1;
  Vec p0 = p.vec("p0", d);
  Vec v0 = null_vector(r.m, p0, spatial_dir(r, p, "direction"));
  auto ch = std::make_shared<FermiChart>(r.m, p0, v0, lo, hi, p.pos("chart_delta"));
  const int nt = ch->nt();
  auto ric = std::make_shared<RiccatiSolution>([ch](double t) { return ch->D(t); }, riccati_C(nt),
                                               CMat::Identity(nt, nt),
                                               p.complex("h0") * CMat::Identity(nt, nt), 0.0, lo, hi);
  BeamOptions o;
  o.order = order;
  o.delta = ch->delta();
  o.a1 = order >= 4 ? A1Mode::Full : A1Mode::QDifference;
  return {ch, std::make_shared<GaussianBeam>(ch, ric, o)};
}

void ladder_out(Run& r, const std::string& file, const std::string& col, const std::vector<double>& rhos,
                const std::vector<double>& vals, double slope) {
  Csv& out = r.csv(file, {"rho", col});
  for (size_t i = 0; i < rhos.size(); ++i) out.row({fmt17(rhos[i]), fmt17(vals[i])});
  r.ladder = {{"rho", rhos}, {col, vals}};
  r.extrapolated = slope;
  r.results["loglog_slope"] = slope;
}

void run_beam_residual(Run& r) {
  Fields p = r.params();
  int order = p.integer("order", 2, 6);
  double lo = p.num("tau_lo"), hi = p.num("tau_hi");
  if (!(lo <= 0 && hi > 0)) p.fail("tau_lo", "need tau_lo <= 0 < tau_hi");
  auto lb = launch(r, p, order, lo, hi);
  ResidualGrid g;
  Vec rt = p.vec("residual_tau", 2);
  g.tau_lo = rt[0];
  g.tau_hi = rt[1];
  if (!(lo <= g.tau_lo && g.tau_lo < g.tau_hi && g.tau_hi <= hi))
    p.fail("residual_tau", "must be an increasing pair inside [tau_lo, tau_hi]");
  auto rhos = p.list("rhos", true, 2);
  std::vector<double> res;
  for (double rho : rhos) res.push_back(beam_residual_norm(*lb.beam, {}, rho, g));
  double s = loglog_slope(rhos, res);
  ladder_out(r, "residual.csv", "residual", rhos, res, s);
  r.check("loglog_slope", s, "<=", p.num("slope_max"));
}

void run_reflect_beam(Run& r) {
  Fields p = r.params();
  int order = p.integer("order", 2, 6);
  double margin = p.pos("tau_margin");
  int d = r.m.spatial_dim() + 1;
  Vec p0 = p.vec("p0", d);
  Vec v0 = null_vector(r.m, p0, spatial_dir(r, p, "direction"));
  auto geo = integrate_null_geodesic(r.m, p0, v0, GeoMode::Reflect);
  if (geo.events.empty() || geo.events[0].kind != EventKind::Reflect)
    p.fail("direction", "the ray does not reach the boundary");
  const GeoEvent ev = geo.events[0];
  auto lb = launch(r, p, order, -margin, ev.s + margin);
  auto rb = reflect_beam(*lb.beam, ev, margin, -margin);
  auto rhos = p.list("rhos", true, 2);
  std::vector<double> tr;
  for (double rho : rhos) tr.push_back(boundary_trace_norm(*lb.beam, rb.beam, rb.boundary, rho));
  double s = loglog_slope(rhos, tr);
  ladder_out(r, "trace.csv", "boundary_l2", rhos, tr, s);
  const int amp_order = order - 2;
  double bound = -(amp_order + 1) / 2.0 - 0.75 + p.nonneg("slope_margin");
  r.results["reflection_s"] = ev.s;
  r.results["amplitude_order"] = amp_order;
  r.check("loglog_slope", s, "<=", bound);
}

void run_recover_boundary(Run& r) {
  Fields p = r.params();
  const int n = r.m.spatial_dim();
  std::mt19937_64 rng(r.c.seed);
  std::normal_distribution<double> nd;
  double noise = p.nonneg("noise");
  Vec xp = Vec::Constant(n, p.num("tangential"));
  xp[0] = p.num("t");
  int fan = p.integer("fan", 2, 1000), nfan = p.integer("normal_fan", 2, 1000);
  double spread = p.pos("spread"), eps = p.pos("march_eps");
  Csv& out = r.csv("recovery.csv", {"face", "quantity", "i", "j", "truth", "recovered", "error"});
  double worst_g = 0, worst_dn = 0;
  json faces = json::array();
  for (size_t fi = 0; fi < p.raw("faces").size(); ++fi) {
    double fv = p.raw("faces")[fi].get<double>();
    if (fv != std::floor(fv) || fv < 0 || fv >= face_count(r.m))
      config_fail("params.faces[" + std::to_string(fi) + "]", "not a face of the preset");
    int face = static_cast<int>(fv);
    LayeredBoundaryMetric truth(r.m, face);
    Mat G0 = Mat::Identity(n, n);
    G0(0, 0) = -1;
    std::vector<MetricSample> ms;
    for (const auto& bc : covector_fan(G0, xp, fan, spread)) {
      double xi = eikonal_jet_march(truth, bc, eps, 2).xi_n;
      if (noise > 0) xi *= 1 + noise * nd(rng);
      ms.push_back({bc, xi});
    }
    MetricFit g = recover_boundary_metric(ms);
    auto known = std::make_shared<ConstantBoundaryMetric>(g.ginv);
    std::vector<NormalSample> ns;
    for (const auto& bc : covector_fan(g.ginv, xp, nfan)) ns.push_back(normal_sample(truth, bc));
    NormalJetFit fit = recover_normal_jet(ns, known);
    Mat tg = truth.ginv(xp, 0), tdn = truth.dn_ginv(xp, 0);
    double eg = (g.ginv - tg).cwiseAbs().maxCoeff(), edn = (fit.dn_ginv - tdn).cwiseAbs().maxCoeff();
    worst_g = std::max(worst_g, eg);
    worst_dn = std::max(worst_dn, edn);
    for (int i = 0; i < n; ++i)
      for (int j = 0; j < n; ++j) {
        out.row({itos(face), "ginv", itos(i), itos(j), fmt17(tg(i, j)), fmt17(g.ginv(i, j)),
                 fmt17(g.ginv(i, j) - tg(i, j))});
        out.row({itos(face), "dn_ginv", itos(i), itos(j), fmt17(tdn(i, j)), fmt17(fit.dn_ginv(i, j)),
                 fmt17(fit.dn_ginv(i, j) - tdn(i, j))});
      }
    faces.push_back({{"face", face},
                     {"metric_error", eg},
                     {"normal_error", edn},
                     {"metric_condition", g.condition},
                     {"normal_condition", fit.condition},
                     {"normal_truth_size", tdn.cwiseAbs().maxCoeff()}});
  }
  r.results = {{"faces", faces}};
  r.check("metric_error", worst_g, "<=", p.pos("tol_metric"));
  r.check("normal_jet_error", worst_dn, "<=", p.pos("tol_normal"));
}

void run_dn(Run& r) {
  Fields p = r.params();
  WaveMetric g = wave_metric(r.m);
  GridSpec gs = wave_grid(r, g);
  BoundaryData f = pulses(p, "pulses", face_count(r.m));
  Fields a = p.sub("a");
  double eps = p.num("eps");
  bool linear = a.num("c0") == 0 && a.num("c1") == 0;
  DNSignal dn = linear ? solve_linear(g, {}, sum({f}, {eps}), gs).dn
                       : solve_semilinear(g, {}, coefficient(a), sum({f}, {eps}), gs).dn;
  Csv& out = r.csv("dn.csv", {"t", "face", "node", "f", "neumann"});
  write_dn(out, dn);
  r.results = {{"h", gs.h}, {"dt", gs.dt}, {"steps", dn.t.size()}, {"neumann_norm", dn.norm()},
               {"linear", linear}};
  r.check("neumann_norm", dn.norm(), ">=", p.nonneg("min_norm"));
}

// Shared ladder logic of the two invariance experiments.
template <class Check>
void invariance_ladder(Run& r, const Fields& p, Check check, double exact_tol) {
  WaveMetric g = wave_metric(r.m);
  if (r.grid().num("dt") != 0) r.grid().fail("dt", "a fixed dt is not allowed with a refinement ladder");
  int levels = p.integer("levels", 2, 6);
  double h = r.grid().pos("h");
  std::vector<double> hs, disc, orders;
  Csv& out = r.csv("ladder.csv", {"h", "dt", "discrepancy", "order"});
  for (int k = 0; k < levels; ++k) {
    GridSpec gs = wave_grid(r, g, h * std::pow(2.0, levels - 1 - k));
    auto rep = check(g, gs);
    hs.push_back(gs.h);
    disc.push_back(rep.discrepancy);
    double ord = k ? std::log2(disc[k - 1] / disc[k]) : NAN;
    if (k) orders.push_back(ord);
    out.row({fmt17(gs.h), fmt17(gs.dt), fmt17(rep.discrepancy), fmt17(ord)});
  }
  r.ladder = {{"h", hs}, {"discrepancy", disc}, {"order", orders}};
  r.extrapolated = disc.back();
  double worst = *std::max_element(disc.begin(), disc.end());
  bool exact = exact_tol > 0 && worst <= exact_tol;
  r.results["exact_on_grid"] = exact;
  r.check("discrepancy_finest", disc.back(), "<=", p.pos("tol"));
  if (exact) {
    // nothing to converge: the scheme reproduces the invariance to roundoff
    r.check("discrepancy_all_levels", worst, "<=", exact_tol);
  } else {
    r.check("convergence_order", *std::min_element(orders.begin(), orders.end()), ">=",
            p.num("min_order"));
  }
}

void run_invariance_diffeo(Run& r) {
  Fields p = r.params();
  Fields b = p.sub("bump");
  Diffeo psi = bump_diffeo(b.vec("center", 2), b.pos("radius"), b.vec("shift", 2));
  ScalarField a = coefficient(p.sub("a"));
  BoundaryData f = pulses(p, "pulses", face_count(r.m));
  invariance_ladder(r, p, [&](const WaveMetric& g, const GridSpec& gs) {
    return diffeo_invariance_check(g, a, psi, f, gs);
  }, 0);
  Fields ng = p.sub("negative");
  Diffeo bad = boundary_shift_diffeo(ng.num("amp"), ng.num("t_on"), ng.pos("rise"));
  WaveMetric g = wave_metric(r.m);
  double neg = diffeo_invariance_check(g, a, bad, f, wave_grid(r, g), false).discrepancy;
  r.results["negative_control"] = neg;
  r.check("negative_control", neg, ">=", p.num("min_negative"));
}

void run_invariance_conformal(Run& r) {
  Fields p = r.params();
  Fields b = p.sub("beta");
  ScalarField beta = spacetime_beta(b.num("amp"), b.vec("center", 2), b.pos("radius"));
  ScalarField a = coefficient(p.sub("a"));
  BoundaryData f = pulses(p, "pulses", face_count(r.m));
  invariance_ladder(r, p, [&](const WaveMetric& g, const GridSpec& gs) {
    return conformal_invariance_check(g, a, beta, f, gs);
  }, p.pos("exact_tol"));
  double amp = p.sub("negative").num("amp");
  ScalarField bad = [amp](const Vec& y) { return amp * std::pow(std::cos(M_PI * y[1]), 2); };
  WaveMetric g = wave_metric(r.m);
  double neg = conformal_invariance_check(g, a, bad, f, wave_grid(r, g), false).discrepancy;
  r.results["negative_control"] = neg;
  r.check("negative_control", neg, ">=", p.num("min_negative"));
}

void run_fourwave(Run& r) {
  Fields p = r.params();
  WaveMetric g = wave_metric(r.m);
  GridSpec gs = wave_grid(r, g);
  ScalarField a = coefficient(p.sub("a"));
  const json& pl = p.raw("pulses");
  if (pl.size() != 4) p.fail("pulses", "expected 4 entries");
  std::array<BoundaryData, 4> f;
  for (int i = 0; i < 4; ++i) {
    Fields e(pl[i], "params.pulses[" + std::to_string(i) + "]");
    f[i] = face_pulse(e.integer("face", 0, face_count(r.m) - 1), e.num("t0"), e.pos("width"), e.num("amp"));
  }
  Vec ev = p.vec("eps", 4);
  for (int i = 0; i < 4; ++i)
    if (!(ev[i] > 0)) p.fail("eps", "entries must be positive");
  auto S = dn_fourth_mixed(g, {}, a, f, {ev[0], ev[1], ev[2], ev[3]}, gs);
  auto W = cascade_fourth(g, {}, a, f, gs);
  auto W1 = cascade_fourth(g, {}, a, f, gs, 1.0);
  double rel = W.norm() > 0 ? relative_l2(S.u4, W) : NAN;
  double factor = inner(S.u4, W1) / inner(W1, W1);
  Csv& out = r.csv("u4.csv", {"t", "face", "node", "u4", "cascade"});
  for (size_t k = 0; k < S.u4.t.size(); ++k)
    for (size_t fc = 0; fc < S.u4.faces.size(); ++fc)
      for (Eigen::Index j = 0; j < S.u4.faces[fc].neumann.cols(); ++j)
        out.row({fmt17(S.u4.t[k]), itos(fc), itos(j), fmt17(S.u4.faces[fc].neumann(k, j)),
                 fmt17(W.faces[fc].neumann(k, j))});
  r.results = {{"signal", S.signal},
               {"noise_floor", S.noise_floor},
               {"warning", S.warning},
               {"stencil_vs_cascade", rel},
               {"factor", factor}};
  r.check("stencil_vs_cascade", rel, "<=", p.pos("tol_cascade"));
  r.check_near("factor", factor, p.num("factor_expected"), p.pos("factor_tol"));
  if (p.flag("assert_nonzero_signal")) r.check("signal_over_noise_floor", S.signal - S.noise_floor, ">=", 0);

  auto qe = p.list("quartic_eps", true, 0);
  if (!qe.empty()) {
    if (qe.size() < 2) p.fail("quartic_eps", "needs at least 2 entries");
    BoundaryData f2 = pulses(p, "quartic_pulses", face_count(r.m));
    auto lin = solve_linear(g, {}, f2, gs).dn;
    std::vector<double> resid;
    Csv& qo = r.csv("quartic.csv", {"eps", "nonlinear_minus_linear"});
    for (double e : qe) {
      auto nl = solve_semilinear(g, {}, a, sum({f2}, {e}), gs).dn;
      resid.push_back((nl - lin * e).norm());
      qo.row({fmt17(e), fmt17(resid.back())});
    }
    double s = loglog_slope(qe, resid);
    r.ladder = {{"eps", qe}, {"nonlinear_minus_linear", resid}};
    r.extrapolated = s;
    r.results["quartic_exponent"] = s;
    r.check_near("quartic_exponent", s, p.num("quartic_expected"), p.pos("quartic_tol"));
  }
}

void run_control(Run& r) {
  Fields p = r.params();
  Fields pu = p.sub("pulse");
  ExteriorPulse ep;
  ep.x_center = pu.num("x_center");
  ep.t_center = pu.num("t_center");
  ep.x_width = pu.pos("x_width");
  ep.t_width = pu.pos("t_width");
  ep.amp = pu.num("amp");
  int passes = p.integer("passes", 1, 5);
  auto rep = scattering_control(r.m, ep, passes, r.grid().pos("h"), r.grid().pos("T"));
  Csv& out = r.csv("mismatch.csv", {"pass", "mismatch"});
  for (size_t k = 0; k < rep.mismatch.size(); ++k) out.row({itos(k), fmt17(rep.mismatch[k])});
  r.ladder = {{"pass", json::array()}, {"mismatch", rep.mismatch}};
  for (size_t k = 0; k < rep.mismatch.size(); ++k) r.ladder["pass"].push_back(k);
  r.extrapolated = rep.mismatch.back();
  r.results = {{"transit", to_string(rep.transit.cls)},
               {"entry_face", rep.entry_face},
               {"exit_face", rep.exit_face},
               {"passes", rep.passes}};
  r.check("uncontrolled_mismatch", rep.mismatch.front(), ">=", p.num("min_uncontrolled"));
  r.check("controlled_mismatch", rep.mismatch.back(), "<=", p.pos("tol_final"));
}

void run_stationary_phase(Run& r) {
  Fields p = r.params();
  if (r.c.preset.name != "minkowski" || r.c.preset.n != 3)
    config_fail("preset", "stationary-phase runs on the minkowski preset with n = 3");
  InteractionOptions o;
  o.r0 = p.range("r0", -1, 1);
  o.sigma = p.range("sigma", 1e-3, 1);
  o.sign = p.integer("sign", -1, 1);
  if (o.sign == 0) p.fail("sign", "must be +1 or -1");
  Fields b = p.sub("beta");
  double amp = b.num("amp"), w2 = b.pos("width2");
  Vec c = b.vec("center", 4);
  ScalarField beta = [amp, w2, c](const Vec& y) { return amp * std::exp(-(y - c).squaredNorm() / w2); };
  Fields af = p.sub("a");
  double c0 = af.num("c0");
  Vec grad = af.vec("grad", 3);
  ScalarField a = [c0, grad](const Vec& y) { return c0 + grad.dot(y.tail(3)); };
  double factor = p.num("factor");
  ScalarField at = [a, beta, factor](const Vec& y) { return factor * std::exp(-beta(y)) * a(y); };
  if (p.flag("with_potential")) o.q = conjugation_potential(r.m, beta);
  auto s = make_interaction_setup(o);
  QuadratureOptions q;
  q.cells_per_width = p.pos("cells_per_width");
  q.decay = p.pos("decay");
  auto rep = recover_amplitude_ratio(s, a, at, beta, p.pos("rho_max"), q);
  Csv& out = r.csv("ladder.csv", {"rho", "plain_re", "plain_im", "tilde_re", "tilde_im", "ratio_re", "ratio_im"});
  json plain = json::array(), tilde = json::array(), ratio = json::array();
  for (size_t k = 0; k < rep.rho.size(); ++k) {
    out.row({fmt17(rep.rho[k]), fmt17(rep.plain[k].real()), fmt17(rep.plain[k].imag()),
             fmt17(rep.tilde[k].real()), fmt17(rep.tilde[k].imag()), fmt17(rep.ratio[k].real()),
             fmt17(rep.ratio[k].imag())});
    plain.push_back(cjson(rep.plain[k]));
    tilde.push_back(cjson(rep.tilde[k]));
    ratio.push_back(cjson(rep.ratio[k]));
  }
  r.ladder = {{"rho", rep.rho}, {"rho2_integral_plain", plain}, {"rho2_integral_tilde", tilde}, {"ratio", ratio}};
  r.extrapolated = rep.ratio_estimate;
  r.results = {{"extrapolated_ratio", cjson(rep.extrapolated)},
               {"previous_rung_ratio", cjson(rep.previous)},
               {"residual", rep.residual},
               {"kappa", s.k.kappa},
               {"kappa_residual", s.k.residual}};
  r.check_near("ratio", rep.ratio_estimate, factor, p.pos("tol"));
  r.check("extrapolation_residual", rep.residual, "<=", p.pos("max_residual"));
}

void run_ray_q(Run& r) {
  Fields p = r.params();
  if (!r.m.flat) config_fail("preset", "ray-q compares against straight-ray quadrature: needs a flat preset");
  int d = r.m.spatial_dim() + 1;
  Vec p0 = p.vec("p0", d), v0 = p.vec("v0", d);
  Fields qf = p.sub("q");
  double qc = qf.num("center"), qw = qf.pos("width"), qa = qf.num("amp"), tilt = qf.num("tilt");
  ScalarField q = [=](const Vec& y) {
    double u = y[1] - qc;
    return qa * std::exp(-u * u / (qw * qw)) * (1 + tilt * y[0]);
  };
  int panels = p.integer("panels", 2, 10000000);
  if (panels % 2) p.fail("panels", "must be even");
  Csv& out = r.csv("ray_q.csv", {"kind", "s0", "value", "reference", "error"});
  double worst_q = 0, worst_p = 0;
  for (double s0 : p.list("s0", true)) {
    auto rt = ray_transform_q(r.m, p0, v0, q, s0);
    // composite Simpson along the straight ray
    double h = s0 / panels, acc = q(p0) + q(p0 + s0 * v0);
    for (int i = 1; i < panels; ++i) acc += (i % 2 ? 4 : 2) * q(p0 + i * h * v0);
    acc *= h / 3;
    double e = std::max({std::abs(rt.extracted - acc), std::abs(rt.unweighted - acc)});
    if (r.m.spatial_dim() == 1) e = std::max(e, std::abs(rt.weighted - cplx(acc)));
    worst_q = std::max(worst_q, e);
    out.row({"integral", fmt17(s0), fmt17(rt.extracted), fmt17(acc), fmt17(e)});
  }
  double ds = p.pos("ds");
  for (double s0 : p.list("pointwise_s0", true)) {
    double dv = ray_transform_derivative(r.m, p0, v0, q, s0, ds), ref = q(p0 + s0 * v0);
    worst_p = std::max(worst_p, std::abs(dv - ref));
    out.row({"pointwise", fmt17(s0), fmt17(dv), fmt17(ref), fmt17(dv - ref)});
  }
  r.results = {{"quadrature_error", worst_q}, {"pointwise_error", worst_p}};
  r.check("quadrature_error", worst_q, "<=", p.pos("tol_quadrature"));
  r.check("pointwise_error", worst_p, "<=", p.pos("tol_pointwise"));
}

void run_observation_set(Run& r) {
  Fields p = r.params();
  ArrivalOptions o;
  o.h = r.grid().pos("h");
  o.cfl = r.grid().num("cfl");
  if (!(o.cfl > 0 && o.cfl <= 0.9)) r.grid().fail("cfl", "must lie in (0, 0.9]");
  o.width = p.pos("width");
  o.eps = p.pos("eps");
  o.threshold = p.pos("threshold");
  o.noise_window = p.integer("noise_window", 1, 100000);
  o.margin = p.pos("margin");
  ScalarField a = coefficient(p.sub("a"));
  double tol = p.pos("max_cell_error");
  int good = 0;
  json positions = json::array();
  const json& qs = p.raw("q0");
  for (size_t k = 0; k < qs.size(); ++k) {
    Vec q0(2);
    if (!qs[k].is_array() || qs[k].size() != 2) config_fail("params.q0[" + std::to_string(k) + "]", "expected (t, x)");
    q0 << qs[k][0].get<double>(), qs[k][1].get<double>();
    auto rep = observation_set_from_data(r.m, q0, a, o);
    Csv& out = r.csv("arrivals_" + itos(k) + ".csv", {"face_id", "t_detected", "t_geometric", "cell_error"});
    bool ok = true;
    json faces = json::array();
    for (const auto& e : rep.faces) {
      out.row({itos(e.face), e.censored ? "nan" : fmt17(e.t_detected), fmt17(e.t_geometric),
               e.censored ? "nan" : fmt17(e.cell_error)});
      ok = ok && !e.censored && std::abs(e.cell_error) <= tol;
      faces.push_back({{"face", e.face},
                       {"censored", e.censored},
                       {"t_detected", e.censored ? json(nullptr) : json(e.t_detected)},
                       {"t_geometric", e.t_geometric},
                       {"cell_error", e.censored ? json(nullptr) : json(e.cell_error)}});
    }
    good += ok;
    positions.push_back({{"q0", {q0[0], q0[1]}}, {"shift", rep.shift}, {"faces", faces}, {"within_tolerance", ok}});
  }
  r.results = {{"positions", positions}, {"positions_within_tolerance", good}};
  r.tolerance["max_cell_error"] = tol;
  r.check("positions_within_tolerance", good, ">=", p.integer("min_positions", 0, 1000));
}

using Runner = void (*)(Run&);

const std::map<std::string, Runner>& runners() {
  static const std::map<std::string, Runner> m = {
      {"geodesic", run_geodesic},
      {"transit", run_transit},
      {"chart", run_chart},
      {"riccati", run_riccati},
      {"beam-residual", run_beam_residual},
      {"reflect-beam", run_reflect_beam},
      {"recover-boundary", run_recover_boundary},
      {"dn", run_dn},
      {"invariance-diffeo", run_invariance_diffeo},
      {"invariance-conformal", run_invariance_conformal},
      {"fourwave", run_fourwave},
      {"control", run_control},
      {"stationary-phase", run_stationary_phase},
      {"ray-q", run_ray_q},
      {"observation-set", run_observation_set},
  };
  return m;
}

PresetParams preset_params(const ExperimentConfig& c) {
  PresetParams p;
  for (const auto& [k, v] : c.preset.params.items()) p[k] = v.get<double>();
  return p;
}

}  // namespace

const std::vector<std::string>& experiment_names() {
  static const std::vector<std::string> names = {
      "geodesic",          "transit",          "chart",      "riccati",
      "beam-residual",     "reflect-beam",     "recover-boundary",
      "dn",                "invariance-diffeo", "invariance-conformal",
      "fourwave",          "control",          "stationary-phase",
      "ray-q",             "observation-set"};
  return names;
}

json default_config(const std::string& experiment) {
  auto it = defaults().find(experiment);
  if (it == defaults().end()) throw ConfigError("experiment: unknown experiment \"" + experiment + "\"");
  return it->second;
}

ExperimentConfig parse_config(const json& j, const std::string& experiment) {
  if (!j.is_object()) throw ConfigError("config: top level must be an object");
  std::string exp = experiment;
  if (j.contains("experiment")) {
    if (!j["experiment"].is_string()) config_fail("experiment", "expected string");
    std::string named = j["experiment"];
    if (!exp.empty() && named != exp)
      config_fail("experiment", "config names \"" + named + "\" but the subcommand is \"" + exp + "\"");
    exp = named;
  }
  if (exp.empty()) config_fail("experiment", "missing");
  json full = default_config(exp);
  json user = j;
  // a different preset starts from empty preset parameters
  if (user.contains("preset") && user["preset"].is_object() && user["preset"].contains("name") &&
      user["preset"]["name"] != full["preset"]["name"])
    full["preset"]["params"] = json::object();
  json preset_user = nullptr;
  if (user.contains("preset") && user["preset"].is_object() && user["preset"].contains("params")) {
    preset_user = user["preset"]["params"];
    user["preset"].erase("params");
  }
  merge_strict(full, user, "");
  if (!preset_user.is_null()) {
    if (!preset_user.is_object()) config_fail("preset.params", "expected object");
    for (const auto& [k, v] : preset_user.items()) {
      if (!v.is_number()) config_fail("preset.params." + k, "expected number");
      full["preset"]["params"][k] = v;
    }
  }
  ExperimentConfig c;
  c.experiment = exp;
  Fields pr(full["preset"], "preset");
  c.preset.name = pr.str("name");
  c.preset.n = pr.integer("n", 1, 3);
  c.preset.params = full["preset"]["params"];
  if (full.contains("grid")) c.grid = full["grid"];
  c.params = full["params"];
  c.out = full["out"].get<std::string>();
  double seed = full["seed"].get<double>();
  if (seed < 0 || seed != std::floor(seed) || seed > 9.007199254740992e15)
    config_fail("seed", "must be a non-negative integer");
  c.seed = static_cast<std::uint64_t>(seed);
  try {
    (void)make_preset(c.preset.name, c.preset.n, preset_params(c));
  } catch (const ConfigError& e) {
    config_fail("preset", e.what());
  }
  return c;
}

ExperimentConfig parse_config_file(const std::string& path, const std::string& experiment) {
  std::ifstream in(path);
  if (!in) throw ConfigError("config: cannot open " + path);
  json j;
  try {
    j = json::parse(in);
  } catch (const json::parse_error& e) {
    throw ConfigError("config: invalid JSON in " + path + ": " + e.what());
  }
  return parse_config(j, experiment);
}

json to_json(const ExperimentConfig& c) {
  json j = {{"experiment", c.experiment},
            {"preset", {{"name", c.preset.name}, {"n", c.preset.n}, {"params", c.preset.params}}},
            {"params", c.params},
            {"out", c.out},
            {"seed", c.seed}};
  if (!c.grid.empty()) j["grid"] = c.grid;
  return j;
}

RunOutcome run_experiment(const ExperimentConfig& c) {
  RunOutcome o;
  json report = {{"experiment", c.experiment}, {"version", kVersion}, {"config", to_json(c)},
                 {"parameters", c.params}};
  try {
    Run r(c, make_preset(c.preset.name, c.preset.n, preset_params(c)));
    report["preset_resolved"] = r.m.params;
    runners().at(c.experiment)(r);
    report["results"] = r.results;
    report["checks"] = r.checks;
    report["tolerance"] = r.tolerance;
    report["ladder"] = r.ladder;
    report["extrapolated"] = r.extrapolated;
    report["pass"] = r.pass;
    o.exit_code = r.pass ? kExitPass : kExitTolerance;
    o.report = report;
    o.files.push_back({"report.json", dump_json(report)});
    for (auto& f : r.csvs) o.files.push_back({f.name, f.s.str()});
    return o;
  } catch (const ConfigError& e) {
    o.exit_code = kExitConfig;
    o.error = e.what();
  } catch (const PreconditionError& e) {
    o.exit_code = kExitConfig;
    o.error = std::string("precondition: ") + e.what();
  } catch (const DomainError& e) {
    o.exit_code = kExitConfig;
    o.error = std::string("domain: ") + e.what();
  } catch (const std::exception& e) {
    // DivergenceError, NumericalError and anything unexpected
    o.exit_code = kExitDivergence;
    o.error = e.what();
  }
  report["error"] = o.error;
  report["pass"] = false;
  o.report = report;
  o.files.push_back({"report.json", dump_json(report)});
  return o;
}

void write_artifacts(const RunOutcome& r, const std::string& dir) {
  std::filesystem::create_directories(dir);
  for (const auto& f : r.files) {
    std::ofstream out(std::filesystem::path(dir) / f.name, std::ios::binary);
    out << f.bytes;
    if (!out) throw std::runtime_error("cannot write " + (std::filesystem::path(dir) / f.name).string());
  }
}

std::string fmt17(double x) {
  if (std::isnan(x)) return "nan";
  if (std::isinf(x)) return x > 0 ? "inf" : "-inf";
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", x);
  return buf;
}

namespace {

void dump_rec(const json& j, std::string& out, int indent) {
  const std::string pad(indent + 2, ' '), close(indent, ' ');
  switch (j.type()) {
    case json::value_t::object: {
      if (j.empty()) {
        out += "{}";
        return;
      }
      out += "{\n";
      bool first = true;
      for (const auto& [k, v] : j.items()) {
        if (!first) out += ",\n";
        first = false;
        out += pad + json(k).dump() + ": ";
        dump_rec(v, out, indent + 2);
      }
      out += "\n" + close + "}";
      return;
    }
    case json::value_t::array: {
      if (j.empty()) {
        out += "[]";
        return;
      }
      out += "[\n";
      for (size_t i = 0; i < j.size(); ++i) {
        if (i) out += ",\n";
        out += pad;
        dump_rec(j[i], out, indent + 2);
      }
      out += "\n" + close + "]";
      return;
    }
    case json::value_t::number_float: {
      double x = j.get<double>();
      out += std::isfinite(x) ? fmt17(x) : "null";
      return;
    }
    default:
      out += j.dump();
  }
}

}  // namespace

std::string dump_json(const json& j) {
  std::string out;
  dump_rec(j, out, 0);
  out += "\n";
  return out;
}

}  // namespace labcli

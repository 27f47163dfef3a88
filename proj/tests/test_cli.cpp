#include "runner.hpp"

#include "lab/core.hpp"

#include <gtest/gtest.h>

#include <sys/wait.h>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>

using namespace labcli;
namespace fs = std::filesystem;

namespace {

struct Proc {
  int code = -1;
  std::string output;  // stdout and stderr
};

Proc run_cli(const std::string& args) {
  std::string cmd = std::string(LABCLI_PATH) + " " + args + " 2>&1";
  Proc p;
  FILE* f = popen(cmd.c_str(), "r");
  if (!f) return p;
  char buf[4096];
  size_t n;
  while ((n = std::fread(buf, 1, sizeof buf, f)) > 0) p.output.append(buf, n);
  int st = pclose(f);
  p.code = WIFEXITED(st) ? WEXITSTATUS(st) : -1;
  return p;
}

fs::path scratch(const std::string& name) {
  fs::path d = fs::temp_directory_path() / ("labcli_test_" + name);
  fs::remove_all(d);
  fs::create_directories(d);
  return d;
}

std::string write_config(const fs::path& dir, const json& j) {
  fs::path p = dir / "config.json";
  std::ofstream(p) << j.dump(2);
  return p.string();
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

// FNV-1a over the bytes of every file in dir
std::map<std::string, std::uint64_t> hashes(const fs::path& dir) {
  std::map<std::string, std::uint64_t> h;
  for (const auto& e : fs::directory_iterator(dir)) {
    if (e.path().filename() == "config.json") continue;
    std::uint64_t v = 1469598103934665603ull;
    for (unsigned char c : slurp(e.path())) v = (v ^ c) * 1099511628211ull;
    h[e.path().filename().string()] = v;
  }
  return h;
}

std::string config_error(const json& j) {
  try {
    parse_config(j);
  } catch (const lab::ConfigError& e) {
    return e.what();
  }
  return "";
}

}  // namespace

TEST(Config, MinimalConfigRoundTrips) {
  for (const auto& name : experiment_names()) {
    ExperimentConfig a = parse_config(json{{"experiment", name}});
    ExperimentConfig b = parse_config(to_json(a));
    EXPECT_EQ(to_json(a), to_json(b)) << name;
    // through the 17-digit writer as well
    ExperimentConfig c = parse_config(json::parse(dump_json(to_json(a))));
    EXPECT_EQ(to_json(a), to_json(c)) << name;
  }
}

TEST(Config, DefaultsAreFilled) {
  auto c = parse_config(json{{"experiment", "dn"}, {"params", {{"eps", 0.5}}}});
  EXPECT_EQ(c.params["eps"].get<double>(), 0.5);
  EXPECT_EQ(c.params["pulses"].size(), 2u);
  EXPECT_EQ(c.grid["h"].get<double>(), 0.01);
  EXPECT_EQ(c.preset.name, "minkowski");
}

TEST(Config, UnknownKeyIsNamed) {
  std::string top = config_error({{"experiment", "dn"}, {"foo", 1}});
  EXPECT_NE(top.find("\"foo\""), std::string::npos) << top;
  std::string nested = config_error({{"experiment", "dn"}, {"params", {{"foo", 1}}}});
  EXPECT_NE(nested.find("params.foo"), std::string::npos) << nested;
  std::string deep =
      config_error({{"experiment", "dn"}, {"params", {{"pulses", {{{"face", 0}, {"foo", 2}}}}}}});
  EXPECT_NE(deep.find("params.pulses[0].foo"), std::string::npos) << deep;
  std::string preset = config_error(
      {{"experiment", "dn"}, {"preset", {{"name", "minkowski"}, {"params", {{"foo", 1}}}}}});
  EXPECT_NE(preset.find("foo"), std::string::npos) << preset;
}

TEST(Config, WrongTypeAndRangeNameThePath) {
  std::string t = config_error({{"experiment", "dn"}, {"params", {{"eps", "big"}}}});
  EXPECT_NE(t.find("params.eps"), std::string::npos) << t;
  std::string s = config_error({{"experiment", "dn"}, {"seed", -1}});
  EXPECT_NE(s.find("seed"), std::string::npos) << s;
  std::string m = config_error({{"experiment", "no-such"}});
  EXPECT_NE(m.find("no-such"), std::string::npos) << m;
  auto c = parse_config(json{{"experiment", "dn"}, {"grid", {{"h", -0.1}}}});
  auto r = run_experiment(c);
  EXPECT_EQ(r.exit_code, kExitConfig);
  EXPECT_NE(r.error.find("grid.h"), std::string::npos) << r.error;
}

TEST(Config, CflViolationCitesTheStepBound) {
  // minkowski: c_max = 1, so the bound is cfl * h / sqrt(n) with n = 1
  const double h = 0.01, cfl = 0.5, bound = cfl * h;
  char expect[40];
  std::snprintf(expect, sizeof expect, "%.17g", bound);
  auto bad = parse_config(json{{"experiment", "dn"}, {"grid", {{"h", h}, {"cfl", cfl}, {"dt", 1.2 * bound}}}});
  auto r = run_experiment(bad);
  EXPECT_EQ(r.exit_code, kExitConfig);
  EXPECT_NE(r.error.find("grid.dt"), std::string::npos) << r.error;
  EXPECT_NE(r.error.find(expect), std::string::npos) << r.error;
  auto good = parse_config(json{{"experiment", "dn"}, {"grid", {{"h", h}, {"cfl", cfl}, {"dt", 0.99 * bound}}}});
  EXPECT_EQ(run_experiment(good).exit_code, kExitPass);
}

TEST(Run, RiccatiFlatPasses) {
  auto d = scratch("riccati");
  auto p = run_cli("riccati --out " + d.string());
  EXPECT_EQ(p.code, 0) << p.output;
  json rep = json::parse(slurp(d / "report.json"));
  bool found = false;
  for (const auto& c : rep["checks"])
    if (c["name"] == "flat_conservation_drift") {
      found = true;
      EXPECT_TRUE(c["pass"].get<bool>());
    }
  EXPECT_TRUE(found);
  EXPECT_TRUE(rep["pass"].get<bool>());
}

TEST(Run, FourwaveWithoutCouplingFailsTheSignalAssertion) {
  auto d = scratch("fourwave0");
  json j = {{"experiment", "fourwave"},
            {"params", {{"a", {{"c0", 0}, {"c1", 0}, {"k", 0}}}, {"assert_nonzero_signal", true}, {"quartic_eps", json::array()}}},
            {"grid", {{"h", 0.02}, {"T", 1.2}}}};
  auto p = run_cli("fourwave --config " + write_config(d, j) + " --out " + d.string());
  EXPECT_EQ(p.code, 1) << p.output;
  EXPECT_NE(p.output.find("FAIL  signal_over_noise_floor"), std::string::npos) << p.output;
}

TEST(Run, RepeatedRunIsByteIdentical) {
  auto d = scratch("repeat");
  json j = {{"experiment", "fourwave"}, {"grid", {{"h", 0.02}, {"T", 1.2}}}, {"seed", 7}};
  std::string cfg = write_config(d, j);
  ASSERT_EQ(run_cli("fourwave --config " + cfg + " --out " + (d / "a").string()).code, 0);
  auto first = hashes(d / "a");
  ASSERT_EQ(run_cli("fourwave --config " + cfg + " --out " + (d / "a").string()).code, 0);
  EXPECT_EQ(hashes(d / "a"), first);
  EXPECT_GE(first.size(), 3u);
}

TEST(Run, ReportEmbedsResolvedConfigAndVersion) {
  auto c = parse_config(json{{"experiment", "transit"}});
  auto r = run_experiment(c);
  ASSERT_EQ(r.exit_code, 0) << r.error;
  EXPECT_EQ(r.report["config"], to_json(c));
  EXPECT_EQ(r.report["version"], lab::kVersion);
  EXPECT_EQ(r.files.front().name, "report.json");
  json back = json::parse(r.files.front().bytes);
  EXPECT_EQ(back["config"]["params"]["expect"], "IO");
  EXPECT_TRUE(back["preset_resolved"].contains("pad"));
}

TEST(Run, ArrivalCsvColumns) {
  json j = {{"experiment", "observation-set"}, {"params", {{"q0", {{0.5, 0.5}}}, {"min_positions", 1}}}};
  auto r = run_experiment(parse_config(j));
  ASSERT_EQ(r.exit_code, 0) << r.error;
  const Artifact* csv = nullptr;
  for (const auto& f : r.files)
    if (f.name == "arrivals_0.csv") csv = &f;
  ASSERT_NE(csv, nullptr);
  EXPECT_EQ(csv->bytes.substr(0, csv->bytes.find('\n')), "face_id,t_detected,t_geometric,cell_error");
}

TEST(Run, ExitCodes) {
  // wrong preset for an experiment with a fixed geometry
  auto c = parse_config(json{{"experiment", "stationary-phase"}, {"preset", {{"name", "lens"}, {"n", 2}}}});
  EXPECT_EQ(run_experiment(c).exit_code, kExitConfig);
  // strongly focusing coupling blows up
  json j = {{"experiment", "dn"},
            {"params", {{"a", {{"c0", -50}, {"c1", 0}, {"k", 0}}}, {"pulses", {{{"face", 0}, {"t0", 0.3}, {"width", 0.2}, {"amp", 5}}}}}},
            {"grid", {{"T", 2.0}}}};
  auto r = run_experiment(parse_config(j));
  EXPECT_EQ(r.exit_code, kExitDivergence) << r.error;
  EXPECT_FALSE(r.report["pass"].get<bool>());
}

TEST(Format, SeventeenDigits) {
  EXPECT_EQ(fmt17(0.1), "0.10000000000000001");
  EXPECT_EQ(fmt17(std::nan("")), "nan");
  EXPECT_EQ(dump_json(json{{"x", 0.1}}), "{\n  \"x\": 0.10000000000000001\n}\n");
  EXPECT_EQ(dump_json(json{{"x", std::nan("")}}), "{\n  \"x\": null\n}\n");
}

TEST(Cli, FlagsAndErrors) {
  auto l = run_cli("--list-presets");
  EXPECT_EQ(l.code, 0);
  EXPECT_NE(l.output.find("static_profile"), std::string::npos);
  auto d = scratch("cli");
  auto u = run_cli("dn --config " + write_config(d, {{"experiment", "dn"}, {"foo", 1}}) + " --out " + d.string());
  EXPECT_EQ(u.code, 2);
  EXPECT_NE(u.output.find("foo"), std::string::npos) << u.output;
  auto m = run_cli("dn --config " + write_config(d, {{"experiment", "chart"}}));
  EXPECT_EQ(m.code, 2);
  EXPECT_NE(m.output.find("subcommand"), std::string::npos) << m.output;
  std::ofstream(d / "broken.json") << "{ not json";
  EXPECT_EQ(run_cli("dn --config " + (d / "broken.json").string()).code, 2);
  EXPECT_EQ(run_cli("no-such-experiment").code, 2);
}

TEST(Scenarios, EveryExperimentHasABundledScenario) {
  for (const auto& name : experiment_names()) {
    fs::path p = fs::path(LAB_SCENARIO_DIR) / (name + ".json");
    ASSERT_TRUE(fs::exists(p)) << p;
    EXPECT_EQ(parse_config_file(p.string()).experiment, name);
  }
}

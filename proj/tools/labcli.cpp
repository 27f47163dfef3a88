// Command line front end: one subcommand per experiment.
#include "runner.hpp"

#include "lab/lorgeo.hpp"

#include <CLI11.hpp>

#include <cstdio>
#include <iostream>

using namespace labcli;

namespace {

void list_presets() {
  for (const auto& name : lab::preset_names()) {
    std::printf("%s\n", name.c_str());
    for (int n = 1; n <= 3; ++n) {
      try {
        auto m = lab::make_preset(name, n);
        std::printf("  n=%d:", n);
        for (const auto& [k, v] : m.params) std::printf(" %s=%s", k.c_str(), fmt17(v).c_str());
        std::printf("\n");
      } catch (const std::exception& e) {
        std::printf("  n=%d: unavailable (%s)\n", n, e.what());
      }
    }
  }
}

int run(const std::string& experiment, const std::string& config, const std::string& out) {
  ExperimentConfig c;
  try {
    c = config.empty() ? parse_config(default_config(experiment), experiment)
                       : parse_config_file(config, experiment);
  } catch (const lab::ConfigError& e) {
    std::fprintf(stderr, "config error: %s\n", e.what());
    return kExitConfig;
  }
  if (!out.empty()) c.out = out;
  RunOutcome r = run_experiment(c);
  try {
    write_artifacts(r, c.out);
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return kExitConfig;
  }
  if (!r.error.empty()) {
    std::fprintf(stderr, "%s error: %s\n", r.exit_code == kExitConfig ? "config" : "numerical",
                 r.error.c_str());
    return r.exit_code;
  }
  for (const auto& ch : r.report["checks"]) {
    std::string v = ch["value"].is_boolean() ? (ch["value"].get<bool>() ? "true" : "false")
                                             : fmt17(ch["value"].get<double>());
    std::string b = ch.contains("bound") ? fmt17(ch["bound"].get<double>()) : "";
    std::string rel = ch["relation"];
    if (rel == "true") rel.clear();
    if (rel == "within") rel = "within " + fmt17(ch["target"].get<double>()) + " +-";
    std::printf("%s  %s = %s %s %s\n", ch["pass"].get<bool>() ? "pass" : "FAIL",
                ch["name"].get<std::string>().c_str(), v.c_str(), rel.c_str(), b.c_str());
  }
  std::printf("%s: %s, artifacts in %s\n", experiment.c_str(), r.exit_code == 0 ? "pass" : "fail",
              c.out.c_str());
  return r.exit_code;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Desk-scale experiments on Lorentzian wave inverse problems"};
  bool presets = false;
  std::string config, out;
  app.add_flag("--list-presets", presets, "List metric presets with their default parameters");
  for (const auto& name : experiment_names()) {
    auto* sub = app.add_subcommand(name, "Run the " + name + " experiment");
    sub->add_option("--config", config, "JSON config; the bundled defaults when omitted")
        ->check(CLI::ExistingFile);
    sub->add_option("--out", out, "Artifact directory (overrides the config)");
  }
  app.require_subcommand(0, 1);
  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kExitConfig;
  }
  if (presets) {
    list_presets();
    return 0;
  }
  auto subs = app.get_subcommands();
  if (subs.empty()) {
    std::cout << app.help();
    return kExitConfig;
  }
  return run(subs[0]->get_name(), config, out);
}

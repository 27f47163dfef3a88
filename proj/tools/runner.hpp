#pragma once

#include <json.hpp>

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

namespace labcli {

using json = nlohmann::json;

inline constexpr int kExitPass = 0, kExitTolerance = 1, kExitConfig = 2, kExitDivergence = 3;

const std::vector<std::string>& experiment_names();

struct PresetSpec {
  std::string name;
  int n = 1;
  json params = json::object();  // forwarded to make_preset
};

struct ExperimentConfig {
  std::string experiment;
  PresetSpec preset;
  json grid = json::object();    // empty for experiments without a wave grid
  json params = json::object();
  std::string out;
  std::uint64_t seed = 0;
};

// Defaults of the bundled scenario for one experiment.
json default_config(const std::string& experiment);

// Strict parse: every key must exist in the experiment's defaults, types must
// match, missing keys take the default.  Throws lab::ConfigError naming the
// field path.
ExperimentConfig parse_config(const json& j, const std::string& experiment = "");
ExperimentConfig parse_config_file(const std::string& path, const std::string& experiment = "");
json to_json(const ExperimentConfig& c);

struct Artifact {
  std::string name;
  std::string bytes;
};

struct RunOutcome {
  int exit_code = kExitPass;
  json report;                   // also written as report.json
  std::vector<Artifact> files;   // report.json first
  std::string error;             // set when exit_code is 2 or 3
};

// Never throws for config or numerical failures: they map to exit codes 2 and 3.
RunOutcome run_experiment(const ExperimentConfig& c);
void write_artifacts(const RunOutcome& r, const std::string& dir);

// JSON with every float printed at 17 significant digits, keys sorted.
std::string dump_json(const json& j);
std::string fmt17(double x);

}  // namespace labcli

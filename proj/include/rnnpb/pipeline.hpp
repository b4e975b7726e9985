#pragma once

#include <cstdint>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

namespace rnnpb {

// Exit codes of run_pipeline, one per failing stage.
enum ExitCode : int {
  kExitOk = 0,
  kExitConfig = 1,
  kExitSynth = 2,
  kExitTrain = 3,
  kExitSimulate = 4,
  kExitVerify = 5,
};

// Command-line overrides applied on top of a JSON configuration.
struct PipelineOverrides {
  std::optional<std::string> output_dir;
  std::optional<std::uint64_t> seed;
  std::optional<int> horizon;
  std::optional<int> scenarios;
  std::optional<std::vector<double>> p;
  std::optional<std::vector<std::string>> stages;
};

// Runs the stages listed in the configuration, in pipeline order:
//   generate | load, synth, train, simulate, verify
// Artifacts go to the output directory:
//   benchmark.json, synthesis.json, operator.json, loss_history.json,
//   trajectory_NNN.csv, verify.json
// A stage whose inputs were not produced in this run reads them from there,
// so any suffix of the pipeline can run against an existing bundle.
// Returns 0 iff every requested stage succeeds and every verification passes.
int run_pipeline(const nlohmann::json& config, const PipelineOverrides& overrides = {},
                 std::ostream* log = nullptr);
int run_pipeline(const std::string& config_path, const PipelineOverrides& overrides = {},
                 std::ostream* log = nullptr);

// Parses "inf" / "infinity" or a number >= 1.
double parse_p(const std::string& s);

}  // namespace rnnpb

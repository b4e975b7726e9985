// Command-line front end. Every subcommand is a slice of the pipeline run
// against the bundle in --out; `run` executes the stages listed in --config.

#include <fstream>
#include <iostream>

#include <CLI11.hpp>

#include "rnnpb/errors.hpp"
#include "rnnpb/pipeline.hpp"

using namespace rnnpb;

namespace {

struct CommonFlags {
  std::string config;
  std::string out;
  std::uint64_t seed = 0;
  int horizon = 0;
  int scenarios = 0;
  std::vector<std::string> p;
};

void add_common(CLI::App* app, CommonFlags& f) {
  app->add_option("--config", f.config, "JSON configuration file");
  app->add_option("--out", f.out, "output directory (bundle)");
  app->add_option("--seed", f.seed, "root seed");
  app->add_option("--horizon", f.horizon, "steps per run")->check(CLI::PositiveNumber);
  app->add_option("--scenarios", f.scenarios, "number of runs")->check(CLI::PositiveNumber);
  app->add_option("--p", f.p, "norm index for the l_p checks: 1, 2 or inf (repeatable)");
}

PipelineOverrides overrides(const CLI::App* app, const CommonFlags& f) {
  PipelineOverrides o;
  if (app->count("--out")) o.output_dir = f.out;
  if (app->count("--seed")) o.seed = f.seed;
  if (app->count("--horizon")) o.horizon = f.horizon;
  if (app->count("--scenarios")) o.scenarios = f.scenarios;
  if (!f.p.empty()) {
    std::vector<double> ps;
    for (const auto& s : f.p) ps.push_back(parse_p(s));
    o.p = ps;
  }
  return o;
}

nlohmann::json load_config(const std::string& path) {
  if (path.empty()) return nlohmann::json::object();
  std::ifstream f(path);
  if (!f) throw InvalidInput("cannot read " + path);
  try {
    return nlohmann::json::parse(f);
  } catch (const nlohmann::json::exception& e) {
    throw InvalidInput("invalid JSON in " + path + ": " + e.what());
  }
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Boosted control synthesis, training and verification for RNN plants"};
  app.require_subcommand(1);

  struct Command {
    CLI::App* app;
    CommonFlags flags;
    std::vector<std::string> stages;
  };
  std::vector<Command> commands;
  commands.reserve(6);
  auto add = [&](CLI::App* parent, const char* name, const char* help, std::vector<std::string> stages) {
    commands.push_back({parent->add_subcommand(name, help), {}, std::move(stages)});
    add_common(commands.back().app, commands.back().flags);
    return commands.back().app;
  };

  add(&app, "synth", "synthesize the stabilizing gain for the bundle's benchmark", {"synth"});
  add(&app, "train", "train the boosting operator", {"train"});
  add(&app, "simulate", "simulate the closed loop and write trajectory CSVs", {"simulate"});
  add(&app, "verify", "run the certificate checks on a bundle", {"verify"});
  add(&app, "run", "run the stages listed in the configuration", {});
  CLI::App* bench = app.add_subcommand("bench", "benchmark utilities");
  bench->require_subcommand(1);
  std::string preset = "random";
  int n = 3;
  CLI::App* gen = add(bench, "gen", "generate a benchmark into the bundle", {"generate"});
  gen->add_option("--preset", preset, "random or ph-like")->check(CLI::IsMember({"random", "ph-like"}));
  gen->add_option("--n", n, "state dimension (random preset)")->check(CLI::PositiveNumber);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : kExitConfig;
  }

  for (auto& c : commands) {
    if (!c.app->parsed()) continue;
    try {
      nlohmann::json config = load_config(c.flags.config);
      PipelineOverrides o = overrides(c.app, c.flags);
      if (!c.stages.empty()) o.stages = c.stages;
      if (c.app == gen) {
        if (!config.contains("benchmark")) config["benchmark"] = nlohmann::json::object();
        if (gen->count("--preset")) config["benchmark"]["preset"] = preset;
        if (gen->count("--n")) config["benchmark"]["n"] = n;
      }
      return run_pipeline(config, o, &std::cerr);
    } catch (const Error& e) {
      std::cerr << "config error: " << e.what() << "\n";
      return kExitConfig;
    }
  }
  return kExitConfig;
}

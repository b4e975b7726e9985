#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <sstream>

#include "rnnpb/bench.hpp"
#include "rnnpb/errors.hpp"
#include "rnnpb/pipeline.hpp"
#include "support.hpp"

using namespace rnnpb;
using namespace rnnpb::testing;
namespace fs = std::filesystem;

namespace {

fs::path fresh_dir(const std::string& name) {
  const fs::path dir = fs::path(RNNPB_TEST_DIR) / "pipeline" / name;
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

nlohmann::json small_config(const fs::path& out) {
  return {{"output_dir", out.string()},
          {"seed", 3},
          {"stages", {"generate", "synth", "train", "simulate", "verify"}},
          {"benchmark", {{"preset", "random"}, {"n", 2}}},
          {"training", {{"scenarios", 4}, {"horizon", 20}, {"n_xi", 4}, {"optimizer", {{"epochs", 3}}}}},
          {"simulate", {{"scenarios", 2}, {"horizon", 30}}},
          {"verify", {{"samples", 500}, {"projection_points", 50}}}};
}

std::string slurp(const fs::path& p) {
  std::ifstream f(p, std::ios::binary);
  std::stringstream ss;
  ss << f.rdbuf();
  return ss.str();
}

}  // namespace

TEST_CASE("pipeline: full run writes every artifact") {
  const fs::path dir = fresh_dir("full");
  std::ostringstream log;
  CHECK(run_pipeline(small_config(dir), {}, &log) == kExitOk);
  for (const char* f : {"benchmark.json", "synthesis.json", "operator.json", "loss_history.json",
                        "trajectory_000.csv", "trajectory_001.csv", "verify.json"})
    CHECK_MESSAGE(fs::exists(dir / f), f);
  const auto verify = nlohmann::json::parse(slurp(dir / "verify.json"));
  CHECK(verify.at("pass") == true);
  CHECK(verify.at("reports").size() == 5);
  const auto history = nlohmann::json::parse(slurp(dir / "loss_history.json"));
  CHECK(history.at("loss").size() == 4);
  CHECK(history.at("optimizer").at("learning_rate") == 1.0);
}

TEST_CASE("pipeline: verify-only on a finished bundle") {
  const fs::path dir = fresh_dir("verify_only");
  std::ostringstream log;
  REQUIRE(run_pipeline(small_config(dir), {}, &log) == kExitOk);
  PipelineOverrides o;
  o.stages = std::vector<std::string>{"verify"};
  CHECK(run_pipeline(small_config(dir), o, &log) == kExitOk);
}

TEST_CASE("pipeline: a tampered gain fails verification") {
  const fs::path dir = fresh_dir("tampered");
  std::ostringstream log;
  REQUIRE(run_pipeline(small_config(dir), {}, &log) == kExitOk);
  auto synth = nlohmann::json::parse(slurp(dir / "synthesis.json"));
  SynthesisResult r = synthesis_from_json(synth);
  r.K *= 4.0;
  std::ofstream(dir / "synthesis.json") << to_json(r).dump(2);
  PipelineOverrides o;
  o.stages = std::vector<std::string>{"verify"};
  CHECK(run_pipeline(small_config(dir), o, &log) == kExitVerify);
}

TEST_CASE("pipeline: infeasible toy exits with the synthesis code") {
  const fs::path dir = fresh_dir("infeasible");
  const RnnModel model = scalar_linear(2.0, 0.0);
  Benchmark b{model, make_equilibrium(model, vec1(0.0), vec1(0.0)), scalar_box(1.0, 2.0, 0.02), std::nullopt, 0.1, 1};
  std::ofstream(dir / "toy.json") << to_json(b).dump();
  nlohmann::json cfg = {{"output_dir", dir.string()},
                        {"load", (dir / "toy.json").string()},
                        {"stages", {"load", "synth"}},
                        {"synthesis", {{"max_rounds", 4}, {"max_restarts", 1}}}};
  std::ostringstream log;
  CHECK(run_pipeline(cfg, {}, &log) == kExitSynth);
  CHECK(fs::exists(dir / "synthesis_failure.json"));
  CHECK_FALSE(fs::exists(dir / "synthesis.json"));
}

TEST_CASE("pipeline: configuration errors exit with code 1") {
  const fs::path dir = fresh_dir("config");
  std::ostringstream log;
  CHECK(run_pipeline(nlohmann::json{{"output_dir", dir.string()}}, {}, &log) == kExitConfig);
  CHECK(run_pipeline(nlohmann::json{{"output_dir", dir.string()}, {"stages", {"bake"}}}, {}, &log) == kExitConfig);
  CHECK(run_pipeline(nlohmann::json{{"stages", {"generate", "load"}}, {"load", "x"}}, {}, &log) == kExitConfig);
  CHECK(run_pipeline((dir / "missing.json").string(), {}, &log) == kExitConfig);
  nlohmann::json bad_loss = small_config(dir);
  bad_loss["training"]["loss"] = "cubic";
  CHECK(run_pipeline(bad_loss, {}, &log) == kExitConfig);
}

TEST_CASE("pipeline: a stage without its inputs fails with its own code") {
  const fs::path dir = fresh_dir("missing_inputs");
  std::ostringstream log;
  nlohmann::json cfg = {{"output_dir", dir.string()}, {"stages", {"simulate"}}};
  CHECK(run_pipeline(cfg, {}, &log) == kExitSimulate);
}

TEST_CASE("pipeline: single-worker runs are byte-identical") {
  const fs::path a = fresh_dir("det_a"), b = fresh_dir("det_b");
  std::ostringstream log;
  REQUIRE(run_pipeline(small_config(a), {}, &log) == kExitOk);
  REQUIRE(run_pipeline(small_config(b), {}, &log) == kExitOk);
  int files = 0;
  for (const auto& e : fs::directory_iterator(a)) {
    CHECK_MESSAGE(slurp(e.path()) == slurp(b / e.path().filename()), e.path().filename().string());
    ++files;
  }
  CHECK(files == 7);
}

TEST_CASE("parse_p") {
  CHECK(parse_p("2") == 2.0);
  CHECK(std::isinf(parse_p("inf")));
  CHECK(std::isinf(parse_p("infinity")));
  CHECK_THROWS_AS(parse_p("0.5"), InvalidInput);
  CHECK_THROWS_AS(parse_p("two"), InvalidInput);
}

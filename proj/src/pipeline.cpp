#include "rnnpb/pipeline.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <set>
#include <sstream>

#include "rnnpb/bench.hpp"
#include "rnnpb/certificates.hpp"
#include "rnnpb/errors.hpp"
#include "rnnpb/imc.hpp"
#include "rnnpb/sampling.hpp"
#include "rnnpb/stable_operator.hpp"
#include "rnnpb/synthesis.hpp"
#include "rnnpb/trainer.hpp"

namespace fs = std::filesystem;

namespace rnnpb {

double parse_p(const std::string& s) {
  if (s == "inf" || s == "infinity" || s == "Inf") return kInfinity;
  double p = 0.0;
  try {
    size_t used = 0;
    p = std::stod(s, &used);
    if (used != s.size()) throw std::invalid_argument(s);
  } catch (const std::exception&) {
    throw InvalidInput("p must be a number >= 1 or 'inf', got '" + s + "'");
  }
  if (!(p >= 1.0)) throw InvalidInput("p must be >= 1");
  return p;
}

namespace {

// Failure inside a stage, tagged with the stage's exit code.
struct StageError {
  int code;
  std::string message;
};

const std::vector<std::string> kStageOrder = {"generate", "load", "synth", "train", "simulate", "verify"};

enum SeedStream : std::uint64_t { kSeedGenerate = 1, kSeedBatch, kSeedOperator, kSeedSimulate, kSeedVerify };

int exit_code(const std::string& stage) {
  if (stage == "synth") return kExitSynth;
  if (stage == "train") return kExitTrain;
  if (stage == "simulate") return kExitSimulate;
  if (stage == "verify") return kExitVerify;
  return kExitConfig;
}

std::uint64_t derive_seed(std::uint64_t root, SeedStream stream) { return substream(root, stream)(); }

nlohmann::json read_json(const fs::path& path) {
  std::ifstream f(path);
  if (!f) throw InvalidInput("cannot read " + path.string());
  try {
    return nlohmann::json::parse(f);
  } catch (const nlohmann::json::exception& e) {
    throw InvalidInput("invalid JSON in " + path.string() + ": " + e.what());
  }
}

void write_json(const fs::path& path, const nlohmann::json& j) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw InvalidInput("cannot write " + path.string());
  f << j.dump(2) << '\n';
}

std::string trajectory_name(int i) {
  std::ostringstream s;
  s << "trajectory_" << std::setw(3) << std::setfill('0') << i << ".csv";
  return s.str();
}

struct Settings {
  fs::path out;
  std::uint64_t seed = 1;
  int workers = 1;
  std::vector<std::string> stages;
  nlohmann::json benchmark, synthesis, training, simulate, verify;
  std::string load_path;
  std::vector<double> p = {2.0, kInfinity};
};

Settings parse_settings(const nlohmann::json& c, const PipelineOverrides& o) {
  if (!c.is_object()) throw InvalidInput("configuration must be a JSON object");
  Settings s;
  try {
    s.out = o.output_dir ? *o.output_dir : c.value("output_dir", std::string("out"));
    s.seed = o.seed ? *o.seed : c.value("seed", std::uint64_t{1});
    s.workers = c.value("workers", 1);
    s.stages = o.stages ? *o.stages : c.value("stages", std::vector<std::string>{});
    s.benchmark = c.value("benchmark", nlohmann::json::object());
    s.synthesis = c.value("synthesis", nlohmann::json::object());
    s.training = c.value("training", nlohmann::json::object());
    s.simulate = c.value("simulate", nlohmann::json::object());
    s.verify = c.value("verify", nlohmann::json::object());
    if (c.contains("load")) s.load_path = c.at("load").get<std::string>();
    if (o.p) {
      s.p = *o.p;
    } else if (s.verify.contains("p")) {
      s.p.clear();
      for (const auto& v : s.verify.at("p"))
        s.p.push_back(v.is_string() ? parse_p(v.get<std::string>()) : v.get<double>());
    }
  } catch (const nlohmann::json::exception& e) {
    throw InvalidInput(std::string("bad configuration: ") + e.what());
  }
  if (o.horizon) {
    s.training["horizon"] = *o.horizon;
    s.simulate["horizon"] = *o.horizon;
  }
  if (o.scenarios) {
    s.training["scenarios"] = *o.scenarios;
    s.simulate["scenarios"] = *o.scenarios;
  }
  if (s.stages.empty()) throw InvalidInput("no stages requested");
  std::set<std::string> seen;
  for (const auto& st : s.stages) {
    if (std::find(kStageOrder.begin(), kStageOrder.end(), st) == kStageOrder.end())
      throw InvalidInput("unknown stage '" + st + "'");
    if (!seen.insert(st).second) throw InvalidInput("stage '" + st + "' listed twice");
  }
  if (seen.count("generate") && seen.count("load")) throw InvalidInput("'generate' and 'load' are exclusive");
  if (seen.count("load") && s.load_path.empty()) throw InvalidInput("'load' stage needs a \"load\" path");
  for (double p : s.p)
    if (!(p >= 1.0)) throw InvalidInput("p must be >= 1");
  return s;
}

class Pipeline {
 public:
  Pipeline(Settings s, std::ostream& log) : s_(std::move(s)), log_(log) {}

  int run() {
    fs::create_directories(s_.out);
    bool verified = true;
    for (const auto& stage : kStageOrder) {
      if (std::find(s_.stages.begin(), s_.stages.end(), stage) == s_.stages.end()) continue;
      const auto t0 = std::chrono::steady_clock::now();
      try {
        if (stage == "generate") generate();
        if (stage == "load") load();
        if (stage == "synth") synth();
        if (stage == "train") train_stage();
        if (stage == "simulate") simulate();
        if (stage == "verify") verified = verify();
      } catch (const StageError&) {
        throw;
      } catch (const std::exception& e) {
        throw StageError{exit_code(stage), "[" + stage + "] " + e.what()};
      }
      log_ << "[" << stage << "] done in " << std::fixed << std::setprecision(2)
           << std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count() << " s\n"
           << std::defaultfloat;
    }
    return verified ? kExitOk : kExitVerify;
  }

 private:
  // --- stage inputs, from this run or from the bundle -----------------------

  const Benchmark& benchmark() {
    if (!bench_) bench_ = benchmark_from_json(read_json(s_.out / "benchmark.json"));
    return *bench_;
  }

  const SynthesisResult& synthesis() {
    if (!synth_) synth_ = synthesis_from_json(read_json(s_.out / "synthesis.json"));
    return *synth_;
  }

  // Trained operator, or the zero-output operator when none exists.
  StableOperatorParams operator_params() {
    if (op_) return *op_;
    const fs::path path = s_.out / "operator.json";
    if (fs::exists(path)) {
      op_ = operator_from_json(read_json(path).at("params"));
      return *op_;
    }
    const Benchmark& b = benchmark();
    StableOperatorParams p = init_operator(b.model.n(), b.model.m(), s_.training.value("n_xi", 16),
                                           derive_seed(s_.seed, kSeedOperator));
    return p;
  }

  // --- stages ---------------------------------------------------------------

  void generate() {
    BenchmarkSpec spec = benchmark_spec_from_json(s_.benchmark);
    // The ph-like preset keeps its own fixed seed unless one is given.
    if (!s_.benchmark.contains("seed") && spec.preset == "random") spec.seed = derive_seed(s_.seed, kSeedGenerate);
    try {
      bench_ = generate_benchmark(spec);
    } catch (const Error& e) {
      throw StageError{kExitConfig, std::string("benchmark generation failed: ") + e.what()};
    }
    nlohmann::json j = to_json(*bench_);
    j["spec"] = to_json(spec);
    write_json(s_.out / "benchmark.json", j);
    log_ << "[generate] " << spec.preset << " n=" << spec.n << " attempts=" << bench_->attempts << "\n";
  }

  void load() {
    fs::path p = s_.load_path;
    bench_ = benchmark_from_json(read_json(p));
    nlohmann::json j = to_json(*bench_);
    write_json(s_.out / "benchmark.json", j);
  }

  void synth() {
    const Benchmark& b = benchmark();
    SynthesisOptions o;
    const auto& j = s_.synthesis;
    o.index_threshold = j.value("index_threshold", o.index_threshold);
    o.h_growth = j.value("h_growth", o.h_growth);
    o.gamma_growth = j.value("gamma_growth", o.gamma_growth);
    o.max_rounds = j.value("max_rounds", o.max_rounds);
    o.box_growth = j.value("box_growth", o.box_growth);
    o.max_restarts = j.value("max_restarts", o.max_restarts);
    o.solver.time_limit_seconds = j.value("time_limit_seconds", o.solver.time_limit_seconds);
    o.boost_box = b.boost_box;
    try {
      synth_ = synthesize(b.model, b.eq, b.constraints, o);
    } catch (const Error& e) {
      write_json(s_.out / "synthesis_failure.json", {{"error", e.what()}});
      throw StageError{kExitSynth, e.what()};
    }
    write_json(s_.out / "synthesis.json", to_json(*synth_));
    log_ << "[synth] gamma_s=" << synth_->gamma_s << " rounds=" << synth_->rounds
         << " restarts=" << synth_->restarts << " global=" << synth_->global_flag << "\n";
  }

  LossSpec loss_spec(const nlohmann::json& j) {
    const Benchmark& b = benchmark();
    const std::string kind = j.value("loss", std::string("ph"));
    if (kind == "ph") {
      if (b.model.ny() != 1) throw StageError{kExitConfig, "the ph loss needs a single output"};
      return LossSpec::ph_preset(b.eq.y_bar(0), b.u_M);
    }
    if (kind == "quadratic") return LossSpec::quadratic(b.eq.y_bar, b.u_M, j.value("quadratic_weight", 1.0));
    throw StageError{kExitConfig, "unknown loss '" + kind + "'"};
  }

  void train_stage() {
    const Benchmark& b = benchmark();
    const SynthesisResult& r = synthesis();
    const auto& j = s_.training;
    LossSpec loss = loss_spec(j);
    ScenarioOptions so;
    so.scenarios = j.value("scenarios", 32);
    so.horizon = j.value("horizon", 100);
    so.seed = derive_seed(s_.seed, kSeedBatch);
    OptimizerConfig oc;
    oc.epochs = 40;
    oc.learning_rate = 1.0;
    if (j.contains("optimizer")) {
      // keys given override the pipeline defaults, the rest are kept
      nlohmann::json merged = to_json(oc);
      merged.update(j.at("optimizer"));
      oc = optimizer_from_json(merged);
    }
    oc.workers = s_.workers;
    StableOperatorParams init = init_operator(b.model.n(), b.model.m(), j.value("n_xi", 16),
                                              derive_seed(s_.seed, kSeedOperator), j.value("rho", 0.95),
                                              j.value("init_scale", 0.1));
    TrainResult tr;
    try {
      ScenarioBatch batch = sample_scenarios(b.constraints, r, so);
      tr = train(b.model, r, b.eq, init, loss, batch, oc);
    } catch (const Error& e) {
      throw StageError{kExitTrain, e.what()};
    }
    op_ = tr.best_params;
    write_json(s_.out / "operator.json",
               {{"params", to_json(*op_)}, {"epoch", tr.epochs_run}, {"seed", s_.seed}});
    write_json(s_.out / "loss_history.json",
               {{"loss", tr.loss_history}, {"optimizer", to_json(oc)}, {"scenarios", so.scenarios},
                {"horizon", so.horizon}, {"message", tr.message}});
    log_ << "[train] " << tr.message << "\n";
  }

  void simulate() {
    const Benchmark& b = benchmark();
    const SynthesisResult& r = synthesis();
    ScenarioOptions so;
    so.scenarios = s_.simulate.value("scenarios", 4);
    so.horizon = s_.simulate.value("horizon", 200);
    so.seed = derive_seed(s_.seed, kSeedSimulate);
    try {
      ScenarioBatch batch = sample_scenarios(b.constraints, r, so);
      runs_ = simulate_batch(b.model, r, b.eq, operator_params(), batch, s_.workers);
    } catch (const Error& e) {
      throw StageError{kExitSimulate, e.what()};
    }
    for (size_t i = 0; i < runs_->size(); ++i)
      export_trajectory((*runs_)[i], b.model.n(), b.model.m(), b.model.ny(),
                        (s_.out / trajectory_name(static_cast<int>(i))).string());
    log_ << "[simulate] " << runs_->size() << " runs of " << so.horizon << " steps\n";
  }

  std::vector<Trajectory> bundle_trajectories() {
    if (runs_) return *runs_;
    std::vector<fs::path> files;
    for (const auto& e : fs::directory_iterator(s_.out)) {
      const std::string name = e.path().filename().string();
      if (name.rfind("trajectory_", 0) == 0 && e.path().extension() == ".csv") files.push_back(e.path());
    }
    std::sort(files.begin(), files.end());
    std::vector<Trajectory> t;
    for (const auto& f : files) t.push_back(import_trajectory(f.string()));
    return t;
  }

  bool verify() {
    const Benchmark& b = benchmark();
    const SynthesisResult& r = synthesis();
    const std::uint64_t seed = derive_seed(s_.seed, kSeedVerify);
    nlohmann::json reports = nlohmann::json::array();
    bool pass = true;
    auto add = [&](const CheckReport& rep) {
      pass = pass && rep.pass;
      reports.push_back(to_json(rep));
    };

    RpiCheckOptions ro;
    ro.samples = s_.verify.value("samples", 10000L);
    ro.seed = seed;
    ro.workers = s_.workers;
    add(check_rpi_montecarlo(b.model, r, b.eq, b.constraints, ro));

    const std::vector<Trajectory> runs = bundle_trajectories();
    CheckReport cons{"constraint_satisfaction", true, runs.empty() ? 0.0 : -kInfinity, 0, 0, {}, {}};
    for (const auto& t : runs) {
      CheckReport c = check_constraints_along(t, b.constraints);
      cons.pass = cons.pass && c.pass;
      cons.worst_violation = std::max(cons.worst_violation, c.worst_violation);
      cons.samples += c.samples;
    }
    cons.details["trajectories"] = static_cast<double>(runs.size());
    add(cons);

    nlohmann::json certs = nlohmann::json::array();
    for (double p : s_.p) {
      StabilityCertificate cert;
      try {
        cert = build_certificate(r, p);
      } catch (const DegenerateCertificate& e) {
        add(CheckReport{"certificate", false, kInfinity, 0, 0, {}, e.what()});
        continue;
      }
      certs.push_back(to_json(cert));
      CheckReport agg{"", true, runs.empty() ? 0.0 : -kInfinity, 0, 0, {}, {}};
      for (const auto& t : runs) {
        CheckReport c = check_lp_bound(t, b.eq, cert);
        agg.condition = c.condition;
        agg.pass = agg.pass && c.pass;
        agg.worst_violation = std::max(agg.worst_violation, c.worst_violation);
        agg.samples += c.samples;
        if (!c.warning.empty()) agg.warning = c.warning;
      }
      if (agg.condition.empty()) agg.condition = std::isinf(p) ? "lp_bound_inf" : "lp_bound";
      add(agg);
    }

    add(projection_check(r.boost_box, seed, s_.verify.value("projection_points", 1000)));

    write_json(s_.out / "verify.json", {{"pass", pass}, {"reports", reports}, {"certificates", certs}});
    log_ << "[verify] " << (pass ? "PASS" : "FAIL") << "\n";
    return pass;
  }

  static CheckReport projection_check(const BoostBox& box, std::uint64_t seed, int points) {
    const int m = box.size();
    Mat G(2 * m, m);
    G << Mat(box.g_b.asDiagonal()), -Mat(box.g_b.asDiagonal());
    const Vec h = Vec::Ones(2 * m);
    CheckReport rep{"projection_oracle", true, 0.0, points, seed, {}, {}};
    for (int i = 0; i < points; ++i) {
      Rng rng = substream(seed ^ 0x9e3779b97f4a7c15ULL, static_cast<std::uint64_t>(i));
      Vec p = 3.0 * sample_gaussian(rng, m).cwiseQuotient(box.g_b);
      rep.worst_violation =
          std::max(rep.worst_violation, (project_box(p, box) - qp_project_polytope(G, h, p)).cwiseAbs().maxCoeff());
    }
    rep.pass = rep.worst_violation <= 1e-10;
    return rep;
  }

  Settings s_;
  std::ostream& log_;
  std::optional<Benchmark> bench_;
  std::optional<SynthesisResult> synth_;
  std::optional<StableOperatorParams> op_;
  std::optional<std::vector<Trajectory>> runs_;
};

}  // namespace

int run_pipeline(const nlohmann::json& config, const PipelineOverrides& overrides, std::ostream* log) {
  std::ostream& out = log ? *log : std::cerr;
  Settings s;
  try {
    s = parse_settings(config, overrides);
  } catch (const Error& e) {
    out << "config error: " << e.what() << "\n";
    return kExitConfig;
  }
  try {
    return Pipeline(std::move(s), out).run();
  } catch (const StageError& e) {
    out << "error: " << e.message << "\n";
    return e.code;
  } catch (const std::exception& e) {
    // Output directory problems.
    out << "error: " << e.what() << "\n";
    return kExitConfig;
  }
}

int run_pipeline(const std::string& config_path, const PipelineOverrides& overrides, std::ostream* log) {
  nlohmann::json config;
  try {
    config = read_json(config_path);
  } catch (const Error& e) {
    (log ? *log : std::cerr) << "config error: " << e.what() << "\n";
    return kExitConfig;
  }
  return run_pipeline(config, overrides, log);
}

}  // namespace rnnpb

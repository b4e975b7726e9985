#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <sstream>

#include "rnnpb/bench.hpp"
#include "rnnpb/errors.hpp"
#include "rnnpb/trajectory.hpp"
#include "support.hpp"

using namespace rnnpb;
using namespace rnnpb::testing;

namespace {

Trajectory random_trajectory(int T, int n, int m, int ny, std::uint64_t seed) {
  Rng rng = substream(seed, 0);
  Trajectory t;
  for (int k = 0; k < T; ++k) {
    t.x.push_back(1e3 * sample_gaussian(rng, n));
    t.u.push_back(sample_gaussian(rng, m) / 7.0);
    t.y.push_back(sample_gaussian(rng, ny) * 1e-9);
    t.u_b.push_back(sample_gaussian(rng, m));
    t.u_tilde.push_back(sample_gaussian(rng, m));
    t.w.push_back(sample_gaussian(rng, n) * 1e-300);
    t.w_e.push_back(Vec::Zero(n));
  }
  return t;
}

int count_columns(const std::string& line) { return 1 + static_cast<int>(std::count(line.begin(), line.end(), ',')); }

}  // namespace

TEST_CASE("generate_benchmark: identical bytes for the same seed") {
  const BenchmarkSpec spec = BenchmarkSpec::random_instance(5, 4);
  CHECK(to_json(generate_benchmark(spec)).dump() == to_json(generate_benchmark(spec)).dump());
  CHECK(to_json(generate_benchmark(spec)).dump() !=
        to_json(generate_benchmark(BenchmarkSpec::random_instance(6, 4))).dump());
}

TEST_CASE("generate_benchmark: spectral radius target is met") {
  for (double rho : {0.8, 0.95}) {
    BenchmarkSpec spec = BenchmarkSpec::random_instance(3, 4);
    spec.spectral_radius = rho;
    const Benchmark b = generate_benchmark(spec);
    const double r = Eigen::EigenSolver<Mat>(b.model.A(), false).eigenvalues().cwiseAbs().maxCoeff();
    CHECK(std::abs(r - rho) <= 1e-9);
  }
}

TEST_CASE("generate_benchmark: equilibrium strictly inside both polytopes") {
  for (std::uint64_t s = 1; s <= 8; ++s) {
    const Benchmark b = generate_benchmark(BenchmarkSpec::random_instance(s, 2 + static_cast<int>(s % 3)));
    CHECK(b.constraints.strictly_admits(b.eq));
    CHECK(b.eq.residual <= 1e-10);
    for (Activation a : b.model.activations()) CHECK(a == Activation::Tanh);
  }
}

TEST_CASE("generate_benchmark: ph-like preset") {
  const Benchmark b = generate_benchmark(BenchmarkSpec::ph_like());
  CHECK(b.model.n() == 10);
  CHECK(b.model.nu() == 5);
  CHECK(b.model.m() == 1);
  CHECK(b.model.ny() == 1);
  CHECK(b.eq.u_bar(0) == ph::kInputEquilibrium);
  CHECK(b.eq.y_bar(0) == doctest::Approx(ph::kOutputTarget).epsilon(1e-10));
  CHECK(b.constraints.strictly_admits(b.eq));
  const nlohmann::json j = to_json(b);
  const auto& c = j.at("constraints");
  // [I; -I] u <= [hi; -lo]
  CHECK(c.at("b_u")[0].get<double>() == 17.0);
  CHECK(c.at("b_u")[1].get<double>() == -12.5);
  CHECK(c.at("b_y")[0].get<double>() == 9.13);
  CHECK(c.at("b_y")[1].get<double>() == -5.94);
  CHECK(b.constraints.Q_w0(0, 0) == doctest::Approx(1e4));
  CHECK(b.u_M == doctest::Approx(0.0912 * 2.25));
  REQUIRE(b.boost_box.has_value());
  CHECK((*b.boost_box)(0) == doctest::Approx(1.0 / b.u_M));
}

TEST_CASE("generate_benchmark: bad specs are rejected") {
  BenchmarkSpec s;
  s.preset = "nope";
  CHECK_THROWS_AS(generate_benchmark(s), InvalidInput);
  s = BenchmarkSpec{};
  s.n = 0;
  CHECK_THROWS_AS(generate_benchmark(s), InvalidInput);
}

TEST_CASE("benchmark JSON round trip") {
  const Benchmark b = generate_benchmark(BenchmarkSpec::random_instance(2, 3));
  const Benchmark back = benchmark_from_json(nlohmann::json::parse(to_json(b).dump()));
  CHECK(to_json(back).dump() == to_json(b).dump());
  const BenchmarkSpec spec = benchmark_spec_from_json(to_json(BenchmarkSpec::ph_like(7)));
  CHECK(spec.preset == "ph-like");
  CHECK(spec.seed == 7);
  CHECK(spec.n == 10);
  CHECK_THROWS_AS(benchmark_from_json(nlohmann::json::object()), InvalidInput);
}

TEST_CASE("trajectory CSV: header-only file for an empty run") {
  std::ostringstream out;
  write_trajectory_csv(Trajectory{}, 2, 1, 1, out);
  CHECK(out.str() == "k,x_1,x_2,u_1,y_1,ub_1,ubtilde_1,w_1,w_2\n");
  std::istringstream in(out.str());
  CHECK(parse_trajectory_csv(in).horizon() == 0);
}

TEST_CASE("trajectory CSV: column count") {
  for (auto [n, m, ny] : {std::tuple{1, 1, 1}, {3, 2, 1}, {10, 1, 2}}) {
    std::ostringstream out;
    write_trajectory_csv(random_trajectory(3, n, m, ny, 1), n, m, ny, out);
    std::istringstream in(out.str());
    std::string line;
    while (std::getline(in, line)) CHECK(count_columns(line) == 1 + 2 * n + 3 * m + ny);
  }
}

TEST_CASE("trajectory CSV: round trip is exact") {
  const Trajectory t = random_trajectory(25, 4, 2, 1, 2);
  std::ostringstream out;
  write_trajectory_csv(t, 4, 2, 1, out);
  std::istringstream in(out.str());
  const Trajectory back = parse_trajectory_csv(in);
  REQUIRE(back.horizon() == 25);
  double err = 0.0;
  for (int k = 0; k < 25; ++k) {
    err = std::max(err, (back.x[k] - t.x[k]).cwiseAbs().maxCoeff());
    err = std::max(err, (back.u[k] - t.u[k]).cwiseAbs().maxCoeff());
    err = std::max(err, (back.y[k] - t.y[k]).cwiseAbs().maxCoeff());
    err = std::max(err, (back.u_b[k] - t.u_b[k]).cwiseAbs().maxCoeff());
    err = std::max(err, (back.u_tilde[k] - t.u_tilde[k]).cwiseAbs().maxCoeff());
    err = std::max(err, (back.w[k] - t.w[k]).cwiseAbs().maxCoeff());
  }
  CHECK(err == 0.0);
}

TEST_CASE("trajectory CSV: files and malformed input") {
  const std::filesystem::path dir = std::filesystem::path(RNNPB_TEST_DIR) / "csv";
  std::filesystem::create_directories(dir);
  const Trajectory t = random_trajectory(4, 2, 1, 1, 3);
  export_trajectory(t, 2, 1, 1, (dir / "t.csv").string());
  CHECK(import_trajectory((dir / "t.csv").string()).x[3] == t.x[3]);
  CHECK_THROWS_AS(export_trajectory(t, 2, 1, 1, (dir / "missing" / "t.csv").string()), InvalidInput);
  CHECK_THROWS_AS(import_trajectory((dir / "none.csv").string()), InvalidInput);
  std::istringstream bad("k,x_1,u_1,y_1,ub_1,ubtilde_1,w_1\n0,1,2,3\n");
  CHECK_THROWS_AS(parse_trajectory_csv(bad), InvalidInput);
  std::istringstream junk("k,x_1,u_1,y_1,ub_1,ubtilde_1,w_1\n0,1,2,x,4,5,6\n");
  CHECK_THROWS_AS(parse_trajectory_csv(junk), InvalidInput);
}

TEST_CASE("trajectory: inconsistent lengths are rejected") {
  Trajectory t = random_trajectory(3, 2, 1, 1, 4);
  t.u.pop_back();
  CHECK_THROWS_AS(t.validate(), InvalidInput);
  std::ostringstream out;
  CHECK_THROWS_AS(write_trajectory_csv(t, 2, 1, 1, out), InvalidInput);
}

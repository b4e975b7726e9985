#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "rnnpb/model.hpp"

namespace rnnpb {

struct BenchmarkSpec {
  // "random" or "ph-like".
  std::string preset = "random";
  std::uint64_t seed = 1;
  int n = 3, m = 1, nu = 2, ny = 1;
  // Spectral radius of the linearization A = A_x + B_sigma A_tilde at the origin.
  double spectral_radius = 0.9;
  double b_sigma_scale = 0.3;
  double b_tilde_scale = 0.1;
  // U = u_bar +- u_half_width, Y = y_bar +- y_half_width (random preset).
  double u_half_width = 2.0;
  double y_half_width = 2.0;
  // ||w|| <= w_bound, i.e. Q_w0 = I / w_bound^2.
  double w_bound = 0.02;
  // Random preset: designer boost box of half width boost_fraction *
  // u_half_width; <= 0 leaves the box to the input-polytope initialisation.
  double boost_fraction = 0.05;
  double u_bar = 0.5;
  int max_attempts = 10;

  static BenchmarkSpec ph_like(std::uint64_t seed = 2024);
  static BenchmarkSpec random_instance(std::uint64_t seed, int n);
};

struct Benchmark {
  RnnModel model;
  Equilibrium eq;
  ConstraintSets constraints;
  // Designer box diagonal; empty means "initialise from the input polytope".
  std::optional<Vec> boost_box;
  // Boost magnitude used by the loss penalty, in input units.
  double u_M = 0.0;
  int attempts = 1;
};

// Deterministic in the spec. Regenerates with a new sub-seed when no
// equilibrium is found or it is not strictly admissible; throws
// NoEquilibriumError after max_attempts.
Benchmark generate_benchmark(const BenchmarkSpec& spec);

nlohmann::json to_json(const BenchmarkSpec& s);
BenchmarkSpec benchmark_spec_from_json(const nlohmann::json& j);

nlohmann::json to_json(const Benchmark& b);
Benchmark benchmark_from_json(const nlohmann::json& j);

// Constants of the ph-like preset.
namespace ph {
constexpr double kInputLow = 12.5, kInputHigh = 17.0;
constexpr double kOutputLow = 5.94, kOutputHigh = 9.13;
constexpr double kDisturbanceBound = 0.01;
// Normalized boost magnitude; inputs are normalized by the half range.
constexpr double kBoostMagnitude = 0.0912;
constexpr double kInputScale = 0.5 * (kInputHigh - kInputLow);
constexpr double kOutputTarget = 7.0;
constexpr double kInputEquilibrium = 15.0;
}  // namespace ph

}  // namespace rnnpb

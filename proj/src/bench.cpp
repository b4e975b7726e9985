#include "rnnpb/bench.hpp"

#include <cmath>

#include "rnnpb/errors.hpp"
#include "rnnpb/sampling.hpp"

namespace rnnpb {

BenchmarkSpec BenchmarkSpec::ph_like(std::uint64_t seed) {
  BenchmarkSpec s;
  s.preset = "ph-like";
  s.seed = seed;
  s.n = 10;
  s.m = 1;
  s.nu = 5;
  s.ny = 1;
  s.spectral_radius = 0.9;
  s.b_sigma_scale = 0.1;
  s.w_bound = ph::kDisturbanceBound;
  s.u_bar = ph::kInputEquilibrium;
  return s;
}

BenchmarkSpec BenchmarkSpec::random_instance(std::uint64_t seed, int n) {
  BenchmarkSpec s;
  s.seed = seed;
  s.n = n;
  s.nu = 2;
  return s;
}

namespace {

Mat gaussian(Rng& rng, int rows, int cols) { return sample_gaussian(rng, rows * cols).reshaped(rows, cols); }

double spectral_radius(const Mat& A) {
  return A.size() ? Eigen::EigenSolver<Mat>(A, false).eigenvalues().cwiseAbs().maxCoeff() : 0.0;
}

// A with exactly the requested spectral radius, split as A_x + B_sigma A_tilde.
void linear_part(Rng& rng, const BenchmarkSpec& s, Mat& A_x, Mat& B_sigma, Mat& A_tilde) {
  Mat G = gaussian(rng, s.n, s.n);
  double r = spectral_radius(G);
  while (r == 0.0) {
    G = gaussian(rng, s.n, s.n);
    r = spectral_radius(G);
  }
  const Mat A = (s.spectral_radius / r) * G;
  B_sigma = (s.b_sigma_scale / std::sqrt(std::max(s.nu, 1))) * gaussian(rng, s.n, s.nu);
  A_tilde = gaussian(rng, s.nu, s.n) / std::sqrt(s.n);
  A_x = A - B_sigma * A_tilde;
}

struct Draft {
  std::optional<RnnModel> model;
  Vec x_guess;
};

Draft draft_random(Rng& rng, const BenchmarkSpec& s) {
  Mat A_x, B_sigma, A_tilde;
  linear_part(rng, s, A_x, B_sigma, A_tilde);
  Mat B_u = gaussian(rng, s.n, s.m);
  Mat B_tilde = s.b_tilde_scale * gaussian(rng, s.nu, s.m);
  Mat C = gaussian(rng, s.ny, s.n);
  Draft d;
  d.model.emplace(A_x, B_u, B_sigma, A_tilde, B_tilde, C, std::vector<Activation>(s.nu, Activation::Tanh));
  d.x_guess = Vec::Zero(s.n);
  return d;
}

// The equilibrium is placed by construction: pick x_bar and the
// preactivations v_eq, then solve for B_tilde, B_u and C so that
// (x_bar, u_bar) is a fixed point with C x_bar = y target.
Draft draft_ph(Rng& rng, const BenchmarkSpec& s) {
  if (s.m != 1 || s.ny != 1) throw InvalidInput("ph-like preset is single-input single-output");
  Mat A_x, B_sigma, A_tilde;
  linear_part(rng, s, A_x, B_sigma, A_tilde);
  const Vec x_bar = 2.0 * sample_unit_ball(rng, s.n, true);
  std::uniform_real_distribution<double> U(-0.3, 0.3);
  Vec v_eq(s.nu);
  for (int i = 0; i < s.nu; ++i) v_eq(i) = U(rng);
  const double u_bar = s.u_bar;
  Mat B_tilde = (v_eq - A_tilde * x_bar) / u_bar;
  Mat B_u = ((x_bar - A_x * x_bar) - B_sigma * v_eq.array().tanh().matrix()) / u_bar;
  Vec r = sample_gaussian(rng, s.n);
  r -= x_bar * (x_bar.dot(r) / x_bar.squaredNorm());
  Mat C = (ph::kOutputTarget / x_bar.squaredNorm() * x_bar + 0.5 * r).transpose();
  Draft d;
  d.model.emplace(A_x, B_u, B_sigma, A_tilde, B_tilde, C, std::vector<Activation>(s.nu, Activation::Tanh));
  d.x_guess = x_bar;
  return d;
}

}  // namespace

Benchmark generate_benchmark(const BenchmarkSpec& s) {
  if (s.n < 1 || s.m < 1 || s.nu < 0 || s.ny < 1) throw InvalidInput("benchmark: bad dimensions");
  if (!(s.spectral_radius > 0.0) || !(s.w_bound > 0.0) || s.max_attempts < 1)
    throw InvalidInput("benchmark: bad parameters");
  const bool ph_like = s.preset == "ph-like";
  if (!ph_like && s.preset != "random") throw InvalidInput("benchmark: unknown preset '" + s.preset + "'");

  double last_residual = 0.0;
  for (int attempt = 0; attempt < s.max_attempts; ++attempt) {
    Rng rng = substream(s.seed, static_cast<std::uint64_t>(attempt));
    Draft d = ph_like ? draft_ph(rng, s) : draft_random(rng, s);
    const RnnModel& model = *d.model;
    const Vec u_bar = Vec::Constant(s.m, s.u_bar);
    Equilibrium eq;
    try {
      eq = find_equilibrium(model, u_bar, d.x_guess);
    } catch (const NoEquilibriumError& e) {
      last_residual = e.last_residual();
      continue;
    }

    ConstraintSets c;
    if (ph_like) {
      box_polytope(Vec::Constant(1, ph::kInputLow), Vec::Constant(1, ph::kInputHigh), c.G_u, c.b_u);
      box_polytope(Vec::Constant(1, ph::kOutputLow), Vec::Constant(1, ph::kOutputHigh), c.G_y, c.b_y);
    } else {
      box_polytope(u_bar.array() - s.u_half_width, u_bar.array() + s.u_half_width, c.G_u, c.b_u);
      box_polytope(eq.y_bar.array() - s.y_half_width, eq.y_bar.array() + s.y_half_width, c.G_y, c.b_y);
    }
    c.Q_w0 = Mat::Identity(s.n, s.n) / (s.w_bound * s.w_bound);
    if (!c.strictly_admits(eq)) continue;

    Benchmark b{model, eq, c, std::nullopt, 0.0, attempt + 1};
    if (ph_like) {
      b.u_M = ph::kBoostMagnitude * ph::kInputScale;
      b.boost_box = Vec::Constant(1, 1.0 / b.u_M);
    } else if (s.boost_fraction > 0.0) {
      b.u_M = s.boost_fraction * s.u_half_width;
      b.boost_box = Vec::Constant(s.m, 1.0 / b.u_M);
    }
    return b;
  }
  throw NoEquilibriumError("benchmark: no admissible equilibrium after " + std::to_string(s.max_attempts) +
                               " attempts",
                           last_residual);
}

nlohmann::json to_json(const BenchmarkSpec& s) {
  return {{"preset", s.preset},
          {"seed", s.seed},
          {"n", s.n},
          {"m", s.m},
          {"nu", s.nu},
          {"ny", s.ny},
          {"spectral_radius", s.spectral_radius},
          {"b_sigma_scale", s.b_sigma_scale},
          {"b_tilde_scale", s.b_tilde_scale},
          {"u_half_width", s.u_half_width},
          {"y_half_width", s.y_half_width},
          {"w_bound", s.w_bound},
          {"boost_fraction", s.boost_fraction},
          {"u_bar", s.u_bar},
          {"max_attempts", s.max_attempts}};
}

BenchmarkSpec benchmark_spec_from_json(const nlohmann::json& j) {
  BenchmarkSpec s = j.value("preset", std::string("random")) == "ph-like"
                        ? BenchmarkSpec::ph_like(j.value("seed", std::uint64_t{2024}))
                        : BenchmarkSpec{};
  s.preset = j.value("preset", s.preset);
  s.seed = j.value("seed", s.seed);
  s.n = j.value("n", s.n);
  s.m = j.value("m", s.m);
  s.nu = j.value("nu", s.nu);
  s.ny = j.value("ny", s.ny);
  s.spectral_radius = j.value("spectral_radius", s.spectral_radius);
  s.b_sigma_scale = j.value("b_sigma_scale", s.b_sigma_scale);
  s.b_tilde_scale = j.value("b_tilde_scale", s.b_tilde_scale);
  s.u_half_width = j.value("u_half_width", s.u_half_width);
  s.y_half_width = j.value("y_half_width", s.y_half_width);
  s.w_bound = j.value("w_bound", s.w_bound);
  s.boost_fraction = j.value("boost_fraction", s.boost_fraction);
  s.u_bar = j.value("u_bar", s.u_bar);
  s.max_attempts = j.value("max_attempts", s.max_attempts);
  return s;
}

nlohmann::json to_json(const Benchmark& b) {
  nlohmann::json j = {{"model", to_json(b.model, b.eq)},
                      {"constraints", to_json(b.constraints)},
                      {"u_M", b.u_M},
                      {"attempts", b.attempts}};
  j["boost_box"] = b.boost_box ? vector_to_json(*b.boost_box) : nlohmann::json(nullptr);
  return j;
}

Benchmark benchmark_from_json(const nlohmann::json& j) {
  try {
    RnnModel model = model_from_json(j.at("model"));
    std::optional<Equilibrium> eq = equilibrium_from_json(model, j.at("model"));
    if (!eq) throw InvalidInput("benchmark: model carries no equilibrium");
    ConstraintSets c = constraints_from_json(j.at("constraints"));
    c.validate(model.m(), model.ny(), model.n());
    Benchmark b{model, *eq, c, std::nullopt, j.value("u_M", 0.0), j.value("attempts", 1)};
    if (j.contains("boost_box") && !j.at("boost_box").is_null()) b.boost_box = vector_from_json(j.at("boost_box"));
    return b;
  } catch (const nlohmann::json::exception& e) {
    throw InvalidInput(std::string("malformed benchmark JSON: ") + e.what());
  }
}

}  // namespace rnnpb

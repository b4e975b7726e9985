#pragma once

// Small plants and helpers shared by the unit tests.

#include <cmath>
#include <vector>

#include "rnnpb/bench.hpp"
#include "rnnpb/model.hpp"
#include "rnnpb/sampling.hpp"
#include "rnnpb/synthesis.hpp"

namespace rnnpb::testing {

inline Mat mat1(double v) { return Mat::Constant(1, 1, v); }
inline Vec vec1(double v) { return Vec::Constant(1, v); }

// x+ = a x + b u + w, no sigmoid channels.
inline RnnModel scalar_linear(double a, double b) {
  return RnnModel(mat1(a), mat1(b), Mat(1, 0), Mat(0, 1), Mat(0, 1), mat1(1.0), {});
}

// x+ = a_x x + b_u u + b_sigma tanh(a_t x + b_t u) + w, y = x
inline RnnModel scalar_tanh(double a_x, double b_u, double b_sigma, double a_t, double b_t) {
  return RnnModel(mat1(a_x), mat1(b_u), mat1(b_sigma), mat1(a_t), mat1(b_t), mat1(1.0),
                  {Activation::Tanh});
}

// |u - u_bar| <= du, |y - y_bar| <= dy, |w| <= w_max around the origin.
inline ConstraintSets scalar_box(double du, double dy, double w_max, double u_bar = 0.0,
                                 double y_bar = 0.0) {
  ConstraintSets c;
  box_polytope(vec1(u_bar - du), vec1(u_bar + du), c.G_u, c.b_u);
  box_polytope(vec1(y_bar - dy), vec1(y_bar + dy), c.G_y, c.b_y);
  c.Q_w0 = mat1(1.0 / (w_max * w_max));
  return c;
}

inline Mat random_matrix(Rng& rng, int rows, int cols) {
  return sample_gaussian(rng, rows * cols).reshaped(rows, cols);
}

inline RnnModel random_model(Rng& rng, int n, int m, int nu, int ny) {
  return RnnModel(0.3 * random_matrix(rng, n, n), random_matrix(rng, n, m), random_matrix(rng, n, nu),
                  random_matrix(rng, nu, n), random_matrix(rng, nu, m), random_matrix(rng, ny, n),
                  std::vector<Activation>(nu, Activation::Tanh));
}

inline double max_abs(const Vec& v) { return v.size() ? v.cwiseAbs().maxCoeff() : 0.0; }

inline double relative_error(const Vec& a, const Vec& b) {
  return (a - b).norm() / std::max({a.norm(), b.norm(), 1e-300});
}

// Synthesized scalar plant x+ = 1.1 x + u + w with loose constraints.
struct ScalarCase {
  RnnModel model = scalar_linear(1.1, 1.0);
  Equilibrium eq = make_equilibrium(model, vec1(0.0), vec1(0.0));
  ConstraintSets constraints = scalar_box(1.0, 2.0, 0.02);
  SynthesisResult result;
  ScalarCase() { result = synthesize(model, eq, constraints); }
};

inline const ScalarCase& scalar_case() {
  static const ScalarCase c;
  return c;
}

// Random benchmark with its synthesized gain, cached per seed.
struct BenchCase {
  Benchmark bench;
  SynthesisResult result;
};

inline BenchCase make_bench_case(const BenchmarkSpec& spec) {
  BenchCase c{generate_benchmark(spec), {}};
  SynthesisOptions o;
  o.boost_box = c.bench.boost_box;
  c.result = synthesize(c.bench.model, c.bench.eq, c.bench.constraints, o);
  return c;
}

inline const BenchCase& random_case() {
  static const BenchCase c = make_bench_case(BenchmarkSpec::random_instance(1, 3));
  return c;
}

}  // namespace rnnpb::testing

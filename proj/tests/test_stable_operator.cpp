#include <doctest.h>

#include "rnnpb/errors.hpp"
#include "rnnpb/stable_operator.hpp"
#include "support.hpp"

using namespace rnnpb;
using namespace rnnpb::testing;

namespace {

StableOperatorParams random_params(std::uint64_t seed, int n_in, int n_out, int n_xi) {
  StableOperatorParams p = init_operator(n_in, n_out, n_xi, seed, 0.9, 1.0);
  Rng rng = substream(seed, 99);
  p.C_m = 0.5 * random_matrix(rng, n_out, n_xi);
  p.D_m = 0.5 * random_matrix(rng, n_out, n_in);
  return p;
}

std::vector<Vec> random_inputs(std::uint64_t seed, int n, int T) {
  Rng rng = substream(seed, 7);
  std::vector<Vec> we;
  for (int k = 0; k < T; ++k) we.push_back(sample_gaussian(rng, n));
  return we;
}

// sum_k g[k]' out[k] for fixed cotangents
double objective(const StableOperatorParams& p, const std::vector<Vec>& we, const std::vector<Vec>& g) {
  std::vector<Vec> out;
  run_operator(p, we, &out);
  double v = 0.0;
  for (size_t k = 0; k < out.size(); ++k) v += g[k].dot(out[k]);
  return v;
}

double gain(const std::vector<Vec>& a) {
  double s = 0.0;
  for (const Vec& v : a) s += v.squaredNorm();
  return std::sqrt(s);
}

}  // namespace

TEST_CASE("operator: zero read-out gives zero output") {
  StableOperatorParams p = init_operator(3, 2, 8, 5);
  std::vector<Vec> out;
  run_operator(p, random_inputs(1, 3, 50), &out);
  for (const Vec& o : out) CHECK(o.norm() == 0.0);
}

TEST_CASE("operator: zero input keeps the state at rest") {
  const StableOperatorParams p = random_params(2, 3, 2, 6);
  StableOperator op(p);
  for (int k = 0; k < 20; ++k) CHECK(op.step(Vec::Zero(3)).norm() == 0.0);
  CHECK(op.state().norm() == 0.0);
}

TEST_CASE("operator: recurrence norm stays below rho for any W") {
  for (std::uint64_t s = 0; s < 50; ++s) {
    StableOperatorParams p = random_params(s, 2, 1, 1 + static_cast<int>(s % 9));
    Rng rng = substream(s, 3);
    p.W *= std::pow(10.0, 4.0 * (rng() / 1.8446744073709552e19) - 2.0);
    const Recurrence rec = effective_recurrence(p);
    const double norm = Eigen::JacobiSVD<Mat>(rec.A_M).singularValues()(0);
    CHECK(norm <= p.rho + 1e-12);
  }
}

TEST_CASE("spectral_norm: matches the SVD") {
  for (std::uint64_t s = 0; s < 20; ++s) {
    Rng rng = substream(51, s);
    const Mat W = random_matrix(rng, 7, 7);
    const SpectralNorm sn = spectral_norm(W);
    CHECK(sn.converged);
    CHECK(sn.value == doctest::Approx(Eigen::JacobiSVD<Mat>(W).singularValues()(0)).epsilon(1e-8));
  }
  CHECK(spectral_norm(Mat::Zero(3, 3)).value == 0.0);
}

TEST_CASE("gain_bound: closed forms") {
  StableOperatorParams p = init_operator(2, 1, 4, 3);
  CHECK(gain_bound(p) == 0.0);
  p.D_m = (Mat(1, 2) << 3.0, 4.0).finished();
  CHECK(gain_bound(p) == doctest::Approx(5.0));
  p.B_w.setZero();
  p.C_m.setOnes();
  CHECK(gain_bound(p) == doctest::Approx(5.0));
}

TEST_CASE("gain_bound: impulse response over a long horizon") {
  const StableOperatorParams p = random_params(4, 3, 2, 8);
  std::vector<Vec> we(1000, Vec::Zero(3));
  we[0] = (Vec(3) << 1.0, -2.0, 0.5).finished();
  std::vector<Vec> out;
  run_operator(p, we, &out);
  CHECK(gain(out) <= gain_bound(p) * we[0].norm());
}

TEST_CASE("gain_bound: empirical gain over random inputs") {
  const StableOperatorParams p = random_params(5, 2, 2, 10);
  const double bound = gain_bound(p);
  for (std::uint64_t s = 0; s < 100; ++s) {
    const std::vector<Vec> we = random_inputs(s, 2, 60);
    std::vector<Vec> out;
    run_operator(p, we, &out);
    CHECK(gain(out) <= bound * gain(we));
  }
}

TEST_CASE("adjoint: zero cotangents give zero gradients") {
  const StableOperatorParams p = random_params(6, 3, 2, 5);
  const std::vector<Vec> we = random_inputs(6, 3, 5);
  const OperatorTape tape = run_operator(p, we);
  const OperatorGradients g = operator_adjoint(p, tape, std::vector<Vec>(5, Vec::Zero(2)));
  CHECK(g.flatten().norm() == 0.0);
}

TEST_CASE("adjoint: central differences on a 5-step rollout") {
  const StableOperatorParams p = random_params(7, 3, 2, 5);
  const std::vector<Vec> we = random_inputs(7, 3, 5);
  const std::vector<Vec> g = random_inputs(8, 2, 5);
  const Vec grad = operator_adjoint(p, run_operator(p, we), g).flatten();
  const Vec theta = p.flatten();
  Vec fd(theta.size());
  const double h = 1e-6;
  for (Eigen::Index i = 0; i < theta.size(); ++i) {
    StableOperatorParams a = p, b = p;
    Vec ta = theta, tb = theta;
    ta(i) += h;
    tb(i) -= h;
    a.unflatten(ta);
    b.unflatten(tb);
    fd(i) = (objective(a, we, g) - objective(b, we, g)) / (2 * h);
  }
  CHECK(relative_error(grad, fd) <= 1e-5);
}

TEST_CASE("adjoint: blocked state read-out leaves W and B_w without gradient") {
  StableOperatorParams p = random_params(9, 2, 1, 4);
  p.C_m.setZero();
  const std::vector<Vec> we = random_inputs(9, 2, 6);
  const std::vector<Vec> g = random_inputs(10, 1, 6);
  const OperatorGradients grads = operator_adjoint(p, run_operator(p, we), g);
  CHECK(grads.W.norm() == 0.0);
  CHECK(grads.B_w.norm() == 0.0);
  // D_m gradient is sum_k g[k] we[k]'
  Mat expected = Mat::Zero(1, 2);
  for (int k = 0; k < 6; ++k) expected += g[k] * we[k].transpose();
  CHECK((grads.D_m - expected).norm() <= 1e-14);
}

TEST_CASE("adjoint: the normalization path alone matches differences") {
  // out depends on W only through A_M = rho W / ||W||: scaling W leaves it fixed
  const StableOperatorParams p = random_params(11, 2, 1, 4);
  const std::vector<Vec> we = random_inputs(11, 2, 6);
  const std::vector<Vec> g = random_inputs(12, 1, 6);
  const OperatorGradients grads = operator_adjoint(p, run_operator(p, we), g);
  const Vec flat_W = grads.W.reshaped();
  CHECK(std::abs(flat_W.dot(p.W.reshaped())) <= 1e-6 * flat_W.norm() * p.W.norm());
  const double h = 1e-6;
  Rng rng = substream(13, 0);
  const Mat dir = random_matrix(rng, 4, 4);
  StableOperatorParams a = p, b = p;
  a.W += h * dir;
  b.W -= h * dir;
  const double fd = (objective(a, we, g) - objective(b, we, g)) / (2 * h);
  CHECK(std::abs(fd - (grads.W.array() * dir.array()).sum()) <= 1e-5 * std::max(1.0, std::abs(fd)));
}

TEST_CASE("params: flatten round trip, validation and JSON") {
  StableOperatorParams p = random_params(14, 3, 2, 4);
  CHECK(p.num_parameters() == 16 + 12 + 8 + 6);
  StableOperatorParams q = p;
  q.unflatten(p.flatten());
  CHECK(q.flatten() == p.flatten());
  CHECK_THROWS_AS(q.unflatten(Vec::Zero(3)), InvalidInput);
  const StableOperatorParams r = operator_from_json(nlohmann::json::parse(to_json(p).dump()));
  CHECK(r.flatten() == p.flatten());
  CHECK(r.rho == p.rho);
  StableOperatorParams bad = p;
  bad.rho = 1.0;
  CHECK_THROWS_AS(bad.validate(), InvalidInput);
}

TEST_CASE("init_operator is deterministic in the seed") {
  CHECK(init_operator(3, 1, 8, 42).flatten() == init_operator(3, 1, 8, 42).flatten());
  CHECK(init_operator(3, 1, 8, 42).flatten() != init_operator(3, 1, 8, 43).flatten());
}

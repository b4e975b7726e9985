#include <doctest.h>

#include <algorithm>

#include "rnnpb/errors.hpp"
#include "rnnpb/synthesis.hpp"
#include "support.hpp"

using namespace rnnpb;
using namespace rnnpb::testing;

namespace {

Equilibrium at(const RnnModel& model, double u_bar) {
  return find_equilibrium(model, Vec::Constant(model.m(), u_bar), Vec::Zero(model.n()));
}

int count_prefix(const ConicProblem& P, const std::string& prefix) {
  return static_cast<int>(std::count_if(P.lmis().begin(), P.lmis().end(), [&](const LmiConstraint& l) {
    return l.name.rfind(prefix, 0) == 0;
  }));
}

// Bisection on 1 - tanh'(v) = tanh(v)^2 = 1/h.
double vbar_bisection(double h) {
  double lo = 0.0, hi = 50.0;
  for (int i = 0; i < 200; ++i) {
    const double mid = 0.5 * (lo + hi);
    (q_deriv(Activation::Tanh, mid) <= 1.0 / h ? lo : hi) = mid;
  }
  return 0.5 * (lo + hi);
}

double closed_loop_radius(const RnnModel& model, const Mat& K) {
  const Mat Acl = model.A() + model.B() * K;
  return Eigen::EigenSolver<Mat>(Acl, false).eigenvalues().cwiseAbs().maxCoeff();
}

}  // namespace

TEST_CASE("init_boost_box: one input centred in [-1, 1]") {
  const RnnModel model = scalar_linear(0.5, 1.0);
  const BoostBox box = init_boost_box(scalar_box(1.0, 1.0, 0.1), make_equilibrium(model, vec1(0.0), vec1(0.0)));
  CHECK(box.g_b(0) == doctest::Approx(1.0).epsilon(1e-12));
}

TEST_CASE("init_boost_box: off-centre equilibrium binds on the nearer face") {
  const RnnModel model = scalar_linear(0.5, 1.0);
  const Equilibrium eq = make_equilibrium(model, vec1(1.0), vec1(0.5));
  ConstraintSets c = scalar_box(1.0, 10.0, 0.1);
  const BoostBox box = init_boost_box(c, eq);
  CHECK(box.g_b(0) == doctest::Approx(2.0).epsilon(1e-12));
  CHECK(box.fits_inside(c, eq.u_bar));
}

TEST_CASE("init_boost_box: decoupled rows") {
  const RnnModel model(Mat::Identity(2, 2) * 0.5, Mat::Identity(2, 2), Mat(2, 0), Mat(0, 2), Mat(0, 2),
                       Mat::Identity(1, 2), {});
  ConstraintSets c;
  box_polytope(Vec::Constant(2, -1.0), Vec::Constant(2, 1.0), c.G_u, c.b_u);
  box_polytope(Vec::Constant(1, -1.0), Vec::Constant(1, 1.0), c.G_y, c.b_y);
  c.Q_w0 = Mat::Identity(2, 2);
  const BoostBox box = init_boost_box(c, make_equilibrium(model, Vec::Zero(2), Vec::Zero(2)));
  CHECK((box.g_b - Vec::Ones(2)).norm() <= 1e-10);
}

TEST_CASE("init_boost_box: equilibrium on the boundary of U is rejected") {
  const RnnModel model = scalar_linear(0.5, 1.0);
  const Equilibrium eq = make_equilibrium(model, vec1(2.0), vec1(1.0));
  CHECK_THROWS_AS(init_boost_box(scalar_box(1.0, 10.0, 0.1), eq), InfeasibleEquilibrium);
  CHECK_THROWS_AS(synthesize(model, eq, scalar_box(1.0, 10.0, 0.1)), InfeasibleEquilibrium);
}

TEST_CASE("compute_vbar: tanh closed form and bisection") {
  CHECK(std::isinf(compute_vbar(Activation::Tanh, 1.0)));
  CHECK(compute_vbar(Activation::Tanh, 4.0) == doctest::Approx(0.5493061443340549).epsilon(1e-12));
  CHECK(compute_vbar(Activation::Tanh, 2.0) == doctest::Approx(0.8813735870195430).epsilon(1e-12));
  for (double h : {1.5, 2.0, 4.0, 10.0, 100.0}) {
    const double v = compute_vbar(Activation::Tanh, h);
    CHECK(std::abs(v - std::atanh(1.0 / std::sqrt(h))) <= 1e-9);
    CHECK(std::abs(v - vbar_bisection(h)) <= 1e-9);
  }
  CHECK_THROWS_AS(compute_vbar(Activation::Tanh, 0.5), InvalidInput);
}

TEST_CASE("compute_vbar: scaled atan satisfies its defining equality") {
  for (double h : {1.5, 3.0, 20.0}) {
    const double v = compute_vbar(Activation::ScaledAtan, h);
    CHECK(q_deriv(Activation::ScaledAtan, v) == doctest::Approx(1.0 / h).epsilon(1e-9));
  }
}

TEST_CASE("assemble_lmis: no sigmoid channels") {
  const RnnModel model = scalar_linear(1.1, 1.0);
  const Equilibrium eq = make_equilibrium(model, vec1(0.0), vec1(0.0));
  const ConstraintSets c = scalar_box(1.0, 2.0, 0.02);
  const AssembledLmis l = assemble_lmis(model, eq, c, init_boost_box(c, eq), Vec(0), 1.0);
  CHECK(count_prefix(l.problem, "dissipation") == 1);
  CHECK(count_prefix(l.problem, "disturbance") == 1);
  CHECK(count_prefix(l.problem, "level") == 1);
  CHECK(count_prefix(l.problem, "locality") == 0);
  CHECK(count_prefix(l.problem, "output") == 2);
  CHECK(count_prefix(l.problem, "input") == 2);
  // state, disturbance+boost, and successor blocks only
  CHECK(l.problem.lmis()[0].dim == 1 + 2 + 1);
}

TEST_CASE("assemble_lmis: block counts follow the polytopes and the active set") {
  Rng rng = substream(21, 0);
  const RnnModel model = random_model(rng, 3, 2, 4, 2);
  const Equilibrium eq = at(model, 0.0);
  ConstraintSets c;
  Mat G_u(3, 2);
  G_u << 1, 0, 0, 1, -1, -1;
  c.G_u = G_u;
  c.b_u = Vec::Ones(3);
  box_polytope(Vec::Constant(2, -5.0), Vec::Constant(2, 5.0), c.G_y, c.b_y);
  c.Q_w0 = Mat::Identity(3, 3) * 100.0;
  const BoostBox box = init_boost_box(c, eq);

  const AssembledLmis global = assemble_lmis(model, eq, c, box, Vec::Ones(4), 1.0);
  CHECK(global.active.empty());
  CHECK(count_prefix(global.problem, "locality") == 0);
  CHECK(count_prefix(global.problem, "input") == 3);
  CHECK(count_prefix(global.problem, "output") == 4);

  Vec h(4);
  h << 1.0, 2.0, 4.0, 1.0;
  const AssembledLmis local = assemble_lmis(model, eq, c, box, h, 2.0);
  CHECK(local.active == std::vector<int>{1, 2});
  CHECK(count_prefix(local.problem, "locality") == 2);
  CHECK(std::isinf(local.vbar(0)));
  CHECK(local.vbar(2) == doctest::Approx(compute_vbar(Activation::Tanh, 4.0)));
}

TEST_CASE("assemble_lmis: locality beyond the equilibrium preactivation is refused") {
  // v_eq = 1 while vbar(100) ~ 0.1
  const RnnModel model = scalar_tanh(0.5, 1.0, 0.1, 0.0, 1.0);
  const Equilibrium eq = find_equilibrium(model, vec1(1.0), vec1(0.0));
  REQUIRE(eq.v_bar(0) == doctest::Approx(1.0));
  const ConstraintSets c = scalar_box(1.0, 10.0, 0.02, 1.0, eq.y_bar(0));
  CHECK_THROWS_AS(assemble_lmis(model, eq, c, init_boost_box(c, eq), vec1(100.0), 1.0), LocalityViolation);
}

TEST_CASE("synthesize: scalar linear plant is stabilized without localisation") {
  const ScalarCase& s = scalar_case();
  const SynthesisResult& r = s.result;
  CHECK(r.global_flag);
  // gamma_s = 1 is feasible only on the boundary; one level step is expected
  CHECK(r.rounds <= 1);
  CHECK(r.gamma_s <= 2.0);
  CHECK(std::abs(1.1 + r.K(0, 0)) < 1.0);
  for (const auto& [name, value] : r.residuals) CHECK_MESSAGE(value >= -1e-7, name);
  // the Lyapunov decrease by hand: P (1.1 + K)^2 - P < 0
  const double acl = 1.1 + r.K(0, 0);
  CHECK(r.P_s(0, 0) * acl * acl < r.P_s(0, 0));
}

TEST_CASE("synthesize: unstabilizable plant is reported infeasible") {
  const RnnModel model = scalar_linear(2.0, 0.0);
  const Equilibrium eq = make_equilibrium(model, vec1(0.0), vec1(0.0));
  SynthesisOptions o;
  o.max_rounds = 4;
  o.max_restarts = 1;
  CHECK_THROWS_AS(synthesize(model, eq, scalar_box(1.0, 2.0, 0.02), o), SynthesisFailed);
}

TEST_CASE("synthesize: saturating actuator needs the regional result") {
  // x+ = 1.2 x + tanh(u): saturation (slope 0) leaves the plant unstable, so
  // no gain works for the whole sector and some h_i must grow past 1.
  const RnnModel model = scalar_tanh(1.2, 0.0, 1.0, 0.0, 1.0);
  const Equilibrium eq = make_equilibrium(model, vec1(0.0), vec1(0.0));
  const ConstraintSets c = scalar_box(1.0, 2.0, 0.005);
  const SynthesisResult r = synthesize(model, eq, c);
  CHECK_FALSE(r.global_flag);
  CHECK(r.H_s(0) > 1.0);
  REQUIRE(r.active.size() == 1);
  CHECK(std::isfinite(r.vbar(0)));
  CHECK(r.residuals.at("locality_margin") >= 0.0);
  for (const auto& [name, value] : r.residuals) CHECK_MESSAGE(value >= -1e-7, name);
  bool locality_block = false;
  for (const auto& [name, value] : r.block_residuals) locality_block |= name.rfind("locality[", 0) == 0;
  CHECK(locality_block);
  CHECK(closed_loop_radius(model, r.K) < 1.0);
}

TEST_CASE("synthesize: random benchmark yields a stabilizing gain") {
  const BenchCase& c = random_case();
  for (const auto& [name, value] : c.result.residuals) CHECK_MESSAGE(value >= -1e-7, name);
  CHECK(closed_loop_radius(c.bench.model, c.result.K) < 1.0);
  CHECK(c.result.boost_box.fits_inside(c.bench.constraints, c.bench.eq.u_bar));
}

TEST_CASE("synthesis JSON round trip") {
  const SynthesisResult& r = scalar_case().result;
  const SynthesisResult back = synthesis_from_json(nlohmann::json::parse(to_json(r).dump()));
  CHECK(back.K == r.K);
  CHECK(back.P_s == r.P_s);
  CHECK(back.gamma_s == r.gamma_s);
  CHECK(back.boost_box.g_b == r.boost_box.g_b);
  CHECK(back.global_flag == r.global_flag);
}

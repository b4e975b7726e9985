#include <doctest.h>

#include "rnnpb/errors.hpp"
#include "rnnpb/model.hpp"
#include "support.hpp"

using namespace rnnpb;
using namespace rnnpb::testing;

TEST_CASE("step: zero state, input and disturbance map to zero") {
  Rng rng = substream(11, 0);
  const RnnModel model = random_model(rng, 4, 2, 3, 1);
  CHECK(step(model, Vec::Zero(4), Vec::Zero(2), Vec::Zero(4)).norm() == 0.0);
}

TEST_CASE("step: sigmoid and sector forms agree") {
  for (Activation act : {Activation::Tanh, Activation::ScaledAtan}) {
    for (std::uint64_t s = 0; s < 20; ++s) {
      Rng rng = substream(12, s);
      RnnModel base = random_model(rng, 5, 2, 4, 2);
      RnnModel model(base.A_x(), base.B_u(), base.B_sigma(), base.A_tilde(), base.B_tilde(), base.C(),
                     std::vector<Activation>(4, act));
      const Vec x = 2.0 * sample_gaussian(rng, 5), u = sample_gaussian(rng, 2), w = sample_gaussian(rng, 5);
      const Vec a = step(model, x, u, w), b = step_sector_form(model, x, u, w);
      CHECK(relative_error(a, b) <= 1e-12);
    }
  }
}

TEST_CASE("step: without sigmoid channels the model is linear") {
  Rng rng = substream(13, 0);
  const Mat A = random_matrix(rng, 3, 3), B = random_matrix(rng, 3, 2);
  const RnnModel model(A, B, Mat::Zero(3, 2), random_matrix(rng, 2, 3), random_matrix(rng, 2, 2),
                       Mat::Identity(1, 3), {Activation::Tanh, Activation::Tanh});
  const Vec x = sample_gaussian(rng, 3), u = sample_gaussian(rng, 2), w = sample_gaussian(rng, 3);
  CHECK((step(model, x, u, w) - (A * x + B * u + w)).norm() <= 1e-14);
}

TEST_CASE("model: inconsistent shapes are rejected") {
  CHECK_THROWS_AS(RnnModel(Mat::Zero(2, 2), Mat::Zero(3, 1), Mat::Zero(2, 1), Mat::Zero(1, 2), Mat::Zero(1, 1),
                           Mat::Zero(1, 2), {Activation::Tanh}),
                  InvalidInput);
  CHECK_THROWS_AS(RnnModel(Mat::Zero(2, 2), Mat::Zero(2, 1), Mat::Zero(2, 1), Mat::Zero(1, 2), Mat::Zero(1, 1),
                           Mat::Zero(1, 2), {}),
                  InvalidInput);
}

TEST_CASE("activations: q' = 1 - sigma' properties") {
  CHECK(q_deriv(Activation::Tanh, 0.0) == 0.0);
  CHECK(q_deriv(Activation::Tanh, std::atanh(0.5)) == doctest::Approx(0.25).epsilon(1e-14));
  for (Activation act : {Activation::Tanh, Activation::ScaledAtan}) {
    CHECK(sigma(act, 0.0) == 0.0);
    CHECK(sigma_prime(act, 0.0) == doctest::Approx(1.0));
    // sigma' against central differences
    for (double v : {-3.0, -0.7, 0.2, 1.5}) {
      const double h = 1e-5;
      const double fd = (sigma(act, v + h) - sigma(act, v - h)) / (2 * h);
      CHECK(std::abs(fd - sigma_prime(act, v)) <= 1e-9);
      CHECK(std::abs(sigma(act, v)) <= 1.0);
    }
    // even, nondecreasing in |v|, approaching 1
    double prev = -1.0;
    for (int i = 0; i <= 400; ++i) {
      const double v = 0.05 * i;
      const double q = q_deriv(act, v);
      CHECK(q == doctest::Approx(q_deriv(act, -v)).epsilon(1e-15));
      CHECK(q >= prev);
      CHECK(q <= 1.0);
      prev = q;
    }
    CHECK(q_deriv(act, 1e3) > 0.999);
  }
}

TEST_CASE("activation tags round trip") {
  for (Activation act : {Activation::Tanh, Activation::ScaledAtan})
    CHECK(activation_from_string(to_string(act)) == act);
  CHECK_THROWS_AS(activation_from_string("relu"), InvalidInput);
}

TEST_CASE("find_equilibrium: homogeneous case sits at the origin") {
  Rng rng = substream(14, 0);
  const RnnModel model = random_model(rng, 4, 1, 2, 1);
  const Equilibrium eq = find_equilibrium(model, Vec::Zero(1), Vec::Zero(4));
  CHECK(eq.x_bar.norm() <= 1e-14);
  CHECK(eq.residual <= 1e-10);
}

TEST_CASE("find_equilibrium: linear closed form") {
  Rng rng = substream(15, 0);
  const Mat A = 0.5 * random_matrix(rng, 3, 3) / 3.0, B = random_matrix(rng, 3, 2);
  const RnnModel model(A, B, Mat::Zero(3, 1), Mat::Zero(1, 3), Mat::Zero(1, 2), Mat::Identity(3, 3),
                       {Activation::Tanh});
  const Vec u_bar = sample_gaussian(rng, 2);
  const Equilibrium eq = find_equilibrium(model, u_bar, Vec::Zero(3));
  const Vec expected = (Mat::Identity(3, 3) - A).lu().solve(B * u_bar);
  CHECK((eq.x_bar - expected).norm() <= 1e-10);
  CHECK((eq.y_bar - expected).norm() <= 1e-10);
}

TEST_CASE("find_equilibrium: scalar plant against bisection") {
  // x = 0.5 x + 1 + 0.1 tanh(x)
  const RnnModel model = scalar_tanh(0.5, 1.0, 0.1, 1.0, 0.0);
  const Equilibrium eq = find_equilibrium(model, vec1(1.0), vec1(0.0));
  auto r = [](double x) { return x - 0.5 * x - 1.0 - 0.1 * std::tanh(x); };
  double lo = 0.0, hi = 10.0;
  for (int i = 0; i < 200; ++i) {
    const double mid = 0.5 * (lo + hi);
    (r(mid) < 0 ? lo : hi) = mid;
  }
  CHECK(std::abs(r(eq.x_bar(0))) < 1e-10);
  CHECK(eq.x_bar(0) == doctest::Approx(0.5 * (lo + hi)).epsilon(1e-12));
}

TEST_CASE("find_equilibrium: a plant without a fixed point reports failure") {
  // x = x + 1 has no solution
  const RnnModel model = scalar_linear(1.0, 1.0);
  CHECK_THROWS_AS(find_equilibrium(model, vec1(1.0), vec1(0.0)), NoEquilibriumError);
}

TEST_CASE("constraints: strict admission and validation") {
  const RnnModel model = scalar_linear(0.5, 1.0);
  const ConstraintSets c = scalar_box(1.0, 1.0, 0.1);
  c.validate(1, 1, 1);
  CHECK(c.strictly_admits(make_equilibrium(model, vec1(0.0), vec1(0.0))));
  // u on the face of U
  CHECK_FALSE(c.strictly_admits(make_equilibrium(model, vec1(0.0), vec1(1.0))));
  CHECK_THROWS_AS(c.validate(2, 1, 1), InvalidInput);
}

TEST_CASE("model JSON round trip is exact") {
  Rng rng = substream(16, 0);
  const RnnModel model = random_model(rng, 3, 2, 2, 1);
  const Equilibrium eq = find_equilibrium(model, Vec::Zero(2), Vec::Zero(3));
  const nlohmann::json j = to_json(model, eq);
  const RnnModel back = model_from_json(nlohmann::json::parse(j.dump()));
  CHECK(back.A_x() == model.A_x());
  CHECK(back.B_tilde() == model.B_tilde());
  CHECK(back.C() == model.C());
  const auto eq2 = equilibrium_from_json(back, j);
  REQUIRE(eq2.has_value());
  CHECK(eq2->x_bar == eq.x_bar);
}

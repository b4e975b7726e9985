#pragma once

#include <cstdint>
#include <limits>
#include <map>
#include <string>

#include "rnnpb/model.hpp"
#include "rnnpb/synthesis.hpp"
#include "rnnpb/trajectory.hpp"

namespace rnnpb {

constexpr double kInfinity = std::numeric_limits<double>::infinity();

// {v : (v - center)' shape (v - center) <= 1}
struct Ellipsoid {
  Mat shape;
  Vec center;

  Ellipsoid(Mat shape, Vec center);
  // (v - center)' shape (v - center)
  double level(const Vec& v) const;
  bool contains(const Vec& v, double tol = 0.0) const { return level(v) <= 1.0 + tol; }
};

// The invariant set E(P_s / gamma_s) shifted to x_bar.
Ellipsoid invariant_set(const SynthesisResult& r, const Equilibrium& eq);

// l_p(w_e, u_b) -> (dx, du) gain certificate of the pre-stabilised loop.
struct StabilityCertificate {
  double p = 2.0;
  double a = 0.0;
  double kappa0 = 1.0;
  double kappa1 = 0.0;
  double sigma_x = 0.0;
  double sigma_ws = 0.0;
  double lambda_min_P = 0.0;
  double lambda_max_P = 0.0;
  // Induced Euclidean norm of K; the per-step norms are Euclidean.
  double K_norm = 0.0;
  double gain_x_we = 0.0;
  double gain_x_ub = 0.0;
  double gain_u_we = 0.0;
  double gain_u_ub = 0.0;

  double mu(double p) const;
};

// (1 / (1 - a^p))^(1/p), the l_p norm of (a^k)_{k>=0}; 1 for p = infinity.
double mu_p(double a, double p);

// Throws DegenerateCertificate when a~ = 1 - sigma_x / lambda_max(P_s) is not
// in [0, 1).
StabilityCertificate build_certificate(const SynthesisResult& r, double p);

nlohmann::json to_json(const StabilityCertificate& c);

struct CheckReport {
  std::string condition;
  bool pass = false;
  double worst_violation = 0.0;
  long samples = 0;
  std::uint64_t seed = 0;
  std::map<std::string, double> details;
  std::string warning;
};

nlohmann::json to_json(const CheckReport& r);

struct RpiCheckOptions {
  long samples = 10000;
  std::uint64_t seed = 1;
  int workers = 0;  // 0 = hardware concurrency
  double tolerance = 1e-9;
};

// Falsification test of robust invariance: steps the pre-stabilised loop from
// states on and inside E(P_s/gamma_s) + x_bar with w in E(Q_w0) and u_b in
// U_b, and reports the largest excess of the successor's level over 1.
// Half of the states are drawn on the boundary, where violations appear first.
CheckReport check_rpi_montecarlo(const RnnModel& model, const SynthesisResult& r,
                                 const Equilibrium& eq, const ConstraintSets& constraints,
                                 const RpiCheckOptions& options = {});

// Largest polytope residual max(G_u u - b_u, G_y y - b_y) along the run.
CheckReport check_constraints_along(const Trajectory& t, const ConstraintSets& c,
                                    double tolerance = 1e-9);

// Finite-horizon check of
//   ||dx||_p <= gain_x_we ||w_e||_p + gain_x_ub ||u_b||_p
//   ||du||_p <= gain_u_we ||w_e||_p + gain_u_ub ||u_b||_p
// with w_e = (dx(0), w(0), w(1), ...). worst_violation is the largest
// lhs - rhs, so a pass has it <= 0.
CheckReport check_lp_bound(const Trajectory& t, const Equilibrium& eq,
                           const StabilityCertificate& cert);

// (sum_k ||v_k||^p)^(1/p), or max_k ||v_k|| for p = infinity.
double sequence_norm(const std::vector<Vec>& v, double p, size_t begin = 0);

}  // namespace rnnpb

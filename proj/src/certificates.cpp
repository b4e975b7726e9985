#include "rnnpb/certificates.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "rnnpb/errors.hpp"
#include "rnnpb/sampling.hpp"

namespace rnnpb {

Ellipsoid::Ellipsoid(Mat shape_, Vec center_) : shape(std::move(shape_)), center(std::move(center_)) {
  if (shape.rows() != shape.cols() || shape.rows() != center.size())
    throw InvalidInput("ellipsoid: shape and center disagree");
  if (Eigen::LLT<Mat>(shape).info() != Eigen::Success)
    throw InvalidInput("ellipsoid: shape is not positive definite");
}

double Ellipsoid::level(const Vec& v) const {
  Vec d = v - center;
  return d.dot(shape * d);
}

Ellipsoid invariant_set(const SynthesisResult& r, const Equilibrium& eq) {
  return Ellipsoid(r.P_s / r.gamma_s, eq.x_bar);
}

double mu_p(double a, double p) {
  if (std::isinf(p)) return 1.0;
  return std::pow(1.0 / (1.0 - std::pow(a, p)), 1.0 / p);
}

double StabilityCertificate::mu(double q) const { return mu_p(a, q); }

StabilityCertificate build_certificate(const SynthesisResult& r, double p) {
  if (!(p >= 1.0)) throw InvalidInput("certificate: p must be in [1, inf]");
  StabilityCertificate c;
  c.p = p;
  Eigen::SelfAdjointEigenSolver<Mat> eP(r.P_s, Eigen::EigenvaluesOnly);
  c.lambda_min_P = eP.eigenvalues().minCoeff();
  c.lambda_max_P = eP.eigenvalues().maxCoeff();
  if (!(c.lambda_min_P > 0.0))
    throw DegenerateCertificate("certificate: P_s is not positive definite (lambda_min = " +
                                std::to_string(c.lambda_min_P) + ")");
  Mat PQP = r.P_s * r.Qtilde_sx * r.P_s;
  c.sigma_x = min_eigenvalue(0.5 * (PQP + PQP.transpose()));
  c.sigma_ws = Eigen::SelfAdjointEigenSolver<Mat>(r.Q_sws, Eigen::EigenvaluesOnly).eigenvalues().maxCoeff();
  const double a_tilde = 1.0 - c.sigma_x / c.lambda_max_P;
  if (!(a_tilde >= 0.0 && a_tilde < 1.0)) {
    std::ostringstream msg;
    msg << "certificate: decay factor " << a_tilde << " outside [0, 1): ";
    if (c.sigma_x <= 0.0)
      msg << "lambda_min(P_s Qtilde_sx P_s) = " << c.sigma_x << " is not positive";
    else
      msg << "lambda_min(P_s Qtilde_sx P_s) = " << c.sigma_x << " exceeds lambda_max(P_s) = "
          << c.lambda_max_P;
    throw DegenerateCertificate(msg.str());
  }
  c.a = std::sqrt(a_tilde);
  c.kappa0 = std::sqrt(c.lambda_max_P / c.lambda_min_P);
  c.kappa1 = std::sqrt(std::max(c.sigma_ws, 0.0) / c.lambda_min_P);
  c.K_norm = r.K.size() ? Eigen::JacobiSVD<Mat>(r.K).singularValues()(0) : 0.0;
  const double tail = c.kappa1 / (1.0 - c.a);
  c.gain_x_we = c.kappa0 * mu_p(c.a, p) + tail;
  c.gain_x_ub = tail;
  c.gain_u_we = c.K_norm * c.gain_x_we;
  c.gain_u_ub = c.K_norm * tail + 1.0;
  return c;
}

namespace {

nlohmann::json number(double v) {
  if (std::isfinite(v)) return v;
  return std::isnan(v) ? nlohmann::json("nan") : nlohmann::json(v > 0 ? "inf" : "-inf");
}

}  // namespace

nlohmann::json to_json(const StabilityCertificate& c) {
  return {{"p", number(c.p)},
          {"a", c.a},
          {"kappa0", c.kappa0},
          {"kappa1", c.kappa1},
          {"sigma_x", c.sigma_x},
          {"sigma_ws", c.sigma_ws},
          {"mu_p", c.mu(c.p)},
          {"K_norm", c.K_norm},
          {"gain_x_we", c.gain_x_we},
          {"gain_x_ub", c.gain_x_ub},
          {"gain_u_we", c.gain_u_we},
          {"gain_u_ub", c.gain_u_ub}};
}

nlohmann::json to_json(const CheckReport& r) {
  nlohmann::json j = {{"condition", r.condition},
                      {"pass", r.pass},
                      {"worst_violation", number(r.worst_violation)},
                      {"samples", r.samples},
                      {"seed", r.seed}};
  if (!r.details.empty()) {
    nlohmann::json d = nlohmann::json::object();
    for (const auto& [k, v] : r.details) d[k] = number(v);
    j["details"] = d;
  }
  if (!r.warning.empty()) j["warning"] = r.warning;
  return j;
}

CheckReport check_rpi_montecarlo(const RnnModel& model, const SynthesisResult& r,
                                 const Equilibrium& eq, const ConstraintSets& constraints,
                                 const RpiCheckOptions& options) {
  const Ellipsoid set = invariant_set(r, eq);
  const EllipsoidSampler draw_x(set.shape);
  const EllipsoidSampler draw_w(constraints.Q_w0);
  const long S = options.samples;

  // Fixed-size blocks keep the reduction independent of the worker count.
  constexpr long kBlock = 256;
  const int blocks = static_cast<int>((S + kBlock - 1) / kBlock);
  std::vector<double> worst(blocks, -kInfinity);
  std::vector<long> failures(blocks, 0);
  parallel_for(blocks, options.workers, [&](int b) {
    for (long i = b * kBlock; i < std::min(S, (b + 1) * kBlock); ++i) {
      Rng rng = substream(options.seed, static_cast<std::uint64_t>(i));
      Vec dx = draw_x(rng, i % 2 == 0);
      Vec w = draw_w(rng);
      Vec ub = sample_box(rng, r.boost_box.g_b);
      Vec x = eq.x_bar + dx;
      Vec u = eq.u_bar + r.K * dx + ub;
      double v = set.level(step(model, x, u, w)) - 1.0;
      worst[b] = std::max(worst[b], v);
      if (v > options.tolerance) ++failures[b];
    }
  });

  CheckReport rep;
  rep.condition = "rpi_invariance";
  rep.samples = S;
  rep.seed = options.seed;
  rep.worst_violation = S > 0 ? *std::max_element(worst.begin(), worst.end()) : 0.0;
  long fails = 0;
  for (long f : failures) fails += f;
  rep.details["failures"] = static_cast<double>(fails);
  rep.pass = fails == 0;
  return rep;
}

CheckReport check_constraints_along(const Trajectory& t, const ConstraintSets& c, double tolerance) {
  t.validate();
  CheckReport rep;
  rep.condition = "constraint_satisfaction";
  rep.samples = t.horizon();
  double worst_u = -kInfinity, worst_y = -kInfinity;
  for (int k = 0; k < t.horizon(); ++k) {
    if (c.G_u.rows()) worst_u = std::max(worst_u, (c.G_u * t.u[k] - c.b_u).maxCoeff());
    if (c.G_y.rows()) worst_y = std::max(worst_y, (c.G_y * t.y[k] - c.b_y).maxCoeff());
  }
  rep.details["input_residual"] = worst_u;
  rep.details["output_residual"] = worst_y;
  rep.worst_violation = std::max(worst_u, worst_y);
  if (t.horizon() == 0) rep.worst_violation = 0.0;
  rep.pass = rep.worst_violation <= tolerance;
  return rep;
}

double sequence_norm(const std::vector<Vec>& v, double p, size_t begin) {
  if (std::isinf(p)) {
    double m = 0.0;
    for (size_t k = begin; k < v.size(); ++k) m = std::max(m, v[k].norm());
    return m;
  }
  double s = 0.0;
  for (size_t k = begin; k < v.size(); ++k) s += std::pow(v[k].norm(), p);
  return std::pow(s, 1.0 / p);
}

CheckReport check_lp_bound(const Trajectory& t, const Equilibrium& eq, const StabilityCertificate& cert) {
  t.validate();
  const double p = cert.p;
  const int T = t.horizon();
  std::vector<Vec> dx(T), du(T), we;
  for (int k = 0; k < T; ++k) {
    dx[k] = t.x[k] - eq.x_bar;
    du[k] = t.u[k] - eq.u_bar;
  }
  if (T > 0) {
    we.reserve(T + 1);
    we.push_back(dx[0]);
    for (int k = 0; k < T; ++k) we.push_back(t.w[k]);
  }
  const double n_dx = sequence_norm(dx, p), n_du = sequence_norm(du, p);
  const double n_we = sequence_norm(we, p), n_ub = sequence_norm(t.u_b, p);
  const double rhs_x = cert.gain_x_we * n_we + cert.gain_x_ub * n_ub;
  const double rhs_u = cert.gain_u_we * n_we + cert.gain_u_ub * n_ub;

  CheckReport rep;
  rep.condition = std::isinf(p) ? "lp_bound_inf" : "lp_bound_" + std::to_string(static_cast<int>(p));
  rep.samples = T;
  rep.details = {{"norm_dx", n_dx}, {"norm_du", n_du}, {"norm_we", n_we}, {"norm_ub", n_ub},
                 {"bound_dx", rhs_x}, {"bound_du", rhs_u}};
  rep.worst_violation = std::max(n_dx - rhs_x, n_du - rhs_u);
  rep.pass = rep.worst_violation <= 0.0;

  // The finite horizon stands in for an infinite sequence only when the tail
  // has died out.
  if (!std::isinf(p) && T >= 10 && n_dx > 0.0) {
    const double tail = sequence_norm(dx, p, static_cast<size_t>(T - T / 10));
    if (std::pow(tail / n_dx, p) > 0.01) rep.warning = "last 10% of the horizon carries over 1% of ||dx||_p";
  }
  return rep;
}

}  // namespace rnnpb

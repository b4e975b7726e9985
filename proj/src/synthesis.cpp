#include "rnnpb/synthesis.hpp"

#include <cmath>
#include <limits>
#include <sstream>

#include "rnnpb/errors.hpp"

namespace rnnpb {

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

// Dense tableau simplex for max c'x s.t. A x <= b, x >= 0 with b >= 0, so the
// slack basis is feasible from the start. Bland's rule prevents cycling.
Vec packing_simplex(const Mat& A, const Vec& b, const Vec& c) {
  const int rows = static_cast<int>(A.rows());
  const int cols = static_cast<int>(A.cols());
  Mat T = Mat::Zero(rows + 1, cols + rows + 1);
  T.topLeftCorner(rows, cols) = A;
  T.block(0, cols, rows, rows) = Mat::Identity(rows, rows);
  T.topRightCorner(rows, 1) = b;
  T.bottomLeftCorner(1, cols) = -c.transpose();
  std::vector<int> basis(rows);
  for (int i = 0; i < rows; ++i) basis[i] = cols + i;

  const double eps = 1e-13;
  for (int iter = 0; iter < 10000; ++iter) {
    int enter = -1;
    for (int j = 0; j < cols + rows; ++j)
      if (T(rows, j) < -eps) {
        enter = j;
        break;
      }
    if (enter < 0) break;
    int leave = -1;
    double best = kInf;
    for (int i = 0; i < rows; ++i) {
      if (T(i, enter) > eps) {
        const double ratio = T(i, cols + rows) / T(i, enter);
        if (ratio < best - eps || (std::abs(ratio - best) <= eps && basis[i] < basis[leave])) {
          best = ratio;
          leave = i;
        }
      }
    }
    if (leave < 0) throw InvalidInput("boost-box LP is unbounded (an input channel is unconstrained)");
    T.row(leave) /= T(leave, enter);
    for (int i = 0; i <= rows; ++i)
      if (i != leave) T.row(i) -= T(i, enter) * T.row(leave);
    basis[leave] = enter;
  }
  Vec x = Vec::Zero(cols);
  for (int i = 0; i < rows; ++i)
    if (basis[i] < cols) x(basis[i]) = T(i, cols + rows);
  return x;
}

double squared(double v) { return v * v; }

}  // namespace

// --- BoostBox -----------------------------------------------------------------

bool BoostBox::contains(const Vec& u_b, double tol) const {
  if (u_b.size() != g_b.size()) return false;
  return ((g_b.array() * u_b.array()).abs() <= 1.0 + tol).all();
}

double BoostBox::support(const Eigen::RowVectorXd& row) const {
  return (row.cwiseAbs().transpose().array() / g_b.array()).sum();
}

bool BoostBox::fits_inside(const ConstraintSets& c, const Vec& u_bar, double tol) const {
  const int m = size();
  const Vec w = half_widths();
  for (long mask = 0; mask < (1L << m); ++mask) {
    Vec v(m);
    for (int j = 0; j < m; ++j) v(j) = (mask >> j & 1) ? w(j) : -w(j);
    if (((c.G_u * (u_bar + v) - c.b_u).array() > tol).any()) return false;
  }
  return true;
}

BoostBox init_boost_box(const ConstraintSets& constraints, const Equilibrium& eq) {
  const Vec b_bar = constraints.b_u - constraints.G_u * eq.u_bar;
  for (Eigen::Index i = 0; i < b_bar.size(); ++i) {
    if (!(b_bar(i) > 0.0)) {
      std::ostringstream os;
      os << "equilibrium input violates or touches input constraint row " << i
         << " (slack " << b_bar(i) << ")";
      throw InfeasibleEquilibrium(os.str());
    }
  }
  const Mat A = constraints.G_u.cwiseAbs();
  const int m = static_cast<int>(A.cols());
  Vec t = packing_simplex(A, b_bar, Vec::Ones(m));

  if ((t.array() <= 0.0).any()) {
    // Tie on the optimal face left a channel at zero width; blend towards the
    // largest uniform box, which stays feasible because the set is convex.
    const double uniform = (b_bar.array() / A.rowwise().sum().array()).minCoeff();
    t = (1.0 - 1e-3) * t + 1e-3 * Vec::Constant(m, uniform);
  }
  return BoostBox{t.cwiseInverse()};
}

// --- vbar ----------------------------------------------------------------------

double compute_vbar(Activation a, double h) {
  if (!(h >= 1.0)) throw InvalidInput("compute_vbar requires h >= 1");
  const double bound = 1.0 / h;
  if (bound >= 1.0) return kInf;  // q' < 1 everywhere
  double lo = 0.0;
  double hi = 1.0;
  while (q_deriv(a, hi) <= bound) {
    lo = hi;
    hi *= 2.0;
    if (hi > 1e300) return kInf;
  }
  // q' is even and nondecreasing in |v|; keep q'(lo) <= bound < q'(hi).
  while (hi - lo > 1e-13 * std::max(1.0, hi)) {
    const double mid = 0.5 * (lo + hi);
    if (mid <= lo || mid >= hi) break;
    if (q_deriv(a, mid) <= bound)
      lo = mid;
    else
      hi = mid;
  }
  return lo;
}

std::vector<int> active_channels(const Vec& h, double threshold) {
  std::vector<int> out;
  for (Eigen::Index i = 0; i < h.size(); ++i)
    if (h(i) > threshold) out.push_back(static_cast<int>(i));
  return out;
}

// --- assembly -------------------------------------------------------------------

AssembledLmis assemble_lmis(const RnnModel& model, const Equilibrium& eq,
                            const ConstraintSets& constraints, const BoostBox& box,
                            const Vec& h_s, double gamma_s, double index_threshold) {
  const int n = model.n();
  const int m = model.m();
  const int nu = model.nu();
  const int nw = n + m;
  constraints.validate(m, model.ny(), n);
  if (h_s.size() != nu) throw InvalidInput("H_s must have one entry per channel");
  if ((h_s.array() < 1.0).any()) throw InvalidInput("H_s must satisfy H_s >= I");
  if (!(gamma_s > 0.0)) throw InvalidInput("gamma_s must be positive");
  if (box.size() != m || (box.g_b.array() <= 0.0).any())
    throw InvalidInput("boost box must have m positive scalings");

  AssembledLmis out;
  out.gamma_s = gamma_s;
  out.h_s = h_s;
  out.active = active_channels(h_s, index_threshold);
  out.vbar = Vec::Constant(nu, kInf);
  for (int i : out.active) {
    out.vbar(i) = compute_vbar(model.activations()[i], h_s(i));
    if (out.vbar(i) < std::abs(eq.v_bar(i))) {
      std::ostringstream os;
      os << "locality condition fails on channel " << i << ": vbar " << out.vbar(i)
         << " < |v_eq| " << std::abs(eq.v_bar(i));
      throw LocalityViolation(os.str(), i);
    }
  }

  const Mat& A = model.A();
  const Mat& B = model.B();
  const Mat& Bq = model.B_q();
  const Mat& At = model.A_tilde();
  const Mat& Bt = model.B_tilde();
  const Mat In = Mat::Identity(n, n);
  const Mat Iw = Mat::Identity(nw, nw);

  Mat D_s(n, nw);
  D_s << In, B;
  Mat Dt_s = Mat::Zero(nu, nw);
  Dt_s.rightCols(m) = Bt;
  Mat Q0_ws = Mat::Zero(nw, nw);
  Q0_ws.topLeftCorner(n, n) = constraints.Q_w0 / 2.0;
  Q0_ws.bottomRightCorner(m, m) =
      (box.g_b.array().square().matrix().asDiagonal().toDenseMatrix()) / (2.0 * m);

  auto& P = out.problem;
  out.Q_s = P.add_symmetric("Q_s", n);
  out.Z = P.add_full("Z", m, n);
  out.Qtilde_sx = P.add_symmetric("Qtilde_sx", n);
  out.Q_sws = P.add_symmetric("Q_sws", nw);
  out.U_s = P.add_diagonal("U_s", nu);

  {
    LmiBuilder b(P, "dissipation", {n, nu, nw, n});
    b.term(0, 0, out.Q_s, In, In).term(0, 0, out.Qtilde_sx, -In, In);
    b.term(3, 0, out.Q_s, A, In).term(3, 0, out.Z, B, In);
    b.constant(3, 2, D_s);
    b.term(2, 2, out.Q_sws, Iw, Iw);
    b.term(3, 3, out.Q_s, In, In);
    if (nu > 0) {
      const Mat Inu = Mat::Identity(nu, nu);
      b.term(1, 0, out.Q_s, -At, In).term(1, 0, out.Z, -Bt, In);
      b.term(1, 1, out.U_s, 2.0 * h_s.asDiagonal().toDenseMatrix(), Inu);
      b.constant(2, 1, -Dt_s.transpose());
      b.term(3, 1, out.U_s, Bq, Inu);
    }
    P.add_lmi(b.build());
  }
  {
    LmiBuilder b(P, "disturbance", {nw});
    b.constant(0, 0, Q0_ws).term(0, 0, out.Q_sws, -Iw, Iw);
    P.add_lmi(b.build());
  }
  {
    LmiBuilder b(P, "level", {n});
    b.term(0, 0, out.Qtilde_sx, In, In).term(0, 0, out.Q_s, -In / gamma_s, In);
    P.add_lmi(b.build());
  }
  for (int i : out.active) {
    const double c = out.vbar(i) - std::abs(eq.v_bar(i));
    LmiBuilder b(P, "locality[" + std::to_string(i) + "]", {n, nw, 1});
    b.term(0, 0, out.Q_s, In / (2.0 * gamma_s), In);
    b.constant(1, 1, Q0_ws / 2.0);
    b.term(2, 0, out.Q_s, At.row(i), In).term(2, 0, out.Z, Bt.row(i), In);
    b.constant(2, 1, Dt_s.row(i));
    b.constant(2, 2, Mat::Constant(1, 1, squared(c)));
    P.add_lmi(b.build());
  }
  const Mat GyC = constraints.G_y * model.C();
  for (Eigen::Index r = 0; r < constraints.G_y.rows(); ++r) {
    const double slack = constraints.b_y(r) - GyC.row(r).dot(eq.x_bar);
    if (!(slack >= 0.0))
      throw InfeasibleEquilibrium("equilibrium output violates output constraint row " +
                                  std::to_string(r));
    LmiBuilder b(P, "output[" + std::to_string(r) + "]", {n, 1});
    b.term(0, 0, out.Q_s, In / gamma_s, In);
    b.term(1, 0, out.Q_s, GyC.row(r), In);
    b.constant(1, 1, Mat::Constant(1, 1, squared(slack)));
    P.add_lmi(b.build());
  }
  for (Eigen::Index t = 0; t < constraints.G_u.rows(); ++t) {
    const Eigen::RowVectorXd row = constraints.G_u.row(t);
    const double slack = constraints.b_u(t) - row.dot(eq.u_bar) - box.support(row);
    if (!(slack >= 0.0))
      throw InfeasibleEquilibrium("boost box does not fit inside input constraint row " +
                                  std::to_string(t));
    LmiBuilder b(P, "input[" + std::to_string(t) + "]", {n, 1});
    b.term(0, 0, out.Q_s, In / gamma_s, In);
    b.term(1, 0, out.Z, row, In);
    b.constant(1, 1, Mat::Constant(1, 1, squared(slack)));
    P.add_lmi(b.build());
  }
  return out;
}

// --- synthesis -------------------------------------------------------------------

namespace {

Vec initial_point(const AssembledLmis& lmis, int n, int m, int nu) {
  const auto& P = lmis.problem;
  Vec x = Vec::Zero(P.num_scalars());
  P.set_value(lmis.Q_s, Mat::Identity(n, n), x);
  P.set_value(lmis.Qtilde_sx, Mat::Identity(n, n) / lmis.gamma_s, x);
  P.set_value(lmis.Q_sws, 1e-2 * Mat::Identity(n + m, n + m), x);
  if (nu > 0) P.set_value(lmis.U_s, Mat::Identity(nu, nu), x);
  return x;
}

std::string condition_of(const std::string& block_name) {
  return block_name.substr(0, block_name.find('['));
}

}  // namespace

SynthesisResult extract_result(const AssembledLmis& lmis, const Vec& x,
                               const BoostBox& box, const Equilibrium& eq) {
  const auto& P = lmis.problem;
  SynthesisResult r;
  r.Q_s = P.value(lmis.Q_s, x);
  r.Z = P.value(lmis.Z, x);
  r.Qtilde_sx = P.value(lmis.Qtilde_sx, x);
  r.Q_sws = P.value(lmis.Q_sws, x);
  r.U_s = P.value(lmis.U_s, x).diagonal();
  r.gamma_s = lmis.gamma_s;
  r.H_s = lmis.h_s;
  r.boost_box = box;
  r.active = lmis.active;
  r.global_flag = lmis.active.empty();
  r.vbar = lmis.vbar;

  const Eigen::LLT<Mat> llt(r.Q_s);
  if (llt.info() != Eigen::Success) throw SynthesisFailed("Q_s is not positive definite");
  r.P_s = llt.solve(Mat::Identity(r.Q_s.rows(), r.Q_s.cols()));
  r.P_s = 0.5 * (r.P_s + r.P_s.transpose());
  r.K = llt.solve(r.Z.transpose()).transpose();

  for (const char* c : {"dissipation", "disturbance", "level", "locality", "output", "input"}) r.residuals[c] = kInf;
  const auto res = P.residuals(x);
  for (size_t k = 0; k < P.lmis().size(); ++k) {
    const auto& name = P.lmis()[k].name;
    r.block_residuals[name] = res[k];
    auto& slot = r.residuals[condition_of(name)];
    slot = std::min(slot, res[k]);
  }
  double locality = kInf;
  for (int i : lmis.active) locality = std::min(locality, lmis.vbar(i) - std::abs(eq.v_bar(i)));
  r.residuals["locality_margin"] = locality;
  return r;
}

SynthesisResult synthesize(const RnnModel& model, const Equilibrium& eq,
                           const ConstraintSets& constraints, const SynthesisOptions& options,
                           const FeasibilitySolver* solver) {
  constraints.validate(model.m(), model.ny(), model.n());
  BarrierSolver fallback(options.solver);
  const FeasibilitySolver& engine = solver ? *solver : fallback;
  const int n = model.n(), m = model.m(), nu = model.nu();

  // boost box
  BoostBox box;
  if (options.boost_box) {
    box.g_b = *options.boost_box;
    if (box.size() != m || (box.g_b.array() <= 0.0).any())
      throw InvalidInput("designer boost box must have m positive scalings");
    const Vec b_bar = constraints.b_u - constraints.G_u * eq.u_bar;
    if ((b_bar.array() <= 0.0).any())
      throw InfeasibleEquilibrium("equilibrium input is not strictly inside U");
  } else {
    box = init_boost_box(constraints, eq);
  }

  std::string last_report = "no feasibility problem solved";
  int total_rounds = 0;
  for (int restart = 0; restart <= options.max_restarts; ++restart) {
    // start global: H_s = I, gamma_s = 1
    Vec h = Vec::Ones(nu);
    double gamma = 1.0;
    // alternate localisation (H_s) and level (gamma_s) growth
    for (int round = 0; round <= options.max_rounds; ++round, ++total_rounds) {
      if (round > 0) {
        bool escalate_h = (round % 2 == 0) && nu > 0;
        if (escalate_h) {
          const Vec h_next = h * options.h_growth;
          for (int i : active_channels(h_next, options.index_threshold)) {
            if (compute_vbar(model.activations()[i], h_next(i)) < std::abs(eq.v_bar(i))) {
              escalate_h = false;  // further localisation would break the locality margin
              break;
            }
          }
          if (escalate_h) h = h_next;
        }
        if (!escalate_h) gamma *= options.gamma_growth;
      }

      AssembledLmis lmis;
      try {
        lmis = assemble_lmis(model, eq, constraints, box, h, gamma, options.index_threshold);
      } catch (const LocalityViolation& e) {
        last_report = e.what();
        break;  // shrink the box and restart
      }
      const SolveResult sol = engine.solve(lmis.problem, initial_point(lmis, n, m, nu));
      std::ostringstream os;
      os << "restart " << restart << " round " << round << " gamma_s=" << gamma
         << " h=" << (nu > 0 ? h(0) : 1.0) << ": " << to_string(sol.status)
         << " (margin " << sol.margin << ", bound " << sol.margin_upper_bound << ")";
      last_report = os.str();
      if (sol.status != SolveStatus::Feasible) continue;

      SynthesisResult r = extract_result(lmis, sol.x, box, eq);
      if (r.residuals.at("locality_margin") < 0.0) break;  // shrink the box and restart
      r.solver_margin = sol.margin;
      r.rounds = round;
      r.restarts = restart;
      return r;
    }
    box.g_b *= options.box_growth;
  }
  throw SynthesisFailed("synthesis schedule exhausted; last attempt: " + last_report);
}

// --- JSON -------------------------------------------------------------------------

namespace {

nlohmann::json finite_or_null(double v) {
  return std::isfinite(v) ? nlohmann::json(v) : nlohmann::json(nullptr);
}

double from_finite_or_null(const nlohmann::json& j) {
  return j.is_null() ? kInf : j.get<double>();
}

}  // namespace

nlohmann::json to_json(const SynthesisResult& r) {
  nlohmann::json j;
  j["K"] = matrix_to_json(r.K);
  j["P_s"] = matrix_to_json(r.P_s);
  j["Q_s"] = matrix_to_json(r.Q_s);
  j["Z"] = matrix_to_json(r.Z);
  j["gamma_s"] = r.gamma_s;
  j["H_s"] = vector_to_json(r.H_s);
  j["U_s"] = vector_to_json(r.U_s);
  j["Qtilde_sx"] = matrix_to_json(r.Qtilde_sx);
  j["Q_sws"] = matrix_to_json(r.Q_sws);
  j["boost_box"] = {{"g_b", vector_to_json(r.boost_box.g_b)}};
  j["global_flag"] = r.global_flag;
  j["active_channels"] = r.active;
  auto vbar = nlohmann::json::array();
  for (Eigen::Index i = 0; i < r.vbar.size(); ++i) vbar.push_back(finite_or_null(r.vbar(i)));
  j["vbar"] = vbar;
  nlohmann::json res = nlohmann::json::object();
  for (const auto& [k, v] : r.residuals) res[k] = finite_or_null(v);
  j["residuals"] = res;
  nlohmann::json blocks = nlohmann::json::object();
  for (const auto& [k, v] : r.block_residuals) blocks[k] = finite_or_null(v);
  j["block_residuals"] = blocks;
  j["solver_margin"] = r.solver_margin;
  j["rounds"] = r.rounds;
  j["restarts"] = r.restarts;
  return j;
}

SynthesisResult synthesis_from_json(const nlohmann::json& j) {
  try {
    SynthesisResult r;
    r.K = matrix_from_json(j.at("K"));
    r.P_s = matrix_from_json(j.at("P_s"));
    r.Q_s = matrix_from_json(j.at("Q_s"));
    r.Z = matrix_from_json(j.at("Z"));
    r.gamma_s = j.at("gamma_s").get<double>();
    r.H_s = vector_from_json(j.at("H_s"));
    r.U_s = vector_from_json(j.at("U_s"));
    r.Qtilde_sx = matrix_from_json(j.at("Qtilde_sx"));
    r.Q_sws = matrix_from_json(j.at("Q_sws"));
    r.boost_box.g_b = vector_from_json(j.at("boost_box").at("g_b"));
    r.global_flag = j.at("global_flag").get<bool>();
    r.active = j.at("active_channels").get<std::vector<int>>();
    const auto& vb = j.at("vbar");
    r.vbar.resize(static_cast<Eigen::Index>(vb.size()));
    for (Eigen::Index i = 0; i < r.vbar.size(); ++i) r.vbar(i) = from_finite_or_null(vb.at(i));
    for (const auto& [k, v] : j.at("residuals").items()) r.residuals[k] = from_finite_or_null(v);
    if (j.contains("block_residuals"))
      for (const auto& [k, v] : j.at("block_residuals").items())
        r.block_residuals[k] = from_finite_or_null(v);
    r.solver_margin = j.value("solver_margin", 0.0);
    r.rounds = j.value("rounds", 0);
    r.restarts = j.value("restarts", 0);
    return r;
  } catch (const nlohmann::json::exception& e) {
    throw InvalidInput(std::string("malformed synthesis JSON: ") + e.what());
  }
}

}  // namespace rnnpb

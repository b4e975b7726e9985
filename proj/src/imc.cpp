#include "rnnpb/imc.hpp"

#include <cmath>
#include <limits>

#include "rnnpb/errors.hpp"

namespace rnnpb {

Vec error_dynamics(const RnnModel& model, const Equilibrium& eq, const Vec& dx, const Vec& du) {
  return step(model, eq.x_bar + dx, eq.u_bar + du, Vec::Zero(model.n())) - eq.x_bar;
}

ImcState::ImcState(RnnModel internal_model, Equilibrium eq, Mat K, std::optional<Ellipsoid> start_set,
                   size_t history)
    : model_(std::move(internal_model)),
      eq_(std::move(eq)),
      K_(std::move(K)),
      start_set_(std::move(start_set)),
      history_len_(history) {
  if (K_.rows() != model_.m() || K_.cols() != model_.n())
    throw InvalidInput("imc: gain has the wrong shape");
}

void ImcState::reset() {
  k_ = 0;
  history_.clear();
  awaiting_input_ = false;
}

Vec ImcState::reconstruct_we(const Vec& dx_now) {
  if (dx_now.size() != model_.n()) throw InvalidInput("imc: state dimension mismatch");
  if (awaiting_input_) throw InvalidInput("imc: commit_input must follow reconstruct_we");
  Vec we;
  if (k_ == 0) {
    if (start_set_ && !start_set_->contains(eq_.x_bar + dx_now, 1e-9))
      throw OutsideInvariantSet("imc: initial state lies outside the invariant set (level " +
                                std::to_string(start_set_->level(eq_.x_bar + dx_now)) + ")");
    we = dx_now;
  } else {
    we = dx_now - error_dynamics(model_, eq_, dx_prev_, du_prev_);
  }
  dx_prev_ = dx_now;
  awaiting_input_ = true;
  if (history_len_ > 0) {
    history_.push_back(we);
    if (history_.size() > history_len_) history_.pop_front();
  }
  return we;
}

void ImcState::commit_input(const Vec& du) {
  if (!awaiting_input_) throw InvalidInput("imc: commit_input without a reconstruction");
  if (du.size() != model_.m()) throw InvalidInput("imc: input dimension mismatch");
  du_prev_ = du;
  awaiting_input_ = false;
  ++k_;
}

Vec project_box(const Vec& u_tilde, const BoostBox& box) {
  if (u_tilde.size() != box.size()) throw InvalidInput("project_box: dimension mismatch");
  return (box.g_b.array() * u_tilde.array()).cwiseMax(-1.0).cwiseMin(1.0) / box.g_b.array();
}

Vec boost_input(const Vec& operator_output, const BoostBox& box) {
  return project_box(operator_output, box);
}

Vec composite_input(const Mat& K, const Vec& dx, const Vec& u_b, const Vec& u_bar) {
  return u_bar + K * dx + u_b;
}

double mismatch_gain_budget(double gamma_delta, double gamma_fe) {
  if (gamma_delta < 0.0 || gamma_fe < 0.0) throw InvalidInput("mismatch budget: gains must be nonnegative");
  if (gamma_delta == 0.0) return std::numeric_limits<double>::infinity();
  return 1.0 / (gamma_delta * (gamma_fe + 1.0));
}

Vec qp_project_polytope(const Mat& G, const Vec& h, const Vec& p) {
  const int rows = static_cast<int>(G.rows());
  const int n = static_cast<int>(p.size());
  if (rows > 20) throw InvalidInput("qp oracle: too many constraints to enumerate");
  const double tol = 1e-12 * (1.0 + p.cwiseAbs().maxCoeff() + h.cwiseAbs().maxCoeff());
  Vec best;
  double best_obj = std::numeric_limits<double>::infinity();
  for (unsigned mask = 0; mask < (1u << rows); ++mask) {
    std::vector<int> act;
    for (int i = 0; i < rows; ++i)
      if (mask & (1u << i)) act.push_back(i);
    const int a = static_cast<int>(act.size());
    if (a > n) continue;
    // min 1/2 ||v - p||^2  s.t.  G_a v = h_a:
    //   [I  G_a'] [v]   [p  ]
    //   [G_a  0 ] [l] = [h_a]
    Mat KKT = Mat::Zero(n + a, n + a);
    Vec rhs(n + a);
    KKT.topLeftCorner(n, n).setIdentity();
    rhs.head(n) = p;
    for (int j = 0; j < a; ++j) {
      KKT.block(0, n + j, n, 1) = G.row(act[j]).transpose();
      KKT.block(n + j, 0, 1, n) = G.row(act[j]);
      rhs(n + j) = h(act[j]);
    }
    Eigen::FullPivLU<Mat> lu(KKT);
    if (!lu.isInvertible()) continue;
    Vec sol = lu.solve(rhs);
    Vec v = sol.head(n);
    if (a > 0 && (sol.tail(a).array() < -tol).any()) continue;
    if (rows > 0 && ((G * v - h).array() > tol).any()) continue;
    const double obj = (v - p).squaredNorm();
    if (obj < best_obj) {
      best_obj = obj;
      best = v;
    }
  }
  if (best.size() == 0) throw InvalidInput("qp oracle: no KKT point found");
  return best;
}

Trajectory simulate_closed_loop(const RnnModel& plant, const RnnModel& internal_model,
                                const SynthesisResult& r, const Equilibrium& eq,
                                const BoostOperator& op, const Vec& dx0,
                                const std::vector<Vec>& w, bool enforce_start) {
  std::optional<Ellipsoid> start;
  if (enforce_start) start = invariant_set(r, eq);
  ImcState imc(internal_model, eq, r.K, start);
  const int T = static_cast<int>(w.size());
  Trajectory t;
  t.reserve(T);
  Vec x = eq.x_bar + dx0;
  for (int k = 0; k < T; ++k) {
    const Vec dx = x - eq.x_bar;
    Vec we = imc.reconstruct_we(dx);
    Vec ut = op(we);
    Vec ub = boost_input(ut, r.boost_box);
    Vec u = composite_input(r.K, dx, ub, eq.u_bar);
    imc.commit_input(u - eq.u_bar);
    t.x.push_back(x);
    t.u.push_back(u);
    t.y.push_back(plant.output(x));
    t.u_b.push_back(std::move(ub));
    t.u_tilde.push_back(std::move(ut));
    t.w.push_back(w[k]);
    t.w_e.push_back(std::move(we));
    x = step(plant, x, u, w[k]);
  }
  return t;
}

Trajectory simulate_prestabilized(const RnnModel& plant, const Mat& K, const Equilibrium& eq,
                                  const std::function<Vec(int k, const Vec& dx)>& boost,
                                  const Vec& dx0, const std::vector<Vec>& w) {
  const int T = static_cast<int>(w.size());
  Trajectory t;
  t.reserve(T);
  Vec x = eq.x_bar + dx0;
  for (int k = 0; k < T; ++k) {
    const Vec dx = x - eq.x_bar;
    Vec ub = boost(k, dx);
    Vec u = composite_input(K, dx, ub, eq.u_bar);
    t.x.push_back(x);
    t.u.push_back(u);
    t.y.push_back(plant.output(x));
    t.u_b.push_back(ub);
    t.u_tilde.push_back(std::move(ub));
    t.w.push_back(w[k]);
    x = step(plant, x, u, w[k]);
  }
  return t;
}

}  // namespace rnnpb

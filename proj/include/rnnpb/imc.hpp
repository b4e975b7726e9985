#pragma once

#include <deque>
#include <functional>
#include <optional>

#include "rnnpb/certificates.hpp"
#include "rnnpb/model.hpp"
#include "rnnpb/synthesis.hpp"
#include "rnnpb/trajectory.hpp"

namespace rnnpb {

// Error dynamics of the internal model: f_e(dx, du) = f(x_bar + dx, u_bar + du, 0) - x_bar.
Vec error_dynamics(const RnnModel& model, const Equilibrium& eq, const Vec& dx, const Vec& du);

// Internal-model copy of the plant. Feeds the boosting operator
//   w_e(0) = dx(0),  w_e(k) = dx(k) - f_e(dx(k-1), du(k-1)),
// which under a perfect model is (dx(0), w(0), w(1), ...).
class ImcState {
 public:
  // When start_set is given, the first reconstruct_we call refuses states
  // outside it: boosting is only certified from inside the invariant set.
  ImcState(RnnModel internal_model, Equilibrium eq, Mat K,
           std::optional<Ellipsoid> start_set = std::nullopt, size_t history = 0);

  // Step k's reconstruction. Must be followed by commit_input before the
  // next call.
  Vec reconstruct_we(const Vec& dx_now);
  // Records du(k) = u(k) - u_bar applied at the current step.
  void commit_input(const Vec& du);

  int step() const { return k_; }
  const Mat& K() const { return K_; }
  const Equilibrium& equilibrium() const { return eq_; }
  const RnnModel& internal_model() const { return model_; }
  // Most recent reconstructions, newest last (empty when history = 0).
  const std::deque<Vec>& history() const { return history_; }
  void reset();

 private:
  RnnModel model_;
  Equilibrium eq_;
  Mat K_;
  std::optional<Ellipsoid> start_set_;
  size_t history_len_;
  std::deque<Vec> history_;
  int k_ = 0;
  Vec dx_prev_, du_prev_;
  bool awaiting_input_ = false;
};

// Euclidean projection onto U_b: G_b^-1 clip(G_b u_tilde), clip to [-1, 1].
Vec project_box(const Vec& u_tilde, const BoostBox& box);

// u_b = project_box(operator_output); always in U_b.
Vec boost_input(const Vec& operator_output, const BoostBox& box);

// u_bar + K dx + u_b
Vec composite_input(const Mat& K, const Vec& dx, const Vec& u_b, const Vec& u_bar);

// Bound (gamma_delta (gamma_fe + 1))^-1 on the operator gain that keeps the
// loop robust to a model mismatch of gain gamma_delta; +inf when exact.
double mismatch_gain_budget(double gamma_delta, double gamma_fe);

// Reference oracle: argmin ||v - p||^2 subject to G v <= h, by enumerating
// active sets and keeping the KKT point. Exponential in rows(G); meant for a
// handful of constraints.
Vec qp_project_polytope(const Mat& G, const Vec& h, const Vec& p);

// Maps w_e(k) to the pre-projection boost input u_tilde(k). Called once per
// step, in order.
using BoostOperator = std::function<Vec(const Vec& we)>;

// Runs plant and projected IMC loop for w.size() steps from x_bar + dx0.
// The internal model may differ from the plant to study mismatch.
Trajectory simulate_closed_loop(const RnnModel& plant, const RnnModel& internal_model,
                                const SynthesisResult& r, const Equilibrium& eq,
                                const BoostOperator& op, const Vec& dx0,
                                const std::vector<Vec>& w, bool enforce_start = true);

// Pre-stabilised loop with an externally supplied boost sequence u_b(k).
Trajectory simulate_prestabilized(const RnnModel& plant, const Mat& K, const Equilibrium& eq,
                                  const std::function<Vec(int k, const Vec& dx)>& boost,
                                  const Vec& dx0, const std::vector<Vec>& w);

}  // namespace rnnpb

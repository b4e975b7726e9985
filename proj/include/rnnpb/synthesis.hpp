#pragma once

#include <map>
#include <optional>
#include <string>
#include <vector>

#include "rnnpb/conic.hpp"
#include "rnnpb/model.hpp"

namespace rnnpb {

// U_b = {u_b : |g_b,i u_b,i| <= 1}, a symmetric box around the origin.
struct BoostBox {
  Vec g_b;

  int size() const { return static_cast<int>(g_b.size()); }
  bool contains(const Vec& u_b, double tol = 0.0) const;
  Vec half_widths() const { return g_b.cwiseInverse(); }
  // max over the box of row * u_b, i.e. sum_j |row_j| / g_b,j
  double support(const Eigen::RowVectorXd& row) const;
  // True when u_bar + v lies in U for every box vertex v.
  bool fits_inside(const ConstraintSets& c, const Vec& u_bar, double tol = 1e-12) const;
};

// Largest box whose vertices stay inside U around u_bar: maximize sum_j t_j
// subject to sum_j |G_u(i,j)| t_j <= b_u,i - G_u,i u_bar and g_j = 1 / t_j.
BoostBox init_boost_box(const ConstraintSets& constraints, const Equilibrium& eq);

// sup{v : 1 - sigma'(s) <= 1/h for all |s| <= v}; +infinity when the bound
// holds on the whole line. Requires h >= 1.
double compute_vbar(Activation a, double h);

// Indices i with h_i > threshold.
std::vector<int> active_channels(const Vec& h, double threshold);

struct AssembledLmis {
  ConicProblem problem;
  int Q_s = -1, Z = -1, Qtilde_sx = -1, Q_sws = -1, U_s = -1;
  std::vector<int> active;  // I(H_s)
  Vec vbar;                 // per channel (infinity where unbounded)
  double gamma_s = 1.0;
  Vec h_s;
};

// Builds the LMI conditions for fixed (H_s, gamma_s): "dissipation",
// "disturbance", "level", one "locality[i]" per active channel, one
// "output[r]" per output row and one "input[t]" per input row. Throws LocalityViolation
// when vbar_i(h_i) < |v_eq,i| for an active channel.
AssembledLmis assemble_lmis(const RnnModel& model, const Equilibrium& eq,
                            const ConstraintSets& constraints, const BoostBox& box,
                            const Vec& h_s, double gamma_s,
                            double index_threshold = 1.0);

struct SynthesisOptions {
  // Channel i is localized when h_i exceeds this value.
  double index_threshold = 1.0;
  double h_growth = 2.0;
  double gamma_growth = 2.0;
  int max_rounds = 20;
  double box_growth = 2.0;
  int max_restarts = 5;
  // Designer-chosen box; replaces the LP initialisation when set.
  std::optional<Vec> boost_box;
  SolverOptions solver;
};

struct SynthesisResult {
  Mat K;
  Mat P_s;
  Mat Q_s;
  Mat Z;
  double gamma_s = 1.0;
  Vec H_s;
  Vec U_s;
  Mat Qtilde_sx;
  Mat Q_sws;
  BoostBox boost_box;
  bool global_flag = false;
  std::vector<int> active;
  Vec vbar;
  // Smallest eigenvalue per condition family; "locality_margin" holds
  // min_i (vbar_i - |v_eq,i|) over the active set.
  std::map<std::string, double> residuals;
  // Smallest eigenvalue of every emitted LMI block, by block name.
  std::map<std::string, double> block_residuals;
  double solver_margin = 0.0;
  int rounds = 0;
  int restarts = 0;
};

// Escalation: initialise the boost box, start from
// H_s = I, gamma_s = 1, escalate until feasible, shrink the box on failure.
SynthesisResult synthesize(const RnnModel& model, const Equilibrium& eq,
                           const ConstraintSets& constraints,
                           const SynthesisOptions& options = {},
                           const FeasibilitySolver* solver = nullptr);

// Extracts gain and certificates from a feasible assignment.
SynthesisResult extract_result(const AssembledLmis& lmis, const Vec& x,
                               const BoostBox& box, const Equilibrium& eq);

nlohmann::json to_json(const SynthesisResult& r);
SynthesisResult synthesis_from_json(const nlohmann::json& j);

}  // namespace rnnpb

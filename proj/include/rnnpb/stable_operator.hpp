#pragma once

#include <cstdint>
#include <vector>

#include "rnnpb/model.hpp"
#include "rnnpb/sampling.hpp"

namespace rnnpb {

// xi+ = A_M xi + B_w w_e,  out = C_m tanh(xi) + D_m w_e,
// A_M = rho W / (||W||_2 + eps). ||A_M||_2 <= rho < 1 for every W, so the
// operator is l_2- and l_inf-stable whatever the parameters.
struct StableOperatorParams {
  Mat W;    // n_xi x n_xi
  Mat B_w;  // n_xi x n
  Mat C_m;  // m x n_xi
  Mat D_m;  // m x n
  double rho = 0.95;
  double eps = 1e-8;

  int n_xi() const { return static_cast<int>(W.rows()); }
  int n_in() const { return static_cast<int>(B_w.cols()); }
  int n_out() const { return static_cast<int>(C_m.rows()); }

  // All trainable entries stacked as W, B_w, C_m, D_m (column-major each).
  int num_parameters() const;
  Vec flatten() const;
  void unflatten(const Vec& theta);

  void validate() const;
};

// Random W and B_w, zero C_m and D_m: the operator starts as u_b = 0.
StableOperatorParams init_operator(int n_in, int n_out, int n_xi, std::uint64_t seed,
                                   double rho = 0.95, double scale = 0.1);

struct SpectralNorm {
  double value = 0.0;
  Vec left, right;  // top singular pair, valid when converged
  bool converged = false;
  int iterations = 0;
};

// Power iteration on W'W (tolerance 1e-10, at most 500 iterations). When it
// does not converge the Frobenius norm, an upper bound, is returned instead.
SpectralNorm spectral_norm(const Mat& W, double tol = 1e-10, int max_iter = 500);

// Effective recurrence and the norm it was scaled with.
struct Recurrence {
  Mat A_M;
  SpectralNorm norm;
};
Recurrence effective_recurrence(const StableOperatorParams& params);

struct OperatorOutput {
  Vec xi_next;
  Vec out;
};

OperatorOutput operator_step(const StableOperatorParams& params, const Recurrence& rec,
                             const Vec& xi, const Vec& we);
OperatorOutput operator_step(const StableOperatorParams& params, const Vec& xi, const Vec& we);

// ||D_m||_2 + ||C_m||_2 ||B_w||_2 / (1 - rho)
double gain_bound(const StableOperatorParams& params);

// Stateful evaluator for closed-loop use.
class StableOperator {
 public:
  explicit StableOperator(StableOperatorParams params);
  void reset();
  Vec step(const Vec& we);
  const Vec& state() const { return xi_; }
  const StableOperatorParams& params() const { return params_; }
  const Recurrence& recurrence() const { return rec_; }

 private:
  StableOperatorParams params_;
  Recurrence rec_;
  Vec xi_;
};

// Gradients with respect to every parameter block.
struct OperatorGradients {
  Mat W, B_w, C_m, D_m;

  static OperatorGradients zeros_like(const StableOperatorParams& p);
  Vec flatten() const;
};

// Forward record: xi[k] is the state entering step k, we[k] its input.
struct OperatorTape {
  std::vector<Vec> xi;
  std::vector<Vec> we;
};

OperatorTape run_operator(const StableOperatorParams& params, const std::vector<Vec>& we,
                          std::vector<Vec>* outputs = nullptr);

// Reverse pass through a single step. Given the cotangents of out(k) and of
// xi(k+1), accumulates into grads.A_M-space (dA) and the B_w, C_m, D_m blocks,
// and returns the cotangents of xi(k) and we(k).
struct StepAdjoint {
  Vec g_xi;
  Vec g_we;
};
StepAdjoint operator_step_adjoint(const StableOperatorParams& params, const Recurrence& rec,
                                  const Vec& xi, const Vec& we, const Vec& g_out,
                                  const Vec& g_xi_next, Mat& dA, OperatorGradients& grads);

// Maps the gradient with respect to A_M onto W through the normalization,
// holding the top singular pair fixed.
void recurrence_to_raw(const StableOperatorParams& params, const Recurrence& rec,
                       const Mat& dA, OperatorGradients& grads);

// Exact gradient of sum_k g_out[k]' out[k] with respect to all parameters,
// treating the input sequence as given.
OperatorGradients operator_adjoint(const StableOperatorParams& params, const OperatorTape& tape,
                                   const std::vector<Vec>& output_cotangents);

nlohmann::json to_json(const StableOperatorParams& p);
StableOperatorParams operator_from_json(const nlohmann::json& j);

}  // namespace rnnpb

#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "rnnpb/imc.hpp"
#include "rnnpb/stable_operator.hpp"
#include "rnnpb/synthesis.hpp"

namespace rnnpb {

// Value of one stage of the loss and its partial derivatives.
struct StageLoss {
  double value = 0.0;
  Vec g_u, g_u_prev, g_y, g_u_tilde;
};

using StageHook = std::function<StageLoss(const Vec& u, const Vec& u_prev, const Vec& y,
                                          const Vec& u_tilde)>;

enum class LossKind { PhPreset, Quadratic, Custom };

// Stage cost summed over k:
//   PhPreset:  w1 |10^-y - 10^-y_bar| + w2 |u(k) - u(k-1)| + w3 max(|u~_b| - u_M, 0)
//   Quadratic: w1 (y - y_bar)^2       + w2 |u(k) - u(k-1)| + w3 max(|u~_b| - u_M, 0)
// Norms are 1-norms over components. The subgradient of |.| at 0 is 0.
struct LossSpec {
  LossKind kind = LossKind::PhPreset;
  double omega1 = 1.0, omega2 = 0.1, omega3 = 0.05;
  Vec y_bar;
  double u_M = 0.0;
  StageHook hook;

  // omega1 = 10^y_bar, omega2 = 0.1, omega3 = 0.05
  static LossSpec ph_preset(double y_bar, double u_M);
  static LossSpec quadratic(const Vec& y_bar, double u_M, double omega1 = 1.0);
  static LossSpec custom(StageHook hook);

  StageLoss stage(const Vec& u, const Vec& u_prev, const Vec& y, const Vec& u_tilde) const;
  void validate() const;
};

struct ScenarioBatch {
  std::vector<std::vector<Vec>> w;  // w[s][k]
  std::vector<Vec> dx0;             // initial deviation per scenario
  int horizon = 0;
  std::uint64_t seed = 0;

  int size() const { return static_cast<int>(w.size()); }
};

struct ScenarioOptions {
  int scenarios = 16;
  int horizon = 100;
  std::uint64_t seed = 1;
  // w(k) = 0 from this step on; -1 keeps the whole horizon.
  int t_cut = -1;
  // Optional per-step scale in [0, 1] applied before truncation.
  std::function<double(int)> envelope;
  // Initial deviations are drawn uniformly in dx0_scale * E(P_s/gamma_s);
  // 0 starts every run at the equilibrium.
  double dx0_scale = 1.0;
};

// w(k) = envelope(k) zeta with zeta uniform in E(Q_w0); dx(0) uniform in the
// (scaled) invariant set. Reproducible from the seed.
ScenarioBatch sample_scenarios(const ConstraintSets& constraints, const SynthesisResult& r,
                               const ScenarioOptions& options);

struct RolloutResult {
  double loss = 0.0;
  OperatorGradients grads;
  Vec grad_flat;
};

// Mean over scenarios of the summed stage loss along the projected IMC loop,
// and its exact gradient with respect to the operator parameters. The
// internal model is the plant itself.
RolloutResult rollout_loss(const RnnModel& model, const SynthesisResult& r, const Equilibrium& eq,
                           const StableOperatorParams& params, const LossSpec& loss,
                           const ScenarioBatch& batch, bool with_gradient = true, int workers = 1);

double evaluate_loss(const RnnModel& model, const SynthesisResult& r, const Equilibrium& eq,
                     const StableOperatorParams& params, const LossSpec& loss,
                     const ScenarioBatch& batch, int workers = 1);

// Closed-loop runs of the batch under the given operator.
std::vector<Trajectory> simulate_batch(const RnnModel& model, const SynthesisResult& r,
                                       const Equilibrium& eq, const StableOperatorParams& params,
                                       const ScenarioBatch& batch, int workers = 1);

// Mean over runs of sum_k max(10^-y(k) - 10^-y_bar, 0), first output.
double acid_deviation(const std::vector<Trajectory>& runs, double y_bar);

struct OptimizerConfig {
  int epochs = 30;
  double learning_rate = 1e-3;
  double momentum = 0.9;
  // Global gradient-norm clip; <= 0 disables.
  double clip_norm = 1.0;
  int workers = 1;
  // Stop after this many epochs without improvement; <= 0 disables.
  int patience = 0;
};

struct TrainResult {
  StableOperatorParams params;       // final iterate
  StableOperatorParams best_params;  // lowest training loss seen
  std::vector<double> loss_history;  // loss at the iterate entering each epoch, then the final one
  int epochs_run = 0;
  bool stopped_early = false;
  std::string message;
};

using EpochCallback = std::function<void(int epoch, const StableOperatorParams& params, double loss)>;

// Heavy-ball gradient descent on the batch loss. Throws TrainingDiverged on a
// non-finite loss or gradient. The callback sees every iterate, including
// the initial one (epoch 0).
TrainResult train(const RnnModel& model, const SynthesisResult& r, const Equilibrium& eq,
                  const StableOperatorParams& init, const LossSpec& loss, const ScenarioBatch& batch,
                  const OptimizerConfig& config, const EpochCallback& on_epoch = nullptr);

nlohmann::json to_json(const OptimizerConfig& c);
OptimizerConfig optimizer_from_json(const nlohmann::json& j);

}  // namespace rnnpb

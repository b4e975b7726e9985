#include "rnnpb/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <sstream>

#include "rnnpb/errors.hpp"
#include "rnnpb/sampling.hpp"

namespace rnnpb {

namespace {

double sgn(double v) { return (v > 0.0) - (v < 0.0); }

}  // namespace

LossSpec LossSpec::ph_preset(double y_bar, double u_M) {
  LossSpec l;
  l.kind = LossKind::PhPreset;
  l.omega1 = std::pow(10.0, y_bar);
  l.omega2 = 0.1;
  l.omega3 = 0.05;
  l.y_bar = Vec::Constant(1, y_bar);
  l.u_M = u_M;
  return l;
}

LossSpec LossSpec::quadratic(const Vec& y_bar, double u_M, double omega1) {
  LossSpec l;
  l.kind = LossKind::Quadratic;
  l.omega1 = omega1;
  l.omega2 = 0.1;
  l.omega3 = 0.05;
  l.y_bar = y_bar;
  l.u_M = u_M;
  return l;
}

LossSpec LossSpec::custom(StageHook hook) {
  LossSpec l;
  l.kind = LossKind::Custom;
  l.hook = std::move(hook);
  return l;
}

void LossSpec::validate() const {
  if (kind == LossKind::Custom) {
    if (!hook) throw InvalidInput("loss: custom kind needs a stage hook");
    return;
  }
  if (omega1 < 0.0 || omega2 < 0.0 || omega3 < 0.0) throw InvalidInput("loss: weights must be nonnegative");
  if (u_M < 0.0) throw InvalidInput("loss: u_M must be nonnegative");
}

StageLoss LossSpec::stage(const Vec& u, const Vec& u_prev, const Vec& y, const Vec& u_tilde) const {
  if (kind == LossKind::Custom) {
    // Hooks may leave a partial derivative empty to mean zero.
    StageLoss s = hook(u, u_prev, y, u_tilde);
    auto fill = [](Vec& g, Eigen::Index n, const char* name) {
      if (g.size() == 0) g = Vec::Zero(n);
      else if (g.size() != n) throw InvalidInput(std::string("loss hook: wrong size for ") + name);
    };
    fill(s.g_u, u.size(), "g_u");
    fill(s.g_u_prev, u_prev.size(), "g_u_prev");
    fill(s.g_y, y.size(), "g_y");
    fill(s.g_u_tilde, u_tilde.size(), "g_u_tilde");
    return s;
  }
  if (y.size() != y_bar.size()) throw InvalidInput("loss: output dimension differs from y_bar");
  StageLoss s;
  s.g_y = Vec::Zero(y.size());
  const double ln10 = std::log(10.0);
  for (Eigen::Index i = 0; i < y.size(); ++i) {
    if (kind == LossKind::PhPreset) {
      const double d = std::pow(10.0, -y(i)) - std::pow(10.0, -y_bar(i));
      s.value += omega1 * std::abs(d);
      s.g_y(i) = omega1 * sgn(d) * (-ln10) * std::pow(10.0, -y(i));
    } else {
      const double d = y(i) - y_bar(i);
      s.value += omega1 * d * d;
      s.g_y(i) = 2.0 * omega1 * d;
    }
  }
  const Vec du = u - u_prev;
  s.value += omega2 * du.cwiseAbs().sum();
  s.g_u = omega2 * du.unaryExpr(&sgn);
  s.g_u_prev = -s.g_u;
  s.g_u_tilde = Vec::Zero(u_tilde.size());
  for (Eigen::Index i = 0; i < u_tilde.size(); ++i) {
    const double excess = std::abs(u_tilde(i)) - u_M;
    if (excess > 0.0) {
      s.value += omega3 * excess;
      s.g_u_tilde(i) = omega3 * sgn(u_tilde(i));
    }
  }
  return s;
}

ScenarioBatch sample_scenarios(const ConstraintSets& constraints, const SynthesisResult& r,
                               const ScenarioOptions& o) {
  if (o.scenarios < 0 || o.horizon < 0) throw InvalidInput("scenarios: negative size");
  const EllipsoidSampler draw_w(constraints.Q_w0);
  const EllipsoidSampler draw_x(r.P_s / r.gamma_s);
  const int n = static_cast<int>(constraints.Q_w0.rows());
  const int t_cut = o.t_cut < 0 ? o.horizon : std::min(o.t_cut, o.horizon);
  ScenarioBatch b;
  b.horizon = o.horizon;
  b.seed = o.seed;
  b.w.resize(o.scenarios);
  b.dx0.resize(o.scenarios);
  for (int s = 0; s < o.scenarios; ++s) {
    Rng rng = substream(o.seed, static_cast<std::uint64_t>(s));
    b.dx0[s] = o.dx0_scale * draw_x(rng);
    b.w[s].resize(o.horizon);
    for (int k = 0; k < o.horizon; ++k) {
      Vec z = draw_w(rng);
      double e = k < t_cut ? 1.0 : 0.0;
      if (o.envelope) e *= std::clamp(o.envelope(k), 0.0, 1.0);
      b.w[s][k] = e == 0.0 ? Vec::Zero(n) : Vec(e * z);
    }
  }
  return b;
}

namespace {

struct ScenarioResult {
  double loss = 0.0;
  OperatorGradients grads;
  Mat dA;
};

// Jacobians of f(x, u) = A_x x + B_u u + B_sigma sigma(v) at slopes s = sigma'(v).
Mat jac_x(const RnnModel& m, const Vec& s) {
  return m.A_x() + m.B_sigma() * s.asDiagonal() * m.A_tilde();
}
Mat jac_u(const RnnModel& m, const Vec& s) {
  return m.B_u() + m.B_sigma() * s.asDiagonal() * m.B_tilde();
}

ScenarioResult run_scenario(const RnnModel& model, const SynthesisResult& r, const Equilibrium& eq,
                            const StableOperatorParams& params, const Recurrence& rec,
                            const LossSpec& loss, const std::vector<Vec>& w, const Vec& dx0,
                            bool with_gradient) {
  const int T = static_cast<int>(w.size());
  const Ellipsoid start = invariant_set(r, eq);
  if (!start.contains(eq.x_bar + dx0, 1e-9))
    throw OutsideInvariantSet("rollout: initial state outside the invariant set");

  // Forward pass, mirroring simulate_closed_loop step for step.
  std::vector<Vec> dx(T), we(T), xi(T), ut(T), u(T), s_plant(T), s_model(T);
  std::vector<StageLoss> stages(T);
  ScenarioResult res;
  Vec x = eq.x_bar + dx0;
  Vec xi_k = Vec::Zero(params.n_xi());
  Vec du_prev, u_prev = eq.u_bar;
  const Vec zero_w = Vec::Zero(model.n());
  for (int k = 0; k < T; ++k) {
    dx[k] = x - eq.x_bar;
    if (k == 0) {
      we[k] = dx[k];
    } else {
      const Vec xm = eq.x_bar + dx[k - 1];
      const Vec um = eq.u_bar + du_prev;
      s_model[k] = model.activation_slopes(model.preactivation(xm, um));
      we[k] = dx[k] - (step(model, xm, um, zero_w) - eq.x_bar);
    }
    xi[k] = xi_k;
    OperatorOutput o = operator_step(params, rec, xi_k, we[k]);
    xi_k = std::move(o.xi_next);
    ut[k] = std::move(o.out);
    const Vec ub = project_box(ut[k], r.boost_box);
    u[k] = composite_input(r.K, dx[k], ub, eq.u_bar);
    du_prev = u[k] - eq.u_bar;
    const Vec y = model.output(x);
    stages[k] = loss.stage(u[k], u_prev, y, ut[k]);
    res.loss += stages[k].value;
    u_prev = u[k];
    s_plant[k] = model.activation_slopes(model.preactivation(x, u[k]));
    x = step(model, x, u[k], w[k]);
  }
  if (!with_gradient) return res;

  res.grads = OperatorGradients::zeros_like(params);
  res.dA = Mat::Zero(params.n_xi(), params.n_xi());
  const int n = model.n(), m = model.m();
  Vec gx_next = Vec::Zero(n), gwe_next = Vec::Zero(n), gxi_next = Vec::Zero(params.n_xi());
  Vec gu_pending = Vec::Zero(m);
  for (int k = T - 1; k >= 0; --k) {
    // x(k+1) = f(x(k), u(k)) + w(k)
    Vec gx = jac_x(model, s_plant[k]).transpose() * gx_next;
    Vec gu = jac_u(model, s_plant[k]).transpose() * gx_next;
    // w_e(k+1) = dx(k+1) - f_e(dx(k), du(k))
    if (k + 1 < T) {
      gx.noalias() -= jac_x(model, s_model[k + 1]).transpose() * gwe_next;
      gu.noalias() -= jac_u(model, s_model[k + 1]).transpose() * gwe_next;
    }
    const StageLoss& st = stages[k];
    gu += st.g_u + gu_pending;
    gu_pending = st.g_u_prev;
    gx.noalias() += model.C().transpose() * st.g_y;
    // u(k) = u_bar + K dx(k) + proj(u~(k))
    gx.noalias() += r.K.transpose() * gu;
    Vec gut = st.g_u_tilde;
    const Vec scaled = r.boost_box.g_b.cwiseProduct(ut[k]);
    for (int i = 0; i < m; ++i)
      if (std::abs(scaled(i)) < 1.0) gut(i) += gu(i);
    StepAdjoint sa = operator_step_adjoint(params, rec, xi[k], we[k], gut, gxi_next, res.dA, res.grads);
    gx += sa.g_we;
    gwe_next = std::move(sa.g_we);
    gxi_next = std::move(sa.g_xi);
    gx_next = std::move(gx);
  }
  return res;
}

}  // namespace

RolloutResult rollout_loss(const RnnModel& model, const SynthesisResult& r, const Equilibrium& eq,
                           const StableOperatorParams& params, const LossSpec& loss,
                           const ScenarioBatch& batch, bool with_gradient, int workers) {
  params.validate();
  loss.validate();
  if (params.n_in() != model.n() || params.n_out() != model.m())
    throw InvalidInput("rollout: operator shape does not match the plant");
  const Recurrence rec = effective_recurrence(params);
  const int S = batch.size();
  std::vector<ScenarioResult> per(S);
  parallel_for(S, workers, [&](int s) {
    per[s] = run_scenario(model, r, eq, params, rec, loss, batch.w[s], batch.dx0[s], with_gradient);
  });

  // Reduce in scenario order so the result does not depend on scheduling.
  RolloutResult out;
  out.grads = OperatorGradients::zeros_like(params);
  Mat dA = Mat::Zero(params.n_xi(), params.n_xi());
  for (const auto& p : per) {
    out.loss += p.loss;
    if (with_gradient) {
      out.grads.W += p.grads.W;
      out.grads.B_w += p.grads.B_w;
      out.grads.C_m += p.grads.C_m;
      out.grads.D_m += p.grads.D_m;
      dA += p.dA;
    }
  }
  const double inv = S > 0 ? 1.0 / S : 0.0;
  out.loss *= inv;
  if (with_gradient) {
    recurrence_to_raw(params, rec, dA, out.grads);
    out.grads.W *= inv;
    out.grads.B_w *= inv;
    out.grads.C_m *= inv;
    out.grads.D_m *= inv;
    out.grad_flat = out.grads.flatten();
  }
  return out;
}

double evaluate_loss(const RnnModel& model, const SynthesisResult& r, const Equilibrium& eq,
                     const StableOperatorParams& params, const LossSpec& loss,
                     const ScenarioBatch& batch, int workers) {
  return rollout_loss(model, r, eq, params, loss, batch, false, workers).loss;
}

std::vector<Trajectory> simulate_batch(const RnnModel& model, const SynthesisResult& r,
                                       const Equilibrium& eq, const StableOperatorParams& params,
                                       const ScenarioBatch& batch, int workers) {
  std::vector<Trajectory> runs(batch.size());
  parallel_for(batch.size(), workers, [&](int s) {
    StableOperator op(params);
    runs[s] = simulate_closed_loop(model, model, r, eq, [&](const Vec& we) { return op.step(we); },
                                   batch.dx0[s], batch.w[s]);
  });
  return runs;
}

double acid_deviation(const std::vector<Trajectory>& runs, double y_bar) {
  if (runs.empty()) return 0.0;
  const double ref = std::pow(10.0, -y_bar);
  double total = 0.0;
  for (const auto& t : runs)
    for (const auto& y : t.y) total += std::max(std::pow(10.0, -y(0)) - ref, 0.0);
  return total / runs.size();
}

TrainResult train(const RnnModel& model, const SynthesisResult& r, const Equilibrium& eq,
                  const StableOperatorParams& init, const LossSpec& loss, const ScenarioBatch& batch,
                  const OptimizerConfig& config, const EpochCallback& on_epoch) {
  if (config.epochs < 0 || config.learning_rate <= 0.0 || config.momentum < 0.0 || config.momentum >= 1.0)
    throw InvalidInput("train: invalid optimizer configuration");
  TrainResult out;
  StableOperatorParams p = init;
  Vec theta = p.flatten();
  Vec velocity = Vec::Zero(theta.size());
  double best = std::numeric_limits<double>::infinity();
  int since_best = 0;

  auto check = [](double v, const Vec& g, int epoch) {
    if (!std::isfinite(v)) throw TrainingDiverged("train: non-finite loss at epoch " + std::to_string(epoch), epoch);
    if (!g.allFinite())
      throw TrainingDiverged("train: non-finite gradient at epoch " + std::to_string(epoch), epoch);
  };

  for (int epoch = 0;; ++epoch) {
    const bool last = epoch == config.epochs;
    RolloutResult rr = rollout_loss(model, r, eq, p, loss, batch, !last, config.workers);
    check(rr.loss, last ? Vec() : rr.grad_flat, epoch);
    out.loss_history.push_back(rr.loss);
    if (on_epoch) on_epoch(epoch, p, rr.loss);
    if (rr.loss < best) {
      best = rr.loss;
      out.best_params = p;
      since_best = 0;
    } else if (config.patience > 0 && ++since_best >= config.patience) {
      out.stopped_early = true;
      out.message = "no improvement for " + std::to_string(config.patience) + " epochs";
      break;
    }
    if (last) break;

    Vec g = rr.grad_flat;
    const double gn = g.norm();
    if (config.clip_norm > 0.0 && gn > config.clip_norm) g *= config.clip_norm / gn;
    velocity = config.momentum * velocity - config.learning_rate * g;
    theta += velocity;
    p.unflatten(theta);
    out.epochs_run = epoch + 1;
  }
  out.params = p;
  if (out.message.empty()) {
    std::ostringstream msg;
    msg << "loss " << out.loss_history.front() << " -> " << out.loss_history.back();
    out.message = msg.str();
  }
  return out;
}

nlohmann::json to_json(const OptimizerConfig& c) {
  return {{"epochs", c.epochs},     {"learning_rate", c.learning_rate}, {"momentum", c.momentum},
          {"clip_norm", c.clip_norm}, {"workers", c.workers},           {"patience", c.patience}};
}

OptimizerConfig optimizer_from_json(const nlohmann::json& j) {
  OptimizerConfig c;
  c.epochs = j.value("epochs", c.epochs);
  c.learning_rate = j.value("learning_rate", c.learning_rate);
  c.momentum = j.value("momentum", c.momentum);
  c.clip_norm = j.value("clip_norm", c.clip_norm);
  c.workers = j.value("workers", c.workers);
  c.patience = j.value("patience", c.patience);
  return c;
}

}  // namespace rnnpb

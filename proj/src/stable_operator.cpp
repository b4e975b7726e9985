#include "rnnpb/stable_operator.hpp"

#include <atomic>
#include <cmath>
#include <iostream>

#include "rnnpb/errors.hpp"

namespace rnnpb {

int StableOperatorParams::num_parameters() const {
  return static_cast<int>(W.size() + B_w.size() + C_m.size() + D_m.size());
}

Vec StableOperatorParams::flatten() const {
  Vec t(num_parameters());
  Eigen::Index p = 0;
  for (const Mat* M : {&W, &B_w, &C_m, &D_m}) {
    t.segment(p, M->size()) = M->reshaped();
    p += M->size();
  }
  return t;
}

void StableOperatorParams::unflatten(const Vec& theta) {
  if (theta.size() != num_parameters()) throw InvalidInput("operator: parameter vector size mismatch");
  Eigen::Index p = 0;
  for (Mat* M : {&W, &B_w, &C_m, &D_m}) {
    M->reshaped() = theta.segment(p, M->size());
    p += M->size();
  }
}

void StableOperatorParams::validate() const {
  if (W.rows() != W.cols() || B_w.rows() != W.rows() || C_m.cols() != W.rows() ||
      D_m.rows() != C_m.rows() || D_m.cols() != B_w.cols())
    throw InvalidInput("operator: inconsistent parameter shapes");
  if (!(rho > 0.0 && rho < 1.0)) throw InvalidInput("operator: rho must lie in (0, 1)");
  if (!(eps > 0.0)) throw InvalidInput("operator: eps must be positive");
}

StableOperatorParams init_operator(int n_in, int n_out, int n_xi, std::uint64_t seed, double rho,
                                   double scale) {
  Rng rng = substream(seed, 0);
  StableOperatorParams p;
  p.rho = rho;
  p.W = sample_gaussian(rng, n_xi * n_xi).reshaped(n_xi, n_xi);
  p.B_w = scale * sample_gaussian(rng, n_xi * n_in).reshaped(n_xi, n_in);
  p.C_m = Mat::Zero(n_out, n_xi);
  p.D_m = Mat::Zero(n_out, n_in);
  return p;
}

SpectralNorm spectral_norm(const Mat& W, double tol, int max_iter) {
  SpectralNorm s;
  const Eigen::Index n = W.cols();
  if (n == 0 || W.rows() == 0) {
    s.converged = true;
    return s;
  }
  const double fro = W.norm();
  if (fro == 0.0) {
    s.converged = true;
    s.left = Vec::Zero(W.rows());
    s.right = Vec::Zero(n);
    return s;
  }
  // Deterministic start that is not orthogonal to anything generic.
  Vec v = Vec::LinSpaced(n, 1.0, 2.0).normalized();
  double sigma = 0.0;
  for (int it = 1; it <= max_iter; ++it) {
    Vec u = W * v;
    const double su = u.norm();
    if (su == 0.0) {
      v = Vec::Unit(n, it % n);
      continue;
    }
    u /= su;
    Vec v_next = W.transpose() * u;
    const double next = v_next.norm();
    v_next /= next;
    s.iterations = it;
    // The value error is quadratic in the vector error; 1e-2 sqrt(tol) on the
    // vector keeps the norm well below tol without chasing near-ties.
    if (std::abs(next - sigma) <= tol * next && (v_next - v).norm() <= 1e-2 * std::sqrt(tol)) {
      s.value = next;
      s.right = v_next;
      s.left = W * v_next / next;
      s.converged = true;
      return s;
    }
    sigma = next;
    v = v_next;
  }
  s.value = fro;
  s.converged = false;
  return s;
}

Recurrence effective_recurrence(const StableOperatorParams& params) {
  Recurrence r;
  r.norm = spectral_norm(params.W);
  static std::atomic<bool> warned{false};
  if (!r.norm.converged && !warned.exchange(true))
    std::cerr << "warning: power iteration did not converge; scaling W by its Frobenius norm\n";
  r.A_M = (params.rho / (r.norm.value + params.eps)) * params.W;
  return r;
}

OperatorOutput operator_step(const StableOperatorParams& params, const Recurrence& rec, const Vec& xi,
                             const Vec& we) {
  return {rec.A_M * xi + params.B_w * we,
          params.C_m * xi.array().tanh().matrix() + params.D_m * we};
}

OperatorOutput operator_step(const StableOperatorParams& params, const Vec& xi, const Vec& we) {
  return operator_step(params, effective_recurrence(params), xi, we);
}

namespace {

double norm2(const Mat& M) {
  if (M.size() == 0) return 0.0;
  return Eigen::JacobiSVD<Mat>(M).singularValues()(0);
}

}  // namespace

double gain_bound(const StableOperatorParams& params) {
  return norm2(params.D_m) + norm2(params.C_m) * norm2(params.B_w) / (1.0 - params.rho);
}

StableOperator::StableOperator(StableOperatorParams params) : params_(std::move(params)) {
  params_.validate();
  rec_ = effective_recurrence(params_);
  reset();
}

void StableOperator::reset() { xi_ = Vec::Zero(params_.n_xi()); }

Vec StableOperator::step(const Vec& we) {
  OperatorOutput o = operator_step(params_, rec_, xi_, we);
  xi_ = std::move(o.xi_next);
  return std::move(o.out);
}

OperatorGradients OperatorGradients::zeros_like(const StableOperatorParams& p) {
  return {Mat::Zero(p.W.rows(), p.W.cols()), Mat::Zero(p.B_w.rows(), p.B_w.cols()),
          Mat::Zero(p.C_m.rows(), p.C_m.cols()), Mat::Zero(p.D_m.rows(), p.D_m.cols())};
}

Vec OperatorGradients::flatten() const {
  StableOperatorParams p;
  p.W = W;
  p.B_w = B_w;
  p.C_m = C_m;
  p.D_m = D_m;
  return p.flatten();
}

OperatorTape run_operator(const StableOperatorParams& params, const std::vector<Vec>& we,
                          std::vector<Vec>* outputs) {
  const Recurrence rec = effective_recurrence(params);
  OperatorTape tape;
  tape.xi.reserve(we.size());
  tape.we = we;
  if (outputs) outputs->clear();
  Vec xi = Vec::Zero(params.n_xi());
  for (const Vec& w : we) {
    tape.xi.push_back(xi);
    OperatorOutput o = operator_step(params, rec, xi, w);
    if (outputs) outputs->push_back(o.out);
    xi = std::move(o.xi_next);
  }
  return tape;
}

StepAdjoint operator_step_adjoint(const StableOperatorParams& params, const Recurrence& rec,
                                  const Vec& xi, const Vec& we, const Vec& g_out,
                                  const Vec& g_xi_next, Mat& dA, OperatorGradients& grads) {
  const Vec th = xi.array().tanh().matrix();
  grads.C_m.noalias() += g_out * th.transpose();
  grads.D_m.noalias() += g_out * we.transpose();
  grads.B_w.noalias() += g_xi_next * we.transpose();
  dA.noalias() += g_xi_next * xi.transpose();
  StepAdjoint s;
  s.g_xi = rec.A_M.transpose() * g_xi_next +
           ((1.0 - th.array().square()) * (params.C_m.transpose() * g_out).array()).matrix();
  s.g_we = params.D_m.transpose() * g_out + params.B_w.transpose() * g_xi_next;
  return s;
}

void recurrence_to_raw(const StableOperatorParams& params, const Recurrence& rec, const Mat& dA,
                       OperatorGradients& grads) {
  // A_M = rho W / (s + eps) with s = ||W||. ds/dW = u v' for the spectral
  // norm, W / ||W||_F for the Frobenius fallback.
  const double s = rec.norm.value;
  const double scale = params.rho / (s + params.eps);
  grads.W.noalias() += scale * dA;
  if (s == 0.0) return;
  const double inner = (dA.array() * params.W.array()).sum();
  const double coeff = -params.rho * inner / ((s + params.eps) * (s + params.eps));
  if (rec.norm.converged)
    grads.W.noalias() += coeff * rec.norm.left * rec.norm.right.transpose();
  else
    grads.W += (coeff / s) * params.W;
}

OperatorGradients operator_adjoint(const StableOperatorParams& params, const OperatorTape& tape,
                                   const std::vector<Vec>& output_cotangents) {
  if (output_cotangents.size() != tape.we.size())
    throw InvalidInput("operator_adjoint: cotangent count differs from tape length");
  const Recurrence rec = effective_recurrence(params);
  OperatorGradients g = OperatorGradients::zeros_like(params);
  Mat dA = Mat::Zero(params.n_xi(), params.n_xi());
  Vec g_xi = Vec::Zero(params.n_xi());
  for (size_t k = tape.we.size(); k-- > 0;) {
    StepAdjoint s = operator_step_adjoint(params, rec, tape.xi[k], tape.we[k], output_cotangents[k],
                                          g_xi, dA, g);
    g_xi = std::move(s.g_xi);
  }
  recurrence_to_raw(params, rec, dA, g);
  return g;
}

nlohmann::json to_json(const StableOperatorParams& p) {
  return {{"n_xi", p.n_xi()},
          {"n_in", p.n_in()},
          {"n_out", p.n_out()},
          {"rho", p.rho},
          {"eps", p.eps},
          {"W", matrix_to_json(p.W)},
          {"B_w", matrix_to_json(p.B_w)},
          {"C_m", matrix_to_json(p.C_m)},
          {"D_m", matrix_to_json(p.D_m)}};
}

StableOperatorParams operator_from_json(const nlohmann::json& j) {
  StableOperatorParams p;
  const int n_xi = j.at("n_xi").get<int>(), n_in = j.at("n_in").get<int>(),
            n_out = j.at("n_out").get<int>();
  auto read = [&](const char* key, int r, int c) {
    Mat M = matrix_from_json(j.at(key));
    if (M.size() == 0) M.resize(r, c);
    if (M.rows() != r || M.cols() != c) throw InvalidInput(std::string("operator json: bad shape for ") + key);
    return M;
  };
  p.W = read("W", n_xi, n_xi);
  p.B_w = read("B_w", n_xi, n_in);
  p.C_m = read("C_m", n_out, n_xi);
  p.D_m = read("D_m", n_out, n_in);
  p.rho = j.at("rho").get<double>();
  p.eps = j.at("eps").get<double>();
  p.validate();
  return p;
}

}  // namespace rnnpb

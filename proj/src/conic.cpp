#include "rnnpb/conic.hpp"

#include <chrono>
#include <cmath>
#include <limits>
#include <numeric>

#include "rnnpb/errors.hpp"

namespace rnnpb {

int VariableBlock::num_scalars() const {
  switch (kind) {
    case BlockKind::Symmetric:
      return rows * (rows + 1) / 2;
    case BlockKind::Diagonal:
      return rows;
    case BlockKind::Full:
      return rows * cols;
  }
  return 0;
}

Mat LmiConstraint::evaluate(const Vec& x) const {
  Mat F = constant;
  for (size_t k = 0; k < scalar_index.size(); ++k) F += x(scalar_index[k]) * coefficient[k];
  return F;
}

double min_eigenvalue(const Mat& S) {
  if (S.rows() == 0) return std::numeric_limits<double>::infinity();
  Eigen::SelfAdjointEigenSolver<Mat> es(S, Eigen::EigenvaluesOnly);
  return es.eigenvalues()(0);
}

// --- ConicProblem ------------------------------------------------------------

int ConicProblem::add_block(VariableBlock b) {
  for (const auto& existing : blocks_)
    if (existing.name == b.name) throw InvalidInput("duplicate block '" + b.name + "'");
  b.offset = num_scalars_;
  num_scalars_ += b.num_scalars();
  blocks_.push_back(std::move(b));
  return static_cast<int>(blocks_.size()) - 1;
}

int ConicProblem::add_symmetric(const std::string& name, int n) {
  return add_block({name, BlockKind::Symmetric, n, n, 0});
}

int ConicProblem::add_full(const std::string& name, int rows, int cols) {
  return add_block({name, BlockKind::Full, rows, cols, 0});
}

int ConicProblem::add_diagonal(const std::string& name, int n) {
  return add_block({name, BlockKind::Diagonal, n, n, 0});
}

void ConicProblem::add_lmi(LmiConstraint lmi) {
  for (int idx : lmi.scalar_index)
    if (idx < 0 || idx >= num_scalars_)
      throw InvalidInput("LMI '" + lmi.name + "' references an undeclared variable");
  lmis_.push_back(std::move(lmi));
}

int ConicProblem::find_block(const std::string& name) const {
  for (size_t i = 0; i < blocks_.size(); ++i)
    if (blocks_[i].name == name) return static_cast<int>(i);
  throw InvalidInput("no block named '" + name + "'");
}

Mat ConicProblem::value(int id, const Vec& x) const {
  const auto& b = blocks_.at(id);
  Mat X = Mat::Zero(b.rows, b.cols);
  int k = b.offset;
  switch (b.kind) {
    case BlockKind::Symmetric:
      for (int i = 0; i < b.rows; ++i)
        for (int j = i; j < b.cols; ++j) X(i, j) = X(j, i) = x(k++);
      break;
    case BlockKind::Diagonal:
      for (int i = 0; i < b.rows; ++i) X(i, i) = x(k++);
      break;
    case BlockKind::Full:
      for (int i = 0; i < b.rows; ++i)
        for (int j = 0; j < b.cols; ++j) X(i, j) = x(k++);
      break;
  }
  return X;
}

void ConicProblem::set_value(int id, const Mat& X, Vec& x) const {
  const auto& b = blocks_.at(id);
  if (X.rows() != b.rows || X.cols() != b.cols)
    throw InvalidInput("value for block '" + b.name + "' has wrong shape");
  int k = b.offset;
  switch (b.kind) {
    case BlockKind::Symmetric:
      for (int i = 0; i < b.rows; ++i)
        for (int j = i; j < b.cols; ++j) x(k++) = 0.5 * (X(i, j) + X(j, i));
      break;
    case BlockKind::Diagonal:
      for (int i = 0; i < b.rows; ++i) x(k++) = X(i, i);
      break;
    case BlockKind::Full:
      for (int i = 0; i < b.rows; ++i)
        for (int j = 0; j < b.cols; ++j) x(k++) = X(i, j);
      break;
  }
}

std::vector<double> ConicProblem::residuals(const Vec& x) const {
  std::vector<double> out;
  out.reserve(lmis_.size());
  for (const auto& lmi : lmis_) out.push_back(min_eigenvalue(lmi.evaluate(x)));
  return out;
}

// --- LmiBuilder --------------------------------------------------------------

LmiBuilder::LmiBuilder(const ConicProblem& problem, std::string name,
                       std::vector<int> partition)
    : problem_(&problem), name_(std::move(name)), partition_(std::move(partition)) {
  starts_.resize(partition_.size());
  for (size_t b = 0; b < partition_.size(); ++b) {
    starts_[b] = dim_;
    dim_ += partition_[b];
  }
  constant_ = Mat::Zero(dim_, dim_);
}

void LmiBuilder::place(Mat& target, int r, int c, const Mat& M) const {
  if (M.rows() != partition_.at(r) || M.cols() != partition_.at(c))
    throw InvalidInput("LMI '" + name_ + "': sub-block shape mismatch");
  if (r == c) {
    target.block(start(r), start(c), M.rows(), M.cols()) += 0.5 * (M + M.transpose());
  } else {
    target.block(start(r), start(c), M.rows(), M.cols()) += M;
    target.block(start(c), start(r), M.cols(), M.rows()) += M.transpose();
  }
}

LmiBuilder& LmiBuilder::constant(int r, int c, const Mat& M) {
  place(constant_, r, c, M);
  return *this;
}

LmiBuilder& LmiBuilder::term(int r, int c, int var, const Mat& L, const Mat& R,
                             bool transposed) {
  terms_.push_back({r, c, var, L, R, transposed});
  return *this;
}

LmiConstraint LmiBuilder::build() const {
  LmiConstraint lmi;
  lmi.name = name_;
  lmi.dim = dim_;
  lmi.constant = constant_;

  std::vector<int> slot(problem_->num_scalars(), -1);
  auto coefficient_for = [&](int scalar) -> Mat& {
    if (slot[scalar] < 0) {
      slot[scalar] = static_cast<int>(lmi.scalar_index.size());
      lmi.scalar_index.push_back(scalar);
      lmi.coefficient.push_back(Mat::Zero(dim_, dim_));
    }
    return lmi.coefficient[slot[scalar]];
  };

  for (const auto& t : terms_) {
    const auto& b = problem_->block(t.var);
    // Contribution of E_ij (or its transpose) through L * E * R.
    auto add_unit = [&](int scalar, int i, int j) {
      const int ii = t.transposed ? j : i;
      const int jj = t.transposed ? i : j;
      const Mat M = t.L.col(ii) * t.R.row(jj);
      place(coefficient_for(scalar), t.r, t.c, M);
    };
    int k = b.offset;
    switch (b.kind) {
      case BlockKind::Symmetric:
        for (int i = 0; i < b.rows; ++i)
          for (int j = i; j < b.cols; ++j) {
            add_unit(k, i, j);
            if (i != j) add_unit(k, j, i);
            ++k;
          }
        break;
      case BlockKind::Diagonal:
        for (int i = 0; i < b.rows; ++i) add_unit(k++, i, i);
        break;
      case BlockKind::Full:
        for (int i = 0; i < b.rows; ++i)
          for (int j = 0; j < b.cols; ++j) add_unit(k++, i, j);
        break;
    }
  }

  // Drop structurally zero coefficients.
  LmiConstraint pruned;
  pruned.name = lmi.name;
  pruned.dim = lmi.dim;
  pruned.constant = lmi.constant;
  for (size_t k = 0; k < lmi.scalar_index.size(); ++k) {
    if (lmi.coefficient[k].cwiseAbs().maxCoeff() > 0.0) {
      pruned.scalar_index.push_back(lmi.scalar_index[k]);
      pruned.coefficient.push_back(std::move(lmi.coefficient[k]));
    }
  }
  return pruned;
}

std::string to_string(SolveStatus s) {
  switch (s) {
    case SolveStatus::Feasible:
      return "feasible";
    case SolveStatus::Infeasible:
      return "infeasible";
    case SolveStatus::NumericalFailure:
      return "numerical_failure";
    case SolveStatus::Timeout:
      return "timeout";
  }
  return "unknown";
}

// --- BarrierSolver -----------------------------------------------------------

namespace {

// Barrier state for the augmented variable z = (x, t).
struct BarrierEval {
  bool inside = false;
  double value = 0.0;
};

class MarginBarrier {
 public:
  MarginBarrier(const ConicProblem& p, const SolverOptions& o)
      : problem_(p), opts_(o), n_(p.num_scalars()) {
    theta_ = 2.0;  // ball and cap terms
    for (const auto& lmi : p.lmis()) theta_ += lmi.dim;
  }

  int size() const { return n_ + 1; }
  double theta() const { return theta_; }

  // phi(z) = -mu t - sum logdet(F_j(x) - tI) - log(R^2 - |x|^2) - log(cap - t)
  BarrierEval value(const Vec& z, double mu) const {
    BarrierEval ev;
    const auto x = z.head(n_);
    const double t = z(n_);
    const double slack_ball = opts_.radius * opts_.radius - x.squaredNorm();
    const double slack_cap = opts_.margin_cap - t;
    if (!(slack_ball > 0.0) || !(slack_cap > 0.0)) return ev;
    double phi = -mu * t - std::log(slack_ball) - std::log(slack_cap);
    for (const auto& lmi : problem_.lmis()) {
      Mat S = lmi.evaluate(x);
      S.diagonal().array() -= t;
      Eigen::LLT<Mat> llt(S);
      if (llt.info() != Eigen::Success) return ev;
      const Mat& L = llt.matrixLLT();
      double logdet = 0.0;
      for (int i = 0; i < S.rows(); ++i) {
        const double d = L(i, i);
        if (!(d > 0.0)) return ev;
        logdet += 2.0 * std::log(d);
      }
      phi -= logdet;
    }
    if (!std::isfinite(phi)) return ev;
    ev.inside = true;
    ev.value = phi;
    return ev;
  }

  // Gradient and Hessian of phi at an interior point.
  void derivatives(const Vec& z, double mu, Vec& g, Mat& H) const {
    const int N = size();
    g = Vec::Zero(N);
    H = Mat::Zero(N, N);
    const Vec x = z.head(n_);
    const double t = z(n_);

    const double s_ball = opts_.radius * opts_.radius - x.squaredNorm();
    g.head(n_) += 2.0 * x / s_ball;
    H.topLeftCorner(n_, n_) += (4.0 / (s_ball * s_ball)) * x * x.transpose();
    H.topLeftCorner(n_, n_).diagonal().array() += 2.0 / s_ball;

    const double s_cap = opts_.margin_cap - t;
    g(n_) += -mu + 1.0 / s_cap;
    H(n_, n_) += 1.0 / (s_cap * s_cap);

    for (const auto& lmi : problem_.lmis()) {
      const int d = lmi.dim;
      Mat S = lmi.evaluate(x);
      S.diagonal().array() -= t;
      Eigen::LLT<Mat> llt(S);
      const auto L = llt.matrixL();
      const int nk = static_cast<int>(lmi.scalar_index.size());
      // Column k holds the scaled upper triangle of L^-1 F_k L^-T (last: t),
      // so that column inner products equal tr(S^-1 F_a S^-1 F_b).
      const int half = d * (d + 1) / 2;
      Mat Gm(half, nk + 1);
      Vec traces(nk + 1);
      for (int k = 0; k <= nk; ++k) {
        Mat Y = (k < nk) ? lmi.coefficient[k] : Mat(-Mat::Identity(d, d));
        L.solveInPlace(Y);
        Mat Yt = Y.transpose();
        L.solveInPlace(Yt);
        int row = 0;
        for (int c = 0; c < d; ++c) {
          Gm(row++, k) = Yt(c, c);
          for (int r = 0; r < c; ++r) Gm(row++, k) = std::sqrt(2.0) * Yt(r, c);
        }
        traces(k) = Yt.trace();
      }
      Mat Hk(nk + 1, nk + 1);
      Hk.setZero();
      Hk.selfadjointView<Eigen::Lower>().rankUpdate(Gm.transpose());
      Hk = Hk.selfadjointView<Eigen::Lower>();
      std::vector<int> idx(lmi.scalar_index);
      idx.push_back(n_);
      for (int a = 0; a <= nk; ++a) {
        g(idx[a]) -= traces(a);
        for (int b = 0; b <= nk; ++b) H(idx[a], idx[b]) += Hk(a, b);
      }
    }
  }

 private:
  const ConicProblem& problem_;
  const SolverOptions& opts_;
  int n_;
  double theta_;
};

}  // namespace

SolveResult BarrierSolver::solve(const ConicProblem& problem, const Vec& x0) const {
  using Clock = std::chrono::steady_clock;
  const auto started = Clock::now();
  const int n = problem.num_scalars();
  if (x0.size() != n) throw InvalidInput("initial point has wrong dimension");

  SolveResult result;
  MarginBarrier barrier(problem, options_);

  if (problem.lmis().empty()) {
    result.status = SolveStatus::Feasible;
    result.x = x0;
    result.margin = std::numeric_limits<double>::infinity();
    result.margin_upper_bound = result.margin;
    return result;
  }

  Vec z(n + 1);
  z.head(n) = x0;
  if (x0.norm() >= 0.5 * options_.radius) z.head(n) *= 0.5 * options_.radius / x0.norm();
  double lam = std::numeric_limits<double>::infinity();
  for (const auto& lmi : problem.lmis()) lam = std::min(lam, min_eigenvalue(lmi.evaluate(z.head(n))));
  z(n) = std::min(lam - 1.0, options_.margin_cap - 1.0);

  const double theta = barrier.theta();
  double mu = theta / (std::abs(z(n)) + 1.0);
  int steps = 0;
  bool timed_out = false;
  bool stalled = false;
  double upper = std::numeric_limits<double>::infinity();

  auto elapsed = [&] {
    return std::chrono::duration<double>(Clock::now() - started).count();
  };

  for (;;) {
    // Centering by damped Newton.
    double decrement = std::numeric_limits<double>::infinity();
    for (;;) {
      if (steps >= options_.max_newton_steps || elapsed() > options_.time_limit_seconds) {
        timed_out = true;
        break;
      }
      Vec g;
      Mat H;
      barrier.derivatives(z, mu, g, H);
      Eigen::LDLT<Mat> ldlt(H);
      Vec dz = ldlt.solve(-g);
      if (!dz.allFinite() || ldlt.info() != Eigen::Success) {
        H.diagonal().array() += 1e-12 * (1.0 + H.diagonal().cwiseAbs().maxCoeff());
        dz = H.ldlt().solve(-g);
      }
      if (!dz.allFinite()) {
        stalled = true;
        break;
      }
      ++steps;
      decrement = -g.dot(dz);
      if (decrement / 2.0 <= 1e-9) break;

      const BarrierEval here = barrier.value(z, mu);
      double alpha = 1.0;
      bool moved = false;
      while (alpha > 1e-14) {
        const Vec trial = z + alpha * dz;
        const BarrierEval ev = barrier.value(trial, mu);
        if (ev.inside && ev.value <= here.value - 0.01 * alpha * decrement) {
          z = trial;
          moved = true;
          break;
        }
        alpha *= 0.5;
      }
      if (!moved) {
        stalled = true;
        break;
      }
    }

    const double t = z(n);
    const double gap = theta / mu;
    const bool centred = decrement / 2.0 <= 1e-6;
    if (centred) upper = std::min(upper, t + gap);

    if (t >= options_.min_margin &&
        (gap <= std::max(options_.gap_tolerance, options_.relative_gap * t) ||
         t >= 0.5 * options_.margin_cap)) {
      result.status = SolveStatus::Feasible;
      break;
    }
    if (centred && upper < options_.min_margin) {
      result.status = SolveStatus::Infeasible;
      result.message = "margin upper bound below acceptance threshold";
      break;
    }
    if (timed_out || stalled || gap <= options_.gap_tolerance) {
      if (t >= options_.min_margin) {
        result.status = SolveStatus::Feasible;
      } else if (upper < options_.min_margin) {
        result.status = SolveStatus::Infeasible;
      } else {
        result.status = timed_out ? SolveStatus::Timeout : SolveStatus::NumericalFailure;
        result.message = timed_out ? "iteration or time limit reached"
                                   : "barrier centering stalled";
      }
      break;
    }
    mu *= options_.mu_growth;
  }

  result.x = z.head(n);
  result.margin = z(n);
  result.margin_upper_bound = upper;
  result.residuals = problem.residuals(result.x);
  result.newton_steps = steps;
  return result;
}

}  // namespace rnnpb

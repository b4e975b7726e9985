#pragma once

#include <string>
#include <vector>

#include "rnnpb/model.hpp"

namespace rnnpb {

enum class BlockKind { Symmetric, Full, Diagonal };

// A named matrix-valued decision variable. Symmetric blocks are parametrized
// by their upper triangle, diagonal blocks by their diagonal.
struct VariableBlock {
  std::string name;
  BlockKind kind = BlockKind::Full;
  int rows = 0;
  int cols = 0;
  int offset = 0;  // first scalar index in the stacked decision vector

  int num_scalars() const;
};

// F(x) = F0 + sum_k x_k F_k, required to be positive semidefinite.
struct LmiConstraint {
  std::string name;
  int dim = 0;
  Mat constant;
  std::vector<int> scalar_index;  // which decision scalars appear
  std::vector<Mat> coefficient;   // symmetric, one per entry of scalar_index

  Mat evaluate(const Vec& x) const;
};

class ConicProblem;

// Assembles one LMI out of a grid of sub-blocks. Off-diagonal contributions
// added at (r, c) are mirrored to (c, r) automatically.
class LmiBuilder {
 public:
  LmiBuilder(const ConicProblem& problem, std::string name,
             std::vector<int> partition);

  // block(r, c) += M
  LmiBuilder& constant(int r, int c, const Mat& M);
  // block(r, c) += L * X * R  (or L * X^T * R when transposed)
  LmiBuilder& term(int r, int c, int var, const Mat& L, const Mat& R,
                   bool transposed = false);

  LmiConstraint build() const;

 private:
  int start(int b) const { return starts_[b]; }
  void place(Mat& target, int r, int c, const Mat& M) const;

  const ConicProblem* problem_;
  std::string name_;
  std::vector<int> partition_;
  std::vector<int> starts_;
  int dim_ = 0;
  Mat constant_;
  struct Term {
    int r, c, var;
    Mat L, R;
    bool transposed;
  };
  std::vector<Term> terms_;
};

class ConicProblem {
 public:
  int add_symmetric(const std::string& name, int n);
  int add_full(const std::string& name, int rows, int cols);
  int add_diagonal(const std::string& name, int n);

  void add_lmi(LmiConstraint lmi);

  const std::vector<VariableBlock>& blocks() const { return blocks_; }
  const std::vector<LmiConstraint>& lmis() const { return lmis_; }
  const VariableBlock& block(int id) const { return blocks_.at(id); }
  int find_block(const std::string& name) const;
  int num_scalars() const { return num_scalars_; }

  // Matrix value of a block, and its inverse map into the stacked vector.
  Mat value(int id, const Vec& x) const;
  void set_value(int id, const Mat& X, Vec& x) const;

  // Smallest eigenvalue of every LMI at x.
  std::vector<double> residuals(const Vec& x) const;

 private:
  int add_block(VariableBlock b);

  std::vector<VariableBlock> blocks_;
  std::vector<LmiConstraint> lmis_;
  int num_scalars_ = 0;
};

enum class SolveStatus { Feasible, Infeasible, NumericalFailure, Timeout };
std::string to_string(SolveStatus s);

struct SolverOptions {
  // Solutions are accepted once every LMI holds with this eigenvalue margin.
  double min_margin = 1e-10;
  // Upper cap on the margin being maximized; keeps the iterates centred.
  double margin_cap = 1e-2;
  // Decision vector is confined to ||x|| <= radius.
  double radius = 1e4;
  double gap_tolerance = 1e-11;
  // A feasible margin is accepted once within this fraction of the optimum.
  double relative_gap = 0.05;
  double mu_growth = 10.0;
  int max_newton_steps = 600;
  double time_limit_seconds = 60.0;
};

struct SolveResult {
  SolveStatus status = SolveStatus::NumericalFailure;
  Vec x;
  // Achieved common margin t: F_j(x) >= t I for every LMI.
  double margin = 0.0;
  // Certified upper bound on the best achievable margin within the ball.
  double margin_upper_bound = 0.0;
  std::vector<double> residuals;
  int newton_steps = 0;
  std::string message;
};

// Pluggable semidefinite feasibility engine.
class FeasibilitySolver {
 public:
  virtual ~FeasibilitySolver() = default;
  virtual SolveResult solve(const ConicProblem& problem, const Vec& x0) const = 0;
};

// Reference backend: maximizes the common margin t subject to
// F_j(x) - t I >= 0 with a log-det barrier path-following method. Infeasibility
// is certified by the duality-gap bound of the central path.
class BarrierSolver : public FeasibilitySolver {
 public:
  explicit BarrierSolver(SolverOptions options = {}) : options_(options) {}
  SolveResult solve(const ConicProblem& problem, const Vec& x0) const override;
  const SolverOptions& options() const { return options_; }

 private:
  SolverOptions options_;
};

double min_eigenvalue(const Mat& S);

}  // namespace rnnpb

#pragma once

#include <optional>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <json.hpp>

namespace rnnpb {

using Vec = Eigen::VectorXd;
using Mat = Eigen::MatrixXd;

// Scalar sigmoid channels. Every member satisfies sigma(0) = 0,
// sigma'(0) = 1, |sigma| <= 1, 0 < sigma' <= 1, and 1 - sigma' is even and
// nondecreasing in |v|.
enum class Activation {
  Tanh,
  // (2/pi) * atan(pi v / 2)
  ScaledAtan,
};

std::string to_string(Activation a);
Activation activation_from_string(const std::string& tag);

double sigma(Activation a, double v);
double sigma_prime(Activation a, double v);

// Derivative of the deadzone-like map q(v) = v - sigma(v), i.e. 1 - sigma'(v).
double q_deriv(Activation a, double v);

// x+ = A_x x + B_u u + B_sigma sigma(A_tilde x + B_tilde u) + w,  y = C x
class RnnModel {
 public:
  RnnModel(Mat A_x, Mat B_u, Mat B_sigma, Mat A_tilde, Mat B_tilde, Mat C,
           std::vector<Activation> activations);

  int n() const { return static_cast<int>(A_x_.rows()); }
  int m() const { return static_cast<int>(B_u_.cols()); }
  int nu() const { return static_cast<int>(B_sigma_.cols()); }
  int ny() const { return static_cast<int>(C_.rows()); }

  const Mat& A_x() const { return A_x_; }
  const Mat& B_u() const { return B_u_; }
  const Mat& B_sigma() const { return B_sigma_; }
  const Mat& A_tilde() const { return A_tilde_; }
  const Mat& B_tilde() const { return B_tilde_; }
  const Mat& C() const { return C_; }
  const std::vector<Activation>& activations() const { return activations_; }

  // Sector form: A = A_x + B_sigma A_tilde, B = B_u + B_sigma B_tilde,
  // B_q = -B_sigma, so that x+ = A x + B u + B_q q(v) + w.
  const Mat& A() const { return A_; }
  const Mat& B() const { return B_; }
  const Mat& B_q() const { return B_q_; }

  Vec activate(const Vec& v) const;
  Vec activation_slopes(const Vec& v) const;
  Vec q(const Vec& v) const;

  Vec preactivation(const Vec& x, const Vec& u) const;
  Vec output(const Vec& x) const;

 private:
  Mat A_x_, B_u_, B_sigma_, A_tilde_, B_tilde_, C_;
  std::vector<Activation> activations_;
  Mat A_, B_, B_q_;
};

struct Equilibrium {
  Vec x_bar;
  Vec u_bar;
  Vec y_bar;
  Vec v_bar;
  double residual = 0.0;
};

// U = {u : G_u u <= b_u},  Y = {y : G_y y <= b_y},  w in E(Q_w0)
struct ConstraintSets {
  Mat G_u;
  Vec b_u;
  Mat G_y;
  Vec b_y;
  Mat Q_w0;

  void validate(int m, int ny, int n) const;
  // Strict interior test of (u_bar, y_bar).
  bool strictly_admits(const Equilibrium& eq) const;
};

// Box constraints lo <= u <= hi written as [I; -I] u <= [hi; -lo].
void box_polytope(const Vec& lo, const Vec& hi, Mat& G, Vec& b);

// Model step in the sigmoid form.
Vec step(const RnnModel& model, const Vec& x, const Vec& u, const Vec& w);

// Model step in the sector form A x + B u + B_q q(v) + w.
Vec step_sector_form(const RnnModel& model, const Vec& x, const Vec& u,
                     const Vec& w);

struct EquilibriumOptions {
  int max_iterations = 200;
  double tolerance = 1e-10;
  double min_damping = 1.0 / (1 << 20);
};

// Damped Newton on r(x) = x - f(x, u_bar, 0). Throws NoEquilibriumError.
Equilibrium find_equilibrium(const RnnModel& model, const Vec& u_bar,
                             const Vec& x_init,
                             const EquilibriumOptions& options = {});

// Completes y_bar, v_bar and residual for a given (x_bar, u_bar).
Equilibrium make_equilibrium(const RnnModel& model, const Vec& x_bar,
                             const Vec& u_bar);

// --- JSON -----------------------------------------------------------------

nlohmann::json matrix_to_json(const Mat& M);
Mat matrix_from_json(const nlohmann::json& j);
nlohmann::json vector_to_json(const Vec& v);
Vec vector_from_json(const nlohmann::json& j);

nlohmann::json to_json(const RnnModel& model,
                       const std::optional<Equilibrium>& eq = std::nullopt);
RnnModel model_from_json(const nlohmann::json& j);
std::optional<Equilibrium> equilibrium_from_json(const RnnModel& model,
                                                 const nlohmann::json& j);

nlohmann::json to_json(const ConstraintSets& c);
ConstraintSets constraints_from_json(const nlohmann::json& j);

}  // namespace rnnpb

#include "rnnpb/model.hpp"

#include <cmath>
#include <numbers>
#include <sstream>

#include "rnnpb/errors.hpp"

namespace rnnpb {

namespace {

void require(bool cond, const std::string& msg) {
  if (!cond) throw InvalidInput(msg);
}

std::string shape(const Mat& M) {
  std::ostringstream os;
  os << M.rows() << "x" << M.cols();
  return os.str();
}

constexpr double kHalfPi = std::numbers::pi / 2.0;

}  // namespace

std::string to_string(Activation a) {
  switch (a) {
    case Activation::Tanh:
      return "tanh";
    case Activation::ScaledAtan:
      return "atan";
  }
  return "unknown";
}

Activation activation_from_string(const std::string& tag) {
  if (tag == "tanh") return Activation::Tanh;
  if (tag == "atan") return Activation::ScaledAtan;
  throw InvalidInput("unknown activation tag '" + tag + "'");
}

double sigma(Activation a, double v) {
  switch (a) {
    case Activation::Tanh:
      return std::tanh(v);
    case Activation::ScaledAtan:
      return std::atan(kHalfPi * v) / kHalfPi;
  }
  return 0.0;
}

double sigma_prime(Activation a, double v) {
  switch (a) {
    case Activation::Tanh: {
      const double t = std::tanh(v);
      return 1.0 - t * t;
    }
    case Activation::ScaledAtan: {
      const double c = kHalfPi * v;
      return 1.0 / (1.0 + c * c);
    }
  }
  return 0.0;
}

double q_deriv(Activation a, double v) {
  // Written without the cancellation in 1 - sigma'(v).
  switch (a) {
    case Activation::Tanh: {
      const double t = std::tanh(v);
      return t * t;
    }
    case Activation::ScaledAtan: {
      const double c2 = kHalfPi * v * kHalfPi * v;
      return c2 / (1.0 + c2);
    }
  }
  return 0.0;
}

RnnModel::RnnModel(Mat A_x, Mat B_u, Mat B_sigma, Mat A_tilde, Mat B_tilde,
                   Mat C, std::vector<Activation> activations)
    : A_x_(std::move(A_x)),
      B_u_(std::move(B_u)),
      B_sigma_(std::move(B_sigma)),
      A_tilde_(std::move(A_tilde)),
      B_tilde_(std::move(B_tilde)),
      C_(std::move(C)),
      activations_(std::move(activations)) {
  const auto n = A_x_.rows();
  const auto m = B_u_.cols();
  const auto nu = B_sigma_.cols();
  require(n >= 1 && A_x_.cols() == n, "A_x must be square, got " + shape(A_x_));
  require(m >= 1 && B_u_.rows() == n, "B_u must be n x m, got " + shape(B_u_));
  require(B_sigma_.rows() == n, "B_sigma must be n x nu, got " + shape(B_sigma_));
  require(A_tilde_.rows() == nu && A_tilde_.cols() == n,
          "A_tilde must be nu x n, got " + shape(A_tilde_));
  require(B_tilde_.rows() == nu && B_tilde_.cols() == m,
          "B_tilde must be nu x m, got " + shape(B_tilde_));
  require(C_.rows() >= 1 && C_.cols() == n, "C must be ny x n, got " + shape(C_));
  require(static_cast<Eigen::Index>(activations_.size()) == nu,
          "one activation per nonlinear channel required");
  require(A_x_.allFinite() && B_u_.allFinite() && B_sigma_.allFinite() &&
              A_tilde_.allFinite() && B_tilde_.allFinite() && C_.allFinite(),
          "model matrices must be finite");

  A_ = A_x_ + B_sigma_ * A_tilde_;
  B_ = B_u_ + B_sigma_ * B_tilde_;
  B_q_ = -B_sigma_;
}

Vec RnnModel::activate(const Vec& v) const {
  Vec out(v.size());
  for (Eigen::Index i = 0; i < v.size(); ++i) out(i) = sigma(activations_[i], v(i));
  return out;
}

Vec RnnModel::activation_slopes(const Vec& v) const {
  Vec out(v.size());
  for (Eigen::Index i = 0; i < v.size(); ++i)
    out(i) = sigma_prime(activations_[i], v(i));
  return out;
}

Vec RnnModel::q(const Vec& v) const { return v - activate(v); }

Vec RnnModel::preactivation(const Vec& x, const Vec& u) const {
  return A_tilde_ * x + B_tilde_ * u;
}

Vec RnnModel::output(const Vec& x) const { return C_ * x; }

void ConstraintSets::validate(int m, int ny, int n) const {
  require(G_u.cols() == m && G_u.rows() == b_u.size() && G_u.rows() >= 1,
          "input polytope G_u must be n_t x m with matching b_u");
  require(G_y.cols() == ny && G_y.rows() == b_y.size() && G_y.rows() >= 1,
          "output polytope G_y must be n_r x n_y with matching b_y");
  require(Q_w0.rows() == n && Q_w0.cols() == n, "Q_w0 must be n x n");
  require((Q_w0 - Q_w0.transpose()).norm() <= 1e-12 * (1.0 + Q_w0.norm()),
          "Q_w0 must be symmetric");
  Eigen::LLT<Mat> llt(Q_w0);
  require(llt.info() == Eigen::Success, "Q_w0 must be positive definite");
}

bool ConstraintSets::strictly_admits(const Equilibrium& eq) const {
  return ((b_u - G_u * eq.u_bar).array() > 0.0).all() &&
         ((b_y - G_y * eq.y_bar).array() > 0.0).all();
}

void box_polytope(const Vec& lo, const Vec& hi, Mat& G, Vec& b) {
  const auto d = lo.size();
  G.resize(2 * d, d);
  G << Mat::Identity(d, d), -Mat::Identity(d, d);
  b.resize(2 * d);
  b << hi, -lo;
}

namespace {

void check_step_dims(const RnnModel& model, const Vec& x, const Vec& u,
                     const Vec& w) {
  require(x.size() == model.n(), "state has wrong dimension");
  require(u.size() == model.m(), "input has wrong dimension");
  require(w.size() == model.n(), "disturbance has wrong dimension");
}

}  // namespace

Vec step(const RnnModel& model, const Vec& x, const Vec& u, const Vec& w) {
  check_step_dims(model, x, u, w);
  const Vec v = model.preactivation(x, u);
  return model.A_x() * x + model.B_u() * u + model.B_sigma() * model.activate(v) + w;
}

Vec step_sector_form(const RnnModel& model, const Vec& x, const Vec& u,
                     const Vec& w) {
  check_step_dims(model, x, u, w);
  const Vec v = model.preactivation(x, u);
  return model.A() * x + model.B() * u + model.B_q() * model.q(v) + w;
}

Equilibrium make_equilibrium(const RnnModel& model, const Vec& x_bar,
                             const Vec& u_bar) {
  Equilibrium eq;
  eq.x_bar = x_bar;
  eq.u_bar = u_bar;
  eq.y_bar = model.output(x_bar);
  eq.v_bar = model.preactivation(x_bar, u_bar);
  eq.residual = (x_bar - step(model, x_bar, u_bar, Vec::Zero(model.n()))).norm();
  return eq;
}

Equilibrium find_equilibrium(const RnnModel& model, const Vec& u_bar,
                             const Vec& x_init, const EquilibriumOptions& options) {
  require(u_bar.size() == model.m(), "u_bar has wrong dimension");
  require(x_init.size() == model.n(), "x_init has wrong dimension");
  const int n = model.n();
  const Vec zero = Vec::Zero(n);
  const Mat I = Mat::Identity(n, n);

  auto residual_of = [&](const Vec& x) -> Vec { return x - step(model, x, u_bar, zero); };

  Vec x = x_init;
  Vec r = residual_of(x);
  double rnorm = r.norm();
  for (int it = 0; it < options.max_iterations; ++it) {
    if (rnorm <= options.tolerance) return make_equilibrium(model, x, u_bar);
    const Vec slopes = model.activation_slopes(model.preactivation(x, u_bar));
    const Mat J = I - model.A_x() - model.B_sigma() * slopes.asDiagonal() * model.A_tilde();
    const Vec dx = J.fullPivLu().solve(-r);
    if (!dx.allFinite()) break;

    double alpha = 1.0;
    bool accepted = false;
    while (alpha >= options.min_damping) {
      const Vec x_try = x + alpha * dx;
      const Vec r_try = residual_of(x_try);
      const double n_try = r_try.norm();
      if (n_try < rnorm) {
        x = x_try;
        r = r_try;
        rnorm = n_try;
        accepted = true;
        break;
      }
      alpha *= 0.5;
    }
    if (!accepted) break;
  }
  if (rnorm <= options.tolerance) return make_equilibrium(model, x, u_bar);
  std::ostringstream os;
  os << "no equilibrium found (last residual " << rnorm << ")";
  throw NoEquilibriumError(os.str(), rnorm);
}

// --- JSON -----------------------------------------------------------------

nlohmann::json matrix_to_json(const Mat& M) {
  auto rows = nlohmann::json::array();
  for (Eigen::Index i = 0; i < M.rows(); ++i) {
    auto row = nlohmann::json::array();
    for (Eigen::Index j = 0; j < M.cols(); ++j) row.push_back(M(i, j));
    rows.push_back(std::move(row));
  }
  return rows;
}

Mat matrix_from_json(const nlohmann::json& j) {
  require(j.is_array(), "matrix must be a nested array");
  const auto rows = static_cast<Eigen::Index>(j.size());
  if (rows == 0) return Mat(0, 0);
  const auto cols = static_cast<Eigen::Index>(j.at(0).size());
  Mat M(rows, cols);
  for (Eigen::Index i = 0; i < rows; ++i) {
    const auto& row = j.at(i);
    require(row.is_array() && static_cast<Eigen::Index>(row.size()) == cols,
            "ragged matrix rows");
    for (Eigen::Index c = 0; c < cols; ++c) M(i, c) = row.at(c).get<double>();
  }
  return M;
}

nlohmann::json vector_to_json(const Vec& v) {
  auto arr = nlohmann::json::array();
  for (Eigen::Index i = 0; i < v.size(); ++i) arr.push_back(v(i));
  return arr;
}

Vec vector_from_json(const nlohmann::json& j) {
  require(j.is_array(), "vector must be an array");
  Vec v(static_cast<Eigen::Index>(j.size()));
  for (Eigen::Index i = 0; i < v.size(); ++i) v(i) = j.at(i).get<double>();
  return v;
}

namespace {

// Matrices with zero columns (nu = 0) serialize as rows of empty arrays.
Mat matrix_from_json_shaped(const nlohmann::json& j, Eigen::Index rows,
                            Eigen::Index cols) {
  Mat M = matrix_from_json(j);
  if (M.size() == 0) return Mat(rows, cols);
  return M;
}

}  // namespace

nlohmann::json to_json(const RnnModel& model, const std::optional<Equilibrium>& eq) {
  nlohmann::json j;
  j["n"] = model.n();
  j["m"] = model.m();
  j["nu"] = model.nu();
  j["ny"] = model.ny();
  j["A_x"] = matrix_to_json(model.A_x());
  j["B_u"] = matrix_to_json(model.B_u());
  j["B_sigma"] = matrix_to_json(model.B_sigma());
  j["A_tilde"] = matrix_to_json(model.A_tilde());
  j["B_tilde"] = matrix_to_json(model.B_tilde());
  j["C"] = matrix_to_json(model.C());
  auto tags = nlohmann::json::array();
  for (auto a : model.activations()) tags.push_back(to_string(a));
  j["activations"] = tags;
  if (eq) {
    j["equilibrium"] = {{"x_bar", vector_to_json(eq->x_bar)},
                        {"u_bar", vector_to_json(eq->u_bar)}};
  }
  return j;
}

RnnModel model_from_json(const nlohmann::json& j) {
  try {
    std::vector<Activation> acts;
    for (const auto& t : j.at("activations")) acts.push_back(activation_from_string(t));
    const Mat A_x = matrix_from_json(j.at("A_x"));
    const Mat B_u = matrix_from_json(j.at("B_u"));
    const auto n = A_x.rows();
    const auto m = B_u.cols();
    const auto nu = static_cast<Eigen::Index>(acts.size());
    return RnnModel(A_x, B_u, matrix_from_json_shaped(j.at("B_sigma"), n, nu),
                    matrix_from_json_shaped(j.at("A_tilde"), nu, n),
                    matrix_from_json_shaped(j.at("B_tilde"), nu, m),
                    matrix_from_json(j.at("C")), std::move(acts));
  } catch (const nlohmann::json::exception& e) {
    throw InvalidInput(std::string("malformed model JSON: ") + e.what());
  }
}

std::optional<Equilibrium> equilibrium_from_json(const RnnModel& model,
                                                 const nlohmann::json& j) {
  if (!j.contains("equilibrium")) return std::nullopt;
  const auto& e = j.at("equilibrium");
  const Vec x_bar = vector_from_json(e.at("x_bar"));
  const Vec u_bar = vector_from_json(e.at("u_bar"));
  require(x_bar.size() == model.n() && u_bar.size() == model.m(),
          "equilibrium block has wrong dimensions");
  return make_equilibrium(model, x_bar, u_bar);
}

nlohmann::json to_json(const ConstraintSets& c) {
  return {{"G_u", matrix_to_json(c.G_u)}, {"b_u", vector_to_json(c.b_u)},
          {"G_y", matrix_to_json(c.G_y)}, {"b_y", vector_to_json(c.b_y)},
          {"Q_w0", matrix_to_json(c.Q_w0)}};
}

ConstraintSets constraints_from_json(const nlohmann::json& j) {
  try {
    ConstraintSets c;
    c.G_u = matrix_from_json(j.at("G_u"));
    c.b_u = vector_from_json(j.at("b_u"));
    c.G_y = matrix_from_json(j.at("G_y"));
    c.b_y = vector_from_json(j.at("b_y"));
    c.Q_w0 = matrix_from_json(j.at("Q_w0"));
    return c;
  } catch (const nlohmann::json::exception& e) {
    throw InvalidInput(std::string("malformed constraint JSON: ") + e.what());
  }
}

}  // namespace rnnpb

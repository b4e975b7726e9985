#include "rnnpb/trajectory.hpp"

#include <charconv>
#include <fstream>
#include <sstream>

#include "rnnpb/errors.hpp"

namespace rnnpb {

void Trajectory::reserve(int T) {
  for (auto* s : {&x, &u, &y, &u_b, &u_tilde, &w, &w_e}) s->reserve(T);
}

void Trajectory::validate() const {
  const size_t T = x.size();
  for (auto* s : {&u, &y, &u_b, &u_tilde, &w})
    if (s->size() != T) throw InvalidInput("trajectory: sequence lengths differ");
  if (!w_e.empty() && w_e.size() != T)
    throw InvalidInput("trajectory: w_e length differs");
}

namespace {

// Shortest representation that parses back to the same double.
void put(std::string& line, double v) {
  char buf[32];
  auto r = std::to_chars(buf, buf + sizeof buf, v);
  line.append(buf, r.ptr);
}

void put_vec(std::string& line, const Vec& v) {
  for (Eigen::Index i = 0; i < v.size(); ++i) {
    line += ',';
    put(line, v(i));
  }
}

void header(std::string& line, const char* prefix, int count) {
  for (int i = 1; i <= count; ++i) {
    line += ',';
    line += prefix;
    line += std::to_string(i);
  }
}

double parse_double(const std::string& s) {
  double v = 0.0;
  auto r = std::from_chars(s.data(), s.data() + s.size(), v);
  if (r.ec != std::errc() || r.ptr != s.data() + s.size())
    throw InvalidInput("trajectory csv: bad number '" + s + "'");
  return v;
}

}  // namespace

void write_trajectory_csv(const Trajectory& t, int n, int m, int ny, std::ostream& out) {
  t.validate();
  std::string line = "k";
  header(line, "x_", n);
  header(line, "u_", m);
  header(line, "y_", ny);
  header(line, "ub_", m);
  header(line, "ubtilde_", m);
  header(line, "w_", n);
  out << line << '\n';
  for (int k = 0; k < t.horizon(); ++k) {
    line = std::to_string(k);
    put_vec(line, t.x[k]);
    put_vec(line, t.u[k]);
    put_vec(line, t.y[k]);
    put_vec(line, t.u_b[k]);
    put_vec(line, t.u_tilde[k]);
    put_vec(line, t.w[k]);
    out << line << '\n';
  }
}

void export_trajectory(const Trajectory& t, int n, int m, int ny, const std::string& path) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw InvalidInput("cannot write trajectory to " + path);
  write_trajectory_csv(t, n, m, ny, f);
  if (!f) throw InvalidInput("error writing " + path);
}

Trajectory parse_trajectory_csv(std::istream& in) {
  std::string line;
  if (!std::getline(in, line)) throw InvalidInput("trajectory csv: missing header");
  std::vector<std::string> cols;
  {
    std::stringstream ss(line);
    std::string c;
    while (std::getline(ss, c, ',')) cols.push_back(c);
  }
  if (cols.empty() || cols[0] != "k") throw InvalidInput("trajectory csv: bad header");
  auto count = [&](const std::string& prefix) {
    int c = 0;
    for (const auto& s : cols)
      if (s.rfind(prefix, 0) == 0 && s.find_first_not_of("0123456789", prefix.size()) == std::string::npos)
        ++c;
    return c;
  };
  const int n = count("x_"), m = count("u_"), ny = count("y_");
  if (count("ub_") != m || count("ubtilde_") != m || count("w_") != n ||
      static_cast<int>(cols.size()) != 1 + 2 * n + 3 * m + ny)
    throw InvalidInput("trajectory csv: inconsistent header");

  Trajectory t;
  int k = 0;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::vector<double> vals;
    std::stringstream ss(line);
    std::string c;
    while (std::getline(ss, c, ',')) vals.push_back(parse_double(c));
    if (vals.size() != cols.size()) throw InvalidInput("trajectory csv: ragged row");
    if (vals[0] != k) throw InvalidInput("trajectory csv: step index out of order");
    size_t p = 1;
    auto take = [&](int len) {
      Vec v = Eigen::Map<const Vec>(vals.data() + p, len);
      p += len;
      return v;
    };
    t.x.push_back(take(n));
    t.u.push_back(take(m));
    t.y.push_back(take(ny));
    t.u_b.push_back(take(m));
    t.u_tilde.push_back(take(m));
    t.w.push_back(take(n));
    ++k;
  }
  return t;
}

Trajectory import_trajectory(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw InvalidInput("cannot read trajectory from " + path);
  return parse_trajectory_csv(f);
}

}  // namespace rnnpb

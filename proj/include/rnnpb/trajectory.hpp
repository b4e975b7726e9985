#pragma once

#include <iosfwd>
#include <string>
#include <vector>

#include "rnnpb/model.hpp"

namespace rnnpb {

// Closed-loop record, one entry per step k = 0..T-1. u_tilde is the boost
// input before projection, w_e the reconstructed exogenous signal fed to the
// boosting operator.
struct Trajectory {
  std::vector<Vec> x, u, y, u_b, u_tilde, w, w_e;

  int horizon() const { return static_cast<int>(x.size()); }
  void reserve(int T);
  // Throws InvalidInput when the per-step sequences disagree in length.
  void validate() const;
};

// CSV with header k,x_1..x_n,u_1..u_m,y_1..y_ny,ub_1..ub_m,ubtilde_1..ubtilde_m,w_1..w_n.
// w_e is not part of the file format.
void write_trajectory_csv(const Trajectory& t, int n, int m, int ny, std::ostream& out);
void export_trajectory(const Trajectory& t, int n, int m, int ny, const std::string& path);
Trajectory parse_trajectory_csv(std::istream& in);
Trajectory import_trajectory(const std::string& path);

}  // namespace rnnpb

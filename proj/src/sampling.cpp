#include "rnnpb/sampling.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <exception>
#include <mutex>
#include <thread>
#include <vector>

#include "rnnpb/errors.hpp"

namespace rnnpb {

Rng substream(std::uint64_t seed, std::uint64_t index) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(index), static_cast<std::uint32_t>(index >> 32)};
  return Rng(seq);
}

Vec sample_gaussian(Rng& rng, int n) {
  std::normal_distribution<double> N(0.0, 1.0);
  Vec z(n);
  for (int i = 0; i < n; ++i) z(i) = N(rng);
  return z;
}

Vec sample_unit_ball(Rng& rng, int n, bool on_boundary) {
  if (n == 0) return Vec(0);
  Vec z = sample_gaussian(rng, n);
  double r = z.norm();
  while (r == 0.0) {
    z = sample_gaussian(rng, n);
    r = z.norm();
  }
  z /= r;
  if (on_boundary) return z;
  std::uniform_real_distribution<double> U(0.0, 1.0);
  return z * std::pow(U(rng), 1.0 / n);
}

EllipsoidSampler::EllipsoidSampler(const Mat& shape) {
  Eigen::LLT<Mat> llt(shape.inverse());
  if (llt.info() != Eigen::Success) throw InvalidInput("ellipsoid shape is not positive definite");
  factor_ = llt.matrixL();
}

Vec EllipsoidSampler::operator()(Rng& rng, bool on_boundary) const {
  return factor_ * sample_unit_ball(rng, static_cast<int>(factor_.rows()), on_boundary);
}

Vec sample_box(Rng& rng, const Vec& g_b) {
  std::uniform_real_distribution<double> U(-1.0, 1.0);
  Vec v(g_b.size());
  for (Eigen::Index i = 0; i < v.size(); ++i) v(i) = U(rng) / g_b(i);
  return v;
}

void parallel_for(int count, int workers, const std::function<void(int)>& body) {
  if (workers <= 0) workers = static_cast<int>(std::max(1u, std::thread::hardware_concurrency()));
  workers = std::min(workers, count);
  if (workers <= 1) {
    for (int i = 0; i < count; ++i) body(i);
    return;
  }
  std::atomic<int> next{0};
  std::exception_ptr error;
  std::mutex error_mutex;
  auto run = [&] {
    for (int i; (i = next.fetch_add(1)) < count;) {
      try {
        body(i);
      } catch (...) {
        std::lock_guard<std::mutex> lock(error_mutex);
        if (!error) error = std::current_exception();
      }
    }
  };
  std::vector<std::thread> pool;
  for (int t = 1; t < workers; ++t) pool.emplace_back(run);
  run();
  for (auto& t : pool) t.join();
  if (error) std::rethrow_exception(error);
}

}  // namespace rnnpb

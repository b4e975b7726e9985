#pragma once

#include <cstdint>
#include <functional>
#include <random>

#include "rnnpb/model.hpp"

namespace rnnpb {

using Rng = std::mt19937_64;

// Independent stream for (seed, index). Results never depend on how indices
// are split across workers.
Rng substream(std::uint64_t seed, std::uint64_t index);

Vec sample_gaussian(Rng& rng, int n);
// Uniform in the closed unit ball, or on the unit sphere when on_boundary.
Vec sample_unit_ball(Rng& rng, int n, bool on_boundary = false);

// Maps the unit ball onto {v : v' S v <= 1} through the Cholesky factor of
// S^-1, so one draw costs a triangular product.
class EllipsoidSampler {
 public:
  explicit EllipsoidSampler(const Mat& shape);
  Vec operator()(Rng& rng, bool on_boundary = false) const;

 private:
  Mat factor_;  // lower Cholesky factor of shape^-1
};

// Uniform in the box |g_i v_i| <= 1.
Vec sample_box(Rng& rng, const Vec& g_b);

// Runs body(i) for i in [0, count) on up to `workers` threads (0 = hardware
// concurrency). Each index is processed exactly once.
void parallel_for(int count, int workers, const std::function<void(int)>& body);

}  // namespace rnnpb

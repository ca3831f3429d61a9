#pragma once

#include <array>
#include <cstdint>

#include "deltamem/matrix.hpp"

namespace deltamem {

// xoshiro256** (Blackman & Vigna) seeded through splitmix64. The stream is a
// pure function of the 64-bit seed, so runs are reproducible across platforms.
// Gaussians use the Box-Muller transform and cache the second variate.
class Rng {
 public:
  explicit Rng(std::uint64_t seed = 0);

  std::uint64_t seed() const noexcept { return seed_; }

  std::uint64_t next_u64();

  // Uniform on [0, 1) with 53 random bits.
  double uniform();

  // Uniform integer in [0, n); unbiased (rejection on the top bits).
  std::uint64_t below(std::uint64_t n);

  double gaussian();

  // Independent stream derived from (seed, stream_id). Splitting does not
  // advance this generator, so the derived streams are order independent.
  Rng split(std::uint64_t stream_id) const;

  Matrix gaussian_matrix(std::size_t rows, std::size_t cols, double stddev = 1.0);

 private:
  std::uint64_t seed_;
  std::array<std::uint64_t, 4> s_{};
  bool has_spare_ = false;
  double spare_ = 0.0;
};

std::uint64_t splitmix64(std::uint64_t& state);

}  // namespace deltamem

#pragma once

#include <cstddef>
#include <cstdint>
#include <istream>
#include <optional>
#include <ostream>
#include <utility>
#include <vector>

#include "deltamem/deltaformer.hpp"
#include "deltamem/matrix.hpp"
#include "deltamem/rng.hpp"

namespace deltamem {

// n unit keys in R^d; epsilon is the realized max |k_i . k_j|, i != j.
struct KeyEnsemble {
  Matrix keys;
  double epsilon = 0.0;
  std::size_t n() const noexcept { return keys.rows(); }
  std::size_t d() const noexcept { return keys.cols(); }
};

double max_coherence(const Matrix& keys);

// The first n standard basis vectors of R^d (epsilon exactly 0). n <= d.
KeyEnsemble orthonormal_keys(std::size_t n, std::size_t d);

// Almost-orthogonal keys with epsilon <= eps_target < 1/8.
// Each attempt draws normalized Gaussian rows one at a time and redraws a
// row (bounded number of times) until it is within eps_target of every
// accepted row. When n > d, d is a power of two, n <= 2d and
// 1/sqrt(d) <= eps_target, the randomly rotated frame [I; H/sqrt(d)]
// (H Sylvester-Hadamard) is used instead: random rows essentially never get
// there. Throws DimensionError unless 0 < eps_target < 1/8, InfeasibleError
// (with the best epsilon seen) when the budget runs out.
KeyEnsemble generate_keys(std::size_t n, std::size_t d, double eps_target, const Rng& rng,
                          std::size_t max_attempts = 1000);

// Best-effort low-coherence keys for regimes where eps < 1/8 is out of
// reach (n >> d): gradient descent on sum_{i != j} (k_i . k_j)^4 with
// renormalization. No epsilon guarantee.
KeyEnsemble spread_keys(std::size_t n, std::size_t d, const Rng& rng, std::size_t iterations = 200);

// Nearest of {-1, 0, 1, 2}; DomainError if x is farther than 4 eps from it.
int round_f(double x, double eps);

// Swaps exchange the contents of slots first and second, first > second;
// slots are zero-based.
struct SwapTrace {
  std::size_t n = 0;
  std::vector<std::pair<std::size_t, std::size_t>> swaps;
  Matrix initial_values;  // n x d_v
};

// Uniform random swaps over the C(n,2) pairs.
std::vector<std::pair<std::size_t, std::size_t>> random_swaps(std::size_t n, std::size_t count, Rng& rng);

// Throws DimensionError on out-of-range or unordered pairs.
void validate_trace(const SwapTrace& trace);

// n initial writes (k_i, v_i) followed by one (k_first - k_second, 0) per
// swap; w = k, q left empty.
SequenceBatch encode_swaps(const KeyEnsemble& ensemble, const SwapTrace& trace);

// perm[s] = index of the initial value held by slot s, after each prefix.
// Entry 0 is the identity; entry j follows the first j swaps.
std::vector<std::vector<std::size_t>> permutation_oracle(std::size_t n,
                                                         const std::vector<std::pair<std::size_t, std::size_t>>& swaps);

enum class TrackingKernel {
  RoundF,        // the lattice map with its domain guard
  RoundInteger,  // plain integer rounding (no guard), for out-of-domain runs
  Linear,        // no rounding
};

struct TrackingOptions {
  TrackingKernel kernel = TrackingKernel::RoundF;
  // Rewrite the cache from n fresh reads every m swaps.
  std::optional<std::size_t> compact_every;
  // Slots read after every swap; empty means all n slots.
  std::vector<std::size_t> read_slots;
  // Also read before the first swap (step 0).
  bool read_initial = false;
};

struct ReadRecord {
  std::size_t step = 0;  // number of swaps applied
  std::size_t slot = 0;
  std::vector<double> value;
  std::size_t expected = 0;  // oracle: index into initial_values
  std::size_t decoded = 0;   // nearest initial value
  bool exact = false;        // value bit-equal to the expected initial value
  bool correct = false;      // decoded == expected
};

struct TrackingResult {
  std::vector<ReadRecord> reads;
  std::size_t max_cache_length = 0;
  std::size_t correct = 0;
  double accuracy() const { return reads.empty() ? 1.0 : double(correct) / double(reads.size()); }
  bool all_exact() const;
};

// Runs the swap stream through a KU cache: each new position gets
// u_t = v_t - sum_{i<t} f(k_i . k_t) u_i, each read of slot s returns
// sum_i f(k_i . k_s) u_i. The guard radius of RoundF is 4 max(epsilon, 1e-9);
// RoundF refuses ensembles with epsilon >= 1/8 and raises DomainError
// mid-run if a score leaves the guarded neighbourhoods (an understated
// epsilon).
TrackingResult run_tracking(const KeyEnsemble& ensemble, const SwapTrace& trace, const TrackingOptions& opts = {});

// Trace file: header "n d seed", then one "first second" line per swap.
struct TraceFile {
  std::size_t n = 0, d = 0;
  std::uint64_t seed = 0;
  std::vector<std::pair<std::size_t, std::size_t>> swaps;
};
void write_trace(std::ostream& out, const TraceFile& trace);
TraceFile read_trace(std::istream& in);

// Header step,read_index,correct.
void write_tracking_csv(std::ostream& out, const TrackingResult& result);

}  // namespace deltamem

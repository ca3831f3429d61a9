#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "deltamem/kernels.hpp"
#include "deltamem/matrix.hpp"

namespace deltamem {

enum class WSource { SameAsKey, SeparateProjection };
enum class UNormalization { None, SoftmaxZ, RmsNorm };

// u_t = alpha v_t - beta sum_{i<t} kappa1(k_i, w_t) u_i
// o_t = sum_{i<=t} kappa2(k_i, q_t) u_i
//
// Scores are k.w / sqrt(d) when scale_scores is set (the usual convention),
// plain k.w otherwise. A kernel's own tau applies on top of that; tau <= 0
// means 1 here, since the 1/sqrt(d) already plays that role.
struct DeltaFormerConfig {
  KernelSpec kappa1 = KernelSpec::softmax();
  KernelSpec kappa2 = KernelSpec::softmax();
  double alpha = 1.0;
  double beta = 1.0;
  WSource w_source = WSource::SameAsKey;
  // kappa1(k, w) = sum_j a_j kappa(k, j w) when group_weights is non-empty
  // (group_heads == group_weights.size()).
  std::size_t group_heads = 1;
  std::vector<double> group_weights;
  // SoftmaxZ divides the erase weights by Z1 = sum_{i<t} exp(score); beta
  // scales the whole normalized sum. RmsNorm rescales each u_t to unit RMS
  // and is only available on the sequential path.
  UNormalization normalize_u = UNormalization::SoftmaxZ;
  std::size_t chunk_size = 32;
  bool scale_scores = true;
};

// One head. w may be empty when w_source == SameAsKey; q is only read by
// readout.
struct SequenceBatch {
  Matrix q, k, v, w;
  std::size_t length() const noexcept { return k.rows(); }
};

// Throws DimensionError on a malformed config/batch (see the struct comments).
void validate(const DeltaFormerConfig& cfg, const SequenceBatch& seq);

// kappa1 on one pair (grouping and score scaling included, no Z1).
double kappa1_value(const DeltaFormerConfig& cfg, std::span<const double> k, std::span<const double> w);

// Strictly sequential recurrence. ExplosionError (zero-based step) on a
// non-finite u.
Matrix compute_u_naive(const DeltaFormerConfig& cfg, const SequenceBatch& seq);

// Strictly lower A with A[t,i] = beta * normalized kappa1(k_i, w_t).
Matrix erase_matrix(const DeltaFormerConfig& cfg, const SequenceBatch& seq);

// U = (I + A)^{-1} alpha V by forward substitution.
Matrix compute_u_inverse(const DeltaFormerConfig& cfg, const SequenceBatch& seq);

// Chunks of cfg.chunk_size (a power of two); each chunk reads the finished
// (k, u) of all earlier chunks, merges the two partial softmax normalizers
// in log space, and inverts its own unit lower system with
// tri_inverse_logdepth. T need not be a multiple of C: the tail is padded
// and the padding dropped (it is causally invisible).
Matrix compute_u_chunked(const DeltaFormerConfig& cfg, const SequenceBatch& seq);

// compute_u_chunked over independent heads, in parallel.
std::vector<Matrix> compute_u_chunked_heads(const DeltaFormerConfig& cfg, const std::vector<SequenceBatch>& heads);

// o_t = sum_{i<=t} kappa2(k_i, q_t) u_i, row-softmax normalized (inclusive
// Z2) when kappa2 is SoftmaxRow.
Matrix readout(const DeltaFormerConfig& cfg, const SequenceBatch& seq, const Matrix& u);

// sum_j a_j kappa(k, j w) with the raw score k.w and base's tau (<= 0 means 1).
double grouped_kappa1(std::span<const double> weights, const KernelSpec& base, std::span<const double> k,
                      std::span<const double> w);

// a_1..a_4 with sum_j a_j exp(j x) = x for x in {-1, 0, 1, 2}.
std::vector<double> fit_round_coefficients(std::size_t g = 4);

// Gaussian q, k, v (and w) of shape T x d, keys and w multiplied by key_scale.
SequenceBatch random_sequence(std::size_t T, std::size_t d, Rng& rng, bool with_w = true, double key_scale = 1.0);

// Max-abs discrepancies between the three U algorithms, each divided by
// max(1, max |U_naive|).
struct EquivalenceReport {
  double naive_vs_inverse = 0.0;
  double naive_vs_chunked = 0.0;
  double inverse_vs_chunked = 0.0;
  double worst() const;
};
EquivalenceReport compare_algorithms(const DeltaFormerConfig& cfg, const SequenceBatch& seq);

}  // namespace deltamem

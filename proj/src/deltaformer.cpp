#include "deltamem/deltaformer.hpp"

#include <algorithm>
#include <cmath>
#include <exception>
#include <limits>

#include "deltamem/errors.hpp"
#include "deltamem/linalg.hpp"
#include "deltamem/parallel.hpp"

namespace deltamem {

namespace {

constexpr double kNegInf = -std::numeric_limits<double>::infinity();

double kernel_tau(const KernelSpec& spec) { return spec.tau > 0.0 ? spec.tau : 1.0; }

double score_scale(const DeltaFormerConfig& cfg, std::size_t d) {
  return cfg.scale_scores ? 1.0 / std::sqrt(static_cast<double>(d)) : 1.0;
}

const Matrix& w_of(const DeltaFormerConfig& cfg, const SequenceBatch& seq) {
  return cfg.w_source == WSource::SameAsKey ? seq.k : seq.w;
}

bool softmax_z(const DeltaFormerConfig& cfg) { return cfg.normalize_u == UNormalization::SoftmaxZ; }

// Log-weight of a SoftmaxZ erase term: score / tau.
double logit1(const DeltaFormerConfig& cfg, std::span<const double> k, std::span<const double> w) {
  return dot(k, w) * score_scale(cfg, k.size()) / kernel_tau(cfg.kappa1);
}

double log_sum_exp(std::span<const double> x) {
  double m = kNegInf;
  for (double v : x) m = std::max(m, v);
  if (m == kNegInf) return kNegInf;
  double s = 0.0;
  for (double v : x) s += std::exp(v - m);
  return m + std::log(s);
}

// 1 / (1 + exp(a - b)) without overflow; a = -inf gives 1.
double merge_weight(double a, double b) {
  if (a == kNegInf) return 1.0;
  if (b == kNegInf) return 0.0;
  const double x = a - b;
  return x > 0 ? std::exp(-x) / (1.0 + std::exp(-x)) : 1.0 / (1.0 + std::exp(x));
}

void check_finite_rows(const Matrix& u, std::size_t offset = 0) {
  for (std::size_t t = 0; t < u.rows(); ++t)
    for (double x : u.row(t))
      if (!std::isfinite(x)) throw ExplosionError("non-finite u", offset + t);
}

Matrix pad_rows(const Matrix& m, std::size_t rows) {
  Matrix out(rows, m.cols());
  std::copy(m.data().begin(), m.data().end(), out.data().begin());
  return out;
}

}  // namespace

void validate(const DeltaFormerConfig& cfg, const SequenceBatch& seq) {
  const std::size_t T = seq.k.rows();
  if (T == 0) throw DimensionError("deltaformer: empty sequence");
  if (seq.v.rows() != T) throw DimensionError("deltaformer: k and v lengths differ");
  if (!seq.q.empty() && seq.q.rows() != T) throw DimensionError("deltaformer: q length differs");
  if (!seq.q.empty() && seq.q.cols() != seq.k.cols()) throw DimensionError("deltaformer: q and k widths differ");
  if (cfg.w_source == WSource::SeparateProjection &&
      (seq.w.rows() != T || seq.w.cols() != seq.k.cols()))
    throw DimensionError("deltaformer: w must match k in shape");
  if (cfg.kappa1.kind == KernelKind::SoftmaxRow && cfg.normalize_u != UNormalization::SoftmaxZ)
    throw DimensionError("deltaformer: a softmax kappa1 requires SoftmaxZ normalization");
  if (softmax_z(cfg) && cfg.kappa1.kind != KernelKind::SoftmaxRow && cfg.kappa1.kind != KernelKind::Exp)
    throw DimensionError("deltaformer: SoftmaxZ needs an exponential kappa1");
  if (cfg.group_heads == 0) throw DimensionError("deltaformer: group_heads must be >= 1");
  if (!cfg.group_weights.empty()) {
    if (cfg.group_weights.size() != cfg.group_heads)
      throw DimensionError("deltaformer: group_weights must have group_heads entries");
    if (softmax_z(cfg)) throw DimensionError("deltaformer: grouped kappa1 cannot be SoftmaxZ-normalized");
  }
  if (!is_power_of_two(cfg.chunk_size)) throw DimensionError("deltaformer: chunk_size must be a power of two");
  if (!std::isfinite(cfg.alpha) || !std::isfinite(cfg.beta)) throw DimensionError("deltaformer: non-finite gate");
}

double kappa1_value(const DeltaFormerConfig& cfg, std::span<const double> k, std::span<const double> w) {
  const double s = dot(k, w) * score_scale(cfg, k.size());
  if (cfg.group_weights.empty()) return kernel_of_score(cfg.kappa1, s, kernel_tau(cfg.kappa1));
  double total = 0.0;
  for (std::size_t j = 0; j < cfg.group_weights.size(); ++j)
    total += cfg.group_weights[j] * kernel_of_score(cfg.kappa1, static_cast<double>(j + 1) * s, kernel_tau(cfg.kappa1));
  return total;
}

Matrix compute_u_naive(const DeltaFormerConfig& cfg, const SequenceBatch& seq) {
  validate(cfg, seq);
  const Matrix& w = w_of(cfg, seq);
  const std::size_t T = seq.length(), d = seq.v.cols();
  Matrix u(T, d);
  std::vector<double> weight;
  for (std::size_t t = 0; t < T; ++t) {
    weight.assign(t, 0.0);
    if (softmax_z(cfg)) {
      for (std::size_t i = 0; i < t; ++i) weight[i] = logit1(cfg, seq.k.row(i), w.row(t));
      const double lse = log_sum_exp(weight);
      for (auto& x : weight) x = std::exp(x - lse);
    } else {
      for (std::size_t i = 0; i < t; ++i) weight[i] = kappa1_value(cfg, seq.k.row(i), w.row(t));
    }
    auto row = u.row(t);
    for (std::size_t c = 0; c < d; ++c) row[c] = cfg.alpha * seq.v(t, c);
    for (std::size_t i = 0; i < t; ++i) {
      const double a = cfg.beta * weight[i];
      for (std::size_t c = 0; c < d; ++c) row[c] -= a * u(i, c);
    }
    if (cfg.normalize_u == UNormalization::RmsNorm) {
      double ms = 0.0;
      for (double x : row) ms += x * x;
      const double r = 1.0 / std::sqrt(ms / static_cast<double>(d) + 1e-12);
      for (double& x : row) x *= r;
    }
    for (double x : row)
      if (!std::isfinite(x)) throw ExplosionError("non-finite u", t);
  }
  return u;
}

Matrix erase_matrix(const DeltaFormerConfig& cfg, const SequenceBatch& seq) {
  validate(cfg, seq);
  const Matrix& w = w_of(cfg, seq);
  const std::size_t T = seq.length();
  Matrix a(T, T);
  std::vector<double> row;
  for (std::size_t t = 1; t < T; ++t) {
    row.assign(t, 0.0);
    if (softmax_z(cfg)) {
      for (std::size_t i = 0; i < t; ++i) row[i] = logit1(cfg, seq.k.row(i), w.row(t));
      const double lse = log_sum_exp(row);
      for (auto& x : row) x = std::exp(x - lse);
    } else {
      for (std::size_t i = 0; i < t; ++i) row[i] = kappa1_value(cfg, seq.k.row(i), w.row(t));
    }
    for (std::size_t i = 0; i < t; ++i) a(t, i) = cfg.beta * row[i];
  }
  return a;
}

Matrix compute_u_inverse(const DeltaFormerConfig& cfg, const SequenceBatch& seq) {
  if (cfg.normalize_u == UNormalization::RmsNorm)
    throw DimensionError("deltaformer: RmsNorm is not linear in U; use compute_u_naive");
  const Matrix u = tri_solve_unit_lower(erase_matrix(cfg, seq), scale(seq.v, cfg.alpha));
  check_finite_rows(u);
  return u;
}

Matrix compute_u_chunked(const DeltaFormerConfig& cfg, const SequenceBatch& seq) {
  validate(cfg, seq);
  if (cfg.normalize_u == UNormalization::RmsNorm)
    throw DimensionError("deltaformer: RmsNorm is not linear in U; use compute_u_naive");
  const std::size_t T = seq.length(), d = seq.v.cols(), C = cfg.chunk_size;
  const std::size_t Tp = (T + C - 1) / C * C;
  const Matrix k = pad_rows(seq.k, Tp);
  const Matrix w = pad_rows(w_of(cfg, seq), Tp);
  const Matrix v = pad_rows(seq.v, Tp);
  const bool z = softmax_z(cfg);
  Matrix u(Tp, d);

  for (std::size_t start = 0; start < Tp; start += C) {
    // Intra-chunk scores, strictly lower. For SoftmaxZ these are logits and
    // z_inter their log-normalizer; otherwise kernel values.
    Matrix a(C, C);
    std::vector<double> z_inter(C, kNegInf), z_intra(C, kNegInf);
    Matrix p(C, d);  // alpha v minus the erase from earlier chunks

    const int nthreads = thread_count();
#pragma omp parallel for schedule(static) num_threads(nthreads)
    for (std::size_t r = 0; r < C; ++r) {
      const std::size_t t = start + r;
      std::vector<double> prev(start);
      for (std::size_t i = 0; i < start; ++i)
        prev[i] = z ? logit1(cfg, k.row(i), w.row(t)) : kappa1_value(cfg, k.row(i), w.row(t));
      for (std::size_t i = 0; i < r; ++i)
        a(r, i) = z ? logit1(cfg, k.row(start + i), w.row(t)) : kappa1_value(cfg, k.row(start + i), w.row(t));

      double prev_share = 1.0, intra_share = 1.0;
      if (z) {
        z_intra[r] = log_sum_exp(prev);  // over earlier chunks
        z_inter[r] = log_sum_exp(std::span<const double>(a.row(r).data(), r));
        for (auto& x : prev) x = std::exp(x - z_intra[r]);
        for (std::size_t i = 0; i < r; ++i) a(r, i) = std::exp(a(r, i) - z_inter[r]);
        prev_share = merge_weight(z_inter[r], z_intra[r]);
        intra_share = merge_weight(z_intra[r], z_inter[r]);
      }
      for (std::size_t c = 0; c < d; ++c) {
        double acc = 0.0;
        for (std::size_t i = 0; i < start; ++i) acc += prev[i] * u(i, c);
        p(r, c) = cfg.alpha * v(t, c) - cfg.beta * prev_share * acc;
      }
      for (std::size_t i = 0; i < r; ++i) a(r, i) *= cfg.beta * intra_share;
    }
    const Matrix inv = tri_inverse_logdepth(a).value;
    const Matrix block = matmul(inv, p);
    for (std::size_t r = 0; r < C; ++r)
      for (std::size_t c = 0; c < d; ++c) u(start + r, c) = block(r, c);
    for (std::size_t r = 0; r < C && start + r < T; ++r)
      for (std::size_t c = 0; c < d; ++c)
        if (!std::isfinite(block(r, c))) throw ExplosionError("non-finite u", start + r);
  }
  return slice_rows(u, 0, T);
}

std::vector<Matrix> compute_u_chunked_heads(const DeltaFormerConfig& cfg, const std::vector<SequenceBatch>& heads) {
  std::vector<Matrix> out(heads.size());
  std::vector<std::exception_ptr> errors(heads.size());
  const int nthreads = thread_count();
  // Heads run in parallel; the per-chunk loop inside then sees a nested
  // region and stays serial.
#pragma omp parallel for schedule(dynamic) num_threads(nthreads)
  for (std::size_t h = 0; h < heads.size(); ++h) {
    try {
      out[h] = compute_u_chunked(cfg, heads[h]);
    } catch (...) {
      errors[h] = std::current_exception();
    }
  }
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);
  return out;
}

Matrix readout(const DeltaFormerConfig& cfg, const SequenceBatch& seq, const Matrix& u) {
  validate(cfg, seq);
  if (seq.q.rows() != seq.length()) throw DimensionError("readout: q is required");
  if (u.rows() != seq.length()) throw DimensionError("readout: u length differs");
  const std::size_t T = seq.length();
  const double sc = score_scale(cfg, seq.k.cols()), tau = kernel_tau(cfg.kappa2);
  Matrix sim = scale(matmul_nt(seq.q, seq.k), sc);
  if (cfg.kappa2.kind == KernelKind::SoftmaxRow) {
    sim = row_softmax(scale(sim, 1.0 / tau), Mask::CausalInclusive);
  } else {
    for (std::size_t t = 0; t < T; ++t)
      for (std::size_t i = 0; i < T; ++i) sim(t, i) = i <= t ? kernel_of_score(cfg.kappa2, sim(t, i), tau) : 0.0;
  }
  return matmul(sim, u);
}

double grouped_kappa1(std::span<const double> weights, const KernelSpec& base, std::span<const double> k,
                      std::span<const double> w) {
  if (weights.empty()) throw DimensionError("grouped_kappa1: need at least one weight");
  if (k.size() != w.size()) throw DimensionError("grouped_kappa1: dimension mismatch");
  const double s = dot(k, w);
  double total = 0.0;
  for (std::size_t j = 0; j < weights.size(); ++j)
    total += weights[j] * kernel_of_score(base, static_cast<double>(j + 1) * s, kernel_tau(base));
  return total;
}

std::vector<double> fit_round_coefficients(std::size_t g) {
  if (g != 4) throw DimensionError("fit_round_coefficients: only g = 4 is defined");
  const double xs[4] = {-1.0, 0.0, 1.0, 2.0};
  Matrix m(4, 4), b(4, 1);
  for (std::size_t r = 0; r < 4; ++r) {
    for (std::size_t j = 0; j < 4; ++j) m(r, j) = std::exp(static_cast<double>(j + 1) * xs[r]);
    b(r, 0) = xs[r];
  }
  const Matrix a = solve(m, b);
  return {a(0, 0), a(1, 0), a(2, 0), a(3, 0)};
}

SequenceBatch random_sequence(std::size_t T, std::size_t d, Rng& rng, bool with_w, double key_scale) {
  SequenceBatch s;
  s.q = rng.gaussian_matrix(T, d);
  s.k = rng.gaussian_matrix(T, d, key_scale);
  s.v = rng.gaussian_matrix(T, d);
  if (with_w) s.w = rng.gaussian_matrix(T, d, key_scale);
  return s;
}

double EquivalenceReport::worst() const { return std::max({naive_vs_inverse, naive_vs_chunked, inverse_vs_chunked}); }

EquivalenceReport compare_algorithms(const DeltaFormerConfig& cfg, const SequenceBatch& seq) {
  const Matrix naive = compute_u_naive(cfg, seq);
  const Matrix inv = compute_u_inverse(cfg, seq);
  const Matrix chunked = compute_u_chunked(cfg, seq);
  const double sc = std::max(1.0, max_abs(naive));
  return {max_abs_diff(naive, inv) / sc, max_abs_diff(naive, chunked) / sc, max_abs_diff(inv, chunked) / sc};
}

}  // namespace deltamem

#include "deltamem/state_tracking.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <sstream>
#include <string>

#include "deltamem/errors.hpp"
#include "deltamem/linalg.hpp"

namespace deltamem {

namespace {

void normalize_row(std::span<double> r) {
  const double n = norm2(r);
  for (double& x : r) x /= n;
}

// Haar-ish random orthogonal matrix: Gram-Schmidt on Gaussian rows, twice
// for stability.
Matrix random_rotation(std::size_t d, Rng& rng) {
  Matrix q = rng.gaussian_matrix(d, d);
  for (int pass = 0; pass < 2; ++pass) {
    for (std::size_t i = 0; i < d; ++i) {
      auto ri = q.row(i);
      for (std::size_t j = 0; j < i; ++j) {
        const double p = dot(ri, q.row(j));
        auto rj = q.row(j);
        for (std::size_t c = 0; c < d; ++c) ri[c] -= p * rj[c];
      }
      normalize_row(ri);
    }
  }
  return q;
}

Matrix hadamard_frame(std::size_t n, std::size_t d) {
  Matrix f(n, d);
  const double s = 1.0 / std::sqrt(static_cast<double>(d));
  for (std::size_t r = 0; r < n; ++r) {
    if (r < d) {
      f(r, r) = 1.0;
    } else {
      // Sylvester entry: (-1)^{popcount(i & j)}
      const std::size_t i = r - d;
      for (std::size_t c = 0; c < d; ++c) f(r, c) = (__builtin_popcountll(i & c) % 2 ? -s : s);
    }
  }
  return f;
}

}  // namespace

double max_coherence(const Matrix& keys) {
  const Matrix g = matmul_nt(keys, keys);
  double m = 0.0;
  for (std::size_t i = 0; i < g.rows(); ++i)
    for (std::size_t j = 0; j < i; ++j) m = std::max(m, std::abs(g(i, j)));
  return m;
}

KeyEnsemble orthonormal_keys(std::size_t n, std::size_t d) {
  if (n == 0 || n > d) throw DimensionError("orthonormal_keys: need 0 < n <= d");
  KeyEnsemble e;
  e.keys = Matrix(n, d);
  for (std::size_t i = 0; i < n; ++i) e.keys(i, i) = 1.0;
  e.epsilon = 0.0;
  return e;
}

KeyEnsemble generate_keys(std::size_t n, std::size_t d, double eps_target, const Rng& rng,
                          std::size_t max_attempts) {
  if (!(eps_target > 0.0 && eps_target < 0.125)) throw DimensionError("generate_keys: eps_target must be in (0, 1/8)");
  if (n == 0 || d == 0) throw DimensionError("generate_keys: n and d must be positive");

  if (n > d && is_power_of_two(d) && n <= 2 * d && 1.0 / std::sqrt(static_cast<double>(d)) <= eps_target) {
    Rng r = rng.split(0xfa11bac4);
    KeyEnsemble e;
    e.keys = matmul_nt(hadamard_frame(n, d), random_rotation(d, r));
    for (std::size_t i = 0; i < n; ++i) normalize_row(e.keys.row(i));
    e.epsilon = max_coherence(e.keys);
    return e;
  }

  constexpr int kRowRetries = 64;
  double best = std::numeric_limits<double>::infinity();
  for (std::size_t attempt = 0; attempt < max_attempts; ++attempt) {
    Rng r = rng.split(attempt);
    Matrix keys(n, d);
    double worst_accepted = 0.0;
    bool ok = true;
    for (std::size_t i = 0; i < n && ok; ++i) {
      double row_best = std::numeric_limits<double>::infinity();
      for (int tries = 0;; ++tries) {
        auto ri = keys.row(i);
        for (double& x : ri) x = r.gaussian();
        normalize_row(ri);
        double m = 0.0;
        for (std::size_t j = 0; j < i; ++j) m = std::max(m, std::abs(dot(ri, keys.row(j))));
        row_best = std::min(row_best, m);
        if (m <= eps_target) {
          worst_accepted = std::max(worst_accepted, m);
          break;
        }
        if (tries + 1 >= kRowRetries) {
          best = std::min(best, std::max(worst_accepted, row_best));
          ok = false;
          break;
        }
      }
    }
    if (ok) return {keys, max_coherence(keys)};
  }
  throw InfeasibleError("generate_keys: no ensemble with n=" + std::to_string(n) + ", d=" + std::to_string(d) +
                            " below eps=" + std::to_string(eps_target) + "; try a larger d",
                        best);
}

KeyEnsemble spread_keys(std::size_t n, std::size_t d, const Rng& rng, std::size_t iterations) {
  if (n == 0 || d == 0) throw DimensionError("spread_keys: n and d must be positive");
  Rng r = rng.split(0x5b7ead);
  Matrix k = r.gaussian_matrix(n, d);
  for (std::size_t i = 0; i < n; ++i) normalize_row(k.row(i));
  Matrix best = k;
  double best_eps = max_coherence(k);
  for (std::size_t it = 0; it < iterations; ++it) {
    Matrix g = matmul_nt(k, k);
    // d/dk_i of sum_{j != i} g_ij^4 / 4, scaled so the largest coherence
    // dominates.
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < n; ++j) g(i, j) = i == j ? 0.0 : g(i, j) * g(i, j) * g(i, j);
    const Matrix grad = matmul(g, k);
    const double gmax = std::max(max_abs(grad), 1e-300);
    const double step = 0.05 / gmax;
    for (std::size_t i = 0; i < n; ++i) {
      auto ri = k.row(i);
      for (std::size_t c = 0; c < d; ++c) ri[c] -= step * grad(i, c);
      normalize_row(ri);
    }
    if ((it + 1) % 10 == 0 || it + 1 == iterations) {
      const double e = max_coherence(k);
      if (e < best_eps) {
        best_eps = e;
        best = k;
      }
    }
  }
  return {best, best_eps};
}

int round_f(double x, double eps) {
  const double nearest = std::clamp(std::nearbyint(x), -1.0, 2.0);
  if (!(std::abs(x - nearest) <= 4.0 * eps)) {
    std::ostringstream os;
    os << "round_f: " << x << " is not within 4*eps = " << 4.0 * eps << " of {-1,0,1,2}";
    throw DomainError(os.str());
  }
  return static_cast<int>(nearest);
}

std::vector<std::pair<std::size_t, std::size_t>> random_swaps(std::size_t n, std::size_t count, Rng& rng) {
  if (n < 2) throw DimensionError("random_swaps: need n >= 2");
  std::vector<std::pair<std::size_t, std::size_t>> out;
  out.reserve(count);
  for (std::size_t s = 0; s < count; ++s) {
    std::size_t a = rng.below(n), b = rng.below(n - 1);
    if (b >= a) ++b;
    out.emplace_back(std::max(a, b), std::min(a, b));
  }
  return out;
}

void validate_trace(const SwapTrace& trace) {
  if (trace.n == 0) throw DimensionError("swap trace: n must be positive");
  if (trace.initial_values.rows() != trace.n) throw DimensionError("swap trace: need n initial values");
  for (const auto& [a, b] : trace.swaps)
    if (!(b < a && a < trace.n)) throw DimensionError("swap trace: pairs must satisfy second < first < n");
}

SequenceBatch encode_swaps(const KeyEnsemble& ensemble, const SwapTrace& trace) {
  validate_trace(trace);
  if (ensemble.n() != trace.n) throw DimensionError("encode_swaps: ensemble and trace disagree on n");
  const std::size_t n = trace.n, d = ensemble.d(), dv = trace.initial_values.cols();
  const std::size_t T = n + trace.swaps.size();
  SequenceBatch s;
  s.k = Matrix(T, d);
  s.v = Matrix(T, dv);
  for (std::size_t i = 0; i < n; ++i) {
    std::copy_n(ensemble.keys.row(i).begin(), d, s.k.row(i).begin());
    std::copy_n(trace.initial_values.row(i).begin(), dv, s.v.row(i).begin());
  }
  for (std::size_t j = 0; j < trace.swaps.size(); ++j) {
    const auto [a, b] = trace.swaps[j];
    for (std::size_t c = 0; c < d; ++c) s.k(n + j, c) = ensemble.keys(a, c) - ensemble.keys(b, c);
  }
  return s;
}

std::vector<std::vector<std::size_t>> permutation_oracle(
    std::size_t n, const std::vector<std::pair<std::size_t, std::size_t>>& swaps) {
  std::vector<std::size_t> perm(n);
  for (std::size_t i = 0; i < n; ++i) perm[i] = i;
  std::vector<std::vector<std::size_t>> out{perm};
  for (const auto& [a, b] : swaps) {
    if (a >= n || b >= n) throw DimensionError("permutation_oracle: index out of range");
    std::swap(perm[a], perm[b]);
    out.push_back(perm);
  }
  return out;
}

bool TrackingResult::all_exact() const {
  return std::all_of(reads.begin(), reads.end(), [](const ReadRecord& r) { return r.exact; });
}

namespace {

class KuCache {
 public:
  KuCache(TrackingKernel kernel, double eps) : kernel_(kernel), eps_(std::max(eps, 1e-9)) {}

  double f(double x) const {
    switch (kernel_) {
      case TrackingKernel::RoundF: return round_f(x, eps_);
      case TrackingKernel::RoundInteger: return std::nearbyint(x);
      case TrackingKernel::Linear: return x;
    }
    return x;
  }

  void write(std::vector<double> k, std::span<const double> v) {
    std::vector<double> u(v.begin(), v.end());
    for (std::size_t i = 0; i < keys_.size(); ++i) {
      const double c = f(dot(keys_[i], k));
      if (c != 0.0)
        for (std::size_t a = 0; a < u.size(); ++a) u[a] -= c * us_[i][a];
    }
    keys_.push_back(std::move(k));
    us_.push_back(std::move(u));
  }

  std::vector<double> read(std::span<const double> q, std::size_t dv) const {
    std::vector<double> o(dv, 0.0);
    for (std::size_t i = 0; i < keys_.size(); ++i) {
      const double c = f(dot(keys_[i], q));
      if (c != 0.0)
        for (std::size_t a = 0; a < dv; ++a) o[a] += c * us_[i][a];
    }
    return o;
  }

  void clear() {
    keys_.clear();
    us_.clear();
  }
  std::size_t size() const { return keys_.size(); }

 private:
  TrackingKernel kernel_;
  double eps_;
  std::vector<std::vector<double>> keys_, us_;
};

std::vector<double> row_vec(const Matrix& m, std::size_t r) { return {m.row(r).begin(), m.row(r).end()}; }

}  // namespace

TrackingResult run_tracking(const KeyEnsemble& ensemble, const SwapTrace& trace, const TrackingOptions& opts) {
  validate_trace(trace);
  if (ensemble.n() != trace.n) throw DimensionError("run_tracking: ensemble and trace disagree on n");
  if (opts.compact_every && *opts.compact_every == 0) throw DimensionError("run_tracking: compact_every must be >= 1");
  if (opts.kernel == TrackingKernel::RoundF && !(ensemble.epsilon < 0.125))
    throw DomainError("run_tracking: ensemble epsilon " + std::to_string(ensemble.epsilon) + " is not below 1/8");
  const std::size_t n = trace.n, d = ensemble.d(), dv = trace.initial_values.cols();
  std::vector<std::size_t> slots = opts.read_slots;
  if (slots.empty())
    for (std::size_t s = 0; s < n; ++s) slots.push_back(s);
  for (std::size_t s : slots)
    if (s >= n) throw DimensionError("run_tracking: read slot out of range");

  const auto perms = permutation_oracle(n, trace.swaps);
  KuCache cache(opts.kernel, ensemble.epsilon);
  for (std::size_t i = 0; i < n; ++i) cache.write(row_vec(ensemble.keys, i), trace.initial_values.row(i));

  TrackingResult res;
  res.max_cache_length = cache.size();
  auto do_reads = [&](std::size_t step) {
    for (std::size_t s : slots) {
      ReadRecord r;
      r.step = step;
      r.slot = s;
      r.value = cache.read(ensemble.keys.row(s), dv);
      r.expected = perms[step][s];
      double best = std::numeric_limits<double>::infinity();
      for (std::size_t j = 0; j < n; ++j) {
        double dist = 0.0;
        for (std::size_t a = 0; a < dv; ++a) {
          const double e = r.value[a] - trace.initial_values(j, a);
          dist += e * e;
        }
        if (dist < best) {
          best = dist;
          r.decoded = j;
        }
      }
      r.exact = std::equal(r.value.begin(), r.value.end(), trace.initial_values.row(r.expected).begin());
      r.correct = r.decoded == r.expected;
      res.correct += r.correct;
      res.reads.push_back(std::move(r));
    }
  };

  if (opts.read_initial) do_reads(0);
  for (std::size_t step = 1; step <= trace.swaps.size(); ++step) {
    const auto [a, b] = trace.swaps[step - 1];
    std::vector<double> k(d);
    for (std::size_t c = 0; c < d; ++c) k[c] = ensemble.keys(a, c) - ensemble.keys(b, c);
    cache.write(std::move(k), std::vector<double>(dv, 0.0));
    res.max_cache_length = std::max(res.max_cache_length, cache.size());
    do_reads(step);
    if (opts.compact_every && step % *opts.compact_every == 0) {
      std::vector<std::vector<double>> current;
      for (std::size_t s = 0; s < n; ++s) current.push_back(cache.read(ensemble.keys.row(s), dv));
      cache.clear();
      for (std::size_t s = 0; s < n; ++s) cache.write(row_vec(ensemble.keys, s), current[s]);
    }
  }
  return res;
}

void write_trace(std::ostream& out, const TraceFile& trace) {
  out << trace.n << ' ' << trace.d << ' ' << trace.seed << '\n';
  for (const auto& [a, b] : trace.swaps) out << a << ' ' << b << '\n';
}

TraceFile read_trace(std::istream& in) {
  TraceFile t;
  std::string line;
  if (!std::getline(in, line)) throw DimensionError("trace: missing header");
  std::istringstream hs(line);
  if (!(hs >> t.n >> t.d >> t.seed)) throw DimensionError("trace: header must be 'n d seed'");
  std::size_t lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    std::istringstream ls(line);
    std::size_t a = 0, b = 0;
    std::string extra;
    if (!(ls >> a >> b) || (ls >> extra)) throw DimensionError("trace: bad line " + std::to_string(lineno));
    if (!(b < a && a < t.n)) throw DimensionError("trace: invalid pair on line " + std::to_string(lineno));
    t.swaps.emplace_back(a, b);
  }
  return t;
}

void write_tracking_csv(std::ostream& out, const TrackingResult& result) {
  out << "step,read_index,correct\n";
  for (const auto& r : result.reads) out << r.step << ',' << r.slot << ',' << (r.correct ? 1 : 0) << '\n';
}

}  // namespace deltamem

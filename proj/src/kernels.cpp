#include "deltamem/kernels.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "deltamem/errors.hpp"
#include "deltamem/matrix.hpp"
#include "deltamem/parallel.hpp"

namespace deltamem {

namespace {

constexpr double kNegInf = -std::numeric_limits<double>::infinity();

double round_to(double s, int decimals) {
  const double f = std::pow(10.0, decimals);
  return std::nearbyint(s * f) / f;
}

// log |kappa(s)| and its sign; log 0 = -inf.
struct LogKappa {
  double log_abs;
  double sign;
};

LogKappa log_kappa(const KernelSpec& spec, double s, double tau) {
  auto lg = [](double x) { return x == 0.0 ? kNegInf : std::log(std::abs(x)); };
  auto sg = [](double x) { return x < 0.0 ? -1.0 : 1.0; };
  switch (spec.kind) {
    case KernelKind::Linear:
      return {lg(s), sg(s)};
    case KernelKind::Exp:
    case KernelKind::SoftmaxRow:
      return {s / tau, 1.0};
    case KernelKind::ReLU:
      return {s > 0.0 ? std::log(s) : kNegInf, 1.0};
    case KernelKind::SoLU:
      return {lg(s) + s / tau, sg(s)};
    case KernelKind::Round: {
      const double r = round_to(s, spec.round_decimals);
      return {lg(r), sg(r)};
    }
  }
  return {kNegInf, 1.0};
}

// Streaming log-sum-exp.
struct LogSum {
  double max = kNegInf;
  double sum = 0.0;
  void add(double x) {
    if (x == kNegInf) return;
    if (x <= max) {
      sum += std::exp(x - max);
    } else {
      sum = sum * std::exp(max - x) + 1.0;
      max = x;
    }
  }
  double value() const { return sum == 0.0 ? kNegInf : max + std::log(sum); }
};

std::vector<double> gaussian_vector(Rng& rng, std::size_t d) {
  std::vector<double> v(d);
  for (double& x : v) x = rng.gaussian();
  return v;
}

struct TrialResult {
  double log_pair_sum = kNegInf;  // log sum_j kappa^2_j / c^2
  double log_estimate = kNegInf;  // log of this trial's inverse SNR
};

void normalize_signal(std::vector<double>& ki, bool fixed_norm) {
  if (!fixed_norm) return;
  const double s = std::sqrt(static_cast<double>(ki.size())) / norm2(ki);
  for (double& x : ki) x *= s;
}

// One trial for every spec, all sharing the same key draws.
void ratio_trial(const std::vector<KernelSpec>& specs, const std::vector<double>& taus, std::size_t n,
                 std::size_t d, Rng rng, bool fixed_norm, TrialResult* out) {
  std::vector<double> ki = gaussian_vector(rng, d);
  normalize_signal(ki, fixed_norm);
  const std::size_t m = specs.size();
  const double self = dot(ki, ki);
  std::vector<double> log_c2(m);
  for (std::size_t s = 0; s < m; ++s) log_c2[s] = 2.0 * log_kappa(specs[s], self, taus[s]).log_abs;
  std::vector<LogSum> acc(m);
  std::vector<double> kj(d);
  for (std::size_t j = 1; j < n; ++j) {
    for (double& x : kj) x = rng.gaussian();
    const double sc = dot(kj, ki);
    for (std::size_t s = 0; s < m; ++s) acc[s].add(2.0 * log_kappa(specs[s], sc, taus[s]).log_abs - log_c2[s]);
  }
  const double lnn = std::log(static_cast<double>(n) / static_cast<double>(n - 1));
  for (std::size_t s = 0; s < m; ++s) {
    out[s].log_pair_sum = acc[s].value();
    out[s].log_estimate = out[s].log_pair_sum + lnn;
  }
}

void recall_trial(const std::vector<KernelSpec>& specs, const std::vector<double>& taus, std::size_t n,
                  std::size_t d, Rng rng, bool fixed_norm, TrialResult* out) {
  std::vector<double> ki = gaussian_vector(rng, d);
  normalize_signal(ki, fixed_norm);
  const std::vector<double> vi = gaussian_vector(rng, d);
  const std::size_t m = specs.size();
  const double self = dot(ki, ki);
  std::vector<double> log_c(m);
  for (std::size_t s = 0; s < m; ++s) log_c[s] = log_kappa(specs[s], self, taus[s]).log_abs;
  // r / c = sum_j (kappa_j / c) v_j, each coefficient formed in log space.
  std::vector<std::vector<double>> r(m, std::vector<double>(d, 0.0));
  std::vector<double> kj(d), vj(d);
  for (std::size_t j = 1; j < n; ++j) {
    for (double& x : kj) x = rng.gaussian();
    for (double& x : vj) x = rng.gaussian();
    const double sc = dot(kj, ki);
    for (std::size_t s = 0; s < m; ++s) {
      const LogKappa lk = log_kappa(specs[s], sc, taus[s]);
      if (lk.log_abs == kNegInf) continue;
      const double coef = lk.sign * std::exp(lk.log_abs - log_c[s]);
      for (std::size_t p = 0; p < d; ++p) r[s][p] += coef * vj[p];
    }
  }
  // The definition's noise sum has n-1 terms; n/(n-1) aligns it with the
  // N-scaled ratio form.
  const double scale_n = static_cast<double>(n) / static_cast<double>(n - 1);
  for (std::size_t s = 0; s < m; ++s) {
    const double est = dot(r[s], r[s]) / dot(vi, vi) * scale_n;
    out[s].log_estimate = est == 0.0 ? kNegInf : std::log(est);
    out[s].log_pair_sum = out[s].log_estimate - std::log(scale_n);
  }
}

}  // namespace

std::string kernel_name(KernelKind kind) {
  switch (kind) {
    case KernelKind::Linear:
      return "linear";
    case KernelKind::Exp:
      return "exp";
    case KernelKind::ReLU:
      return "relu";
    case KernelKind::SoLU:
      return "solu";
    case KernelKind::Round:
      return "round";
    case KernelKind::SoftmaxRow:
      return "softmax";
  }
  return "?";
}

KernelKind parse_kernel_kind(const std::string& name) {
  for (KernelKind k : {KernelKind::Linear, KernelKind::Exp, KernelKind::ReLU, KernelKind::SoLU, KernelKind::Round,
                       KernelKind::SoftmaxRow}) {
    if (kernel_name(k) == name) return k;
  }
  throw DimensionError("unknown kernel '" + name + "'");
}

double effective_tau(const KernelSpec& spec, std::size_t dim) {
  return spec.tau > 0.0 ? spec.tau : std::sqrt(static_cast<double>(dim));
}

double kernel_of_score(const KernelSpec& spec, double s, double tau) {
  switch (spec.kind) {
    case KernelKind::Linear:
      return s;
    case KernelKind::Exp:
    case KernelKind::SoftmaxRow:
      return std::exp(s / tau);
    case KernelKind::ReLU:
      return std::max(0.0, s);
    case KernelKind::SoLU:
      return s * std::exp(s / tau);
    case KernelKind::Round:
      return round_to(s, spec.round_decimals);
  }
  return s;
}

double kernel_eval(const KernelSpec& spec, std::span<const double> x, std::span<const double> y) {
  if (x.size() != y.size()) throw DimensionError("kernel_eval: dimension mismatch");
  return kernel_of_score(spec, dot(x, y), effective_tau(spec, x.size()));
}

double snr_closed_form(const KernelSpec& spec, std::size_t n, std::size_t d_k) {
  if (n == 0 || d_k == 0) throw DimensionError("snr_closed_form: n and d_k must be positive");
  const double N = static_cast<double>(n), d = static_cast<double>(d_k);
  const double tau = effective_tau(spec, d_k);
  switch (spec.kind) {
    case KernelKind::Linear:
      return N / d;
    case KernelKind::ReLU:
      return N / (2.0 * d);
    case KernelKind::Exp:
      return N / std::exp(2.0 * (tau - 1.0) / (tau * tau) * d);
    case KernelKind::SoLU:
      return N * (1.0 + 4.0 * d / (tau * tau)) / d * std::exp(-2.0 * d * (tau - 1.0) / (tau * tau));
    case KernelKind::Round:
    case KernelKind::SoftmaxRow:
      break;
  }
  throw DimensionError("snr_closed_form: no closed form for kernel " + kernel_name(spec.kind));
}

double solu_boxed_form(std::size_t n, std::size_t d_k) {
  const double d = static_cast<double>(d_k);
  return 5.0 * static_cast<double>(n) / (d * std::exp(2.0 * std::sqrt(d)));
}

std::vector<SnrEstimate> snr_monte_carlo_shared(const std::vector<KernelSpec>& specs, std::size_t n,
                                               std::size_t d_k, std::size_t trials, const Rng& rng,
                                               const SnrOptions& opts) {
  if (trials < 100) throw DimensionError("snr_monte_carlo: need at least 100 trials");
  if (n == 0 || d_k == 0) throw DimensionError("snr_monte_carlo: n and d_k must be positive");
  const std::size_t m = specs.size();
  std::vector<SnrEstimate> est(m);
  for (auto& e : est) e.trials = trials;
  if (n == 1 || m == 0) return est;

  std::vector<double> taus(m);
  for (std::size_t s = 0; s < m; ++s) taus[s] = effective_tau(specs[s], d_k);
  std::vector<TrialResult> res(trials * m);
#pragma omp parallel for schedule(static) num_threads(thread_count())
  for (std::ptrdiff_t t = 0; t < static_cast<std::ptrdiff_t>(trials); ++t) {
    if (opts.full_recall) {
      recall_trial(specs, taus, n, d_k, rng.split(t), opts.fixed_signal_norm, &res[t * m]);
    } else {
      ratio_trial(specs, taus, n, d_k, rng.split(t), opts.fixed_signal_norm, &res[t * m]);
    }
  }

  const double pairs = static_cast<double>(n - 1) * static_cast<double>(trials);
  for (std::size_t s = 0; s < m; ++s) {
    // Pool every (trial, pair) term, then report in linear space.
    LogSum pooled;
    double shift = kNegInf;
    for (std::size_t t = 0; t < trials; ++t) {
      pooled.add(res[t * m + s].log_pair_sum);
      shift = std::max(shift, res[t * m + s].log_estimate);
    }
    est[s].inverse_snr = static_cast<double>(n) * std::exp(pooled.value() - std::log(pairs));
    if (shift == kNegInf) continue;
    double mean = 0.0;
    for (std::size_t t = 0; t < trials; ++t) mean += std::exp(res[t * m + s].log_estimate - shift);
    mean /= static_cast<double>(trials);
    double var = 0.0;
    for (std::size_t t = 0; t < trials; ++t) {
      const double e = std::exp(res[t * m + s].log_estimate - shift) - mean;
      var += e * e;
    }
    var /= static_cast<double>(trials - 1);
    est[s].stderr_ = std::exp(shift) * std::sqrt(var / static_cast<double>(trials));
  }
  return est;
}

SnrEstimate snr_monte_carlo(const KernelSpec& spec, std::size_t n, std::size_t d_k, std::size_t trials,
                            const Rng& rng, const SnrOptions& opts) {
  return snr_monte_carlo_shared({spec}, n, d_k, trials, rng, opts).front();
}

std::vector<CapacityRow> capacity_curve(const KernelSpec& spec, std::size_t d_k,
                                        const std::vector<std::size_t>& n_values, std::size_t trials,
                                        const Rng& rng, const SnrOptions& opts) {
  if (n_values.empty()) throw DimensionError("capacity_curve: n_values is empty");
  std::vector<CapacityRow> rows;
  for (std::size_t idx = 0; idx < n_values.size(); ++idx) {
    CapacityRow row;
    row.n = n_values[idx];
    if (spec.kind != KernelKind::Round && spec.kind != KernelKind::SoftmaxRow) {
      row.closed_form = snr_closed_form(spec, row.n, d_k);
    }
    const SnrEstimate e = snr_monte_carlo(spec, row.n, d_k, trials, rng.split(1000003 + idx), opts);
    row.mc_mean = e.inverse_snr;
    row.mc_stderr = e.stderr_;
    rows.push_back(row);
  }
  return rows;
}

void write_capacity_csv(std::ostream& out, const std::vector<CapacityRow>& rows) {
  const auto old = out.precision(17);
  out << "n,closed_form,mc_mean,mc_stderr\n";
  for (const auto& r : rows) {
    out << r.n << ',';
    if (r.closed_form) out << *r.closed_form;
    out << ',' << r.mc_mean << ',' << r.mc_stderr << '\n';
  }
  out.precision(old);
}

}  // namespace deltamem

#pragma once

#include <cstddef>
#include <optional>
#include <ostream>
#include <span>
#include <string>
#include <vector>

#include "deltamem/rng.hpp"

namespace deltamem {

enum class KernelKind { Linear, Exp, ReLU, SoLU, Round, SoftmaxRow };

// Similarity kappa(x, y) of two vectors, always a function of s = x.y:
//   Linear s, Exp exp(s/tau), ReLU max(0,s), SoLU s exp(s/tau),
//   Round nearest multiple of 10^-round_decimals, SoftmaxRow exp(s/tau)
//   (the row normalization is applied by the caller that owns the row).
// tau <= 0 means "unset": sqrt(dim) is used at evaluation, which is the
// usual choice.
struct KernelSpec {
  KernelKind kind = KernelKind::Linear;
  double tau = 0.0;
  int round_decimals = 2;

  static KernelSpec linear() { return {KernelKind::Linear}; }
  static KernelSpec exp(double tau = 0.0) { return {KernelKind::Exp, tau}; }
  static KernelSpec relu() { return {KernelKind::ReLU}; }
  static KernelSpec solu(double tau = 0.0) { return {KernelKind::SoLU, tau}; }
  static KernelSpec round(int decimals = 2) { return {KernelKind::Round, 0.0, decimals}; }
  static KernelSpec softmax(double tau = 0.0) { return {KernelKind::SoftmaxRow, tau}; }
};

std::string kernel_name(KernelKind kind);
// Accepts linear, exp, relu, solu, round, softmax (case-sensitive).
KernelKind parse_kernel_kind(const std::string& name);

// tau actually used for vectors of dimension dim.
double effective_tau(const KernelSpec& spec, std::size_t dim);

// kappa applied to an already computed similarity score s.
double kernel_of_score(const KernelSpec& spec, double s, double tau);

// Throws DimensionError if x and y differ in length.
double kernel_eval(const KernelSpec& spec, std::span<const double> x, std::span<const double> y);

// Closed-form inverse SNR for n stored pairs in dimension d_k:
//   Linear n/d_k, ReLU n/(2 d_k), Exp n / exp(2 (tau-1)/tau^2 d_k),
//   SoLU n (1 + 4 d_k/tau^2)/d_k * exp(-2 d_k (tau-1)/tau^2).
// At tau = sqrt(d_k) the SoLU expression is 5 n e^2 / (d_k e^{2 sqrt(d_k)});
// see solu_boxed_form for the variant without the e^2 factor.
// Throws DimensionError for Round/SoftmaxRow or n, d_k == 0.
double snr_closed_form(const KernelSpec& spec, std::size_t n, std::size_t d_k);

// 5 n / (d_k exp(2 sqrt(d_k))), the commonly quoted simplification.
double solu_boxed_form(std::size_t n, std::size_t d_k);

struct SnrEstimate {
  double inverse_snr = 0.0;
  double stderr_ = 0.0;
  std::size_t trials = 0;
};

struct SnrOptions {
  // Direct definition: sample values, recall, and measure |r|^2/(c^2 |v|^2)
  // per trial. Slower and noisier; for cross-validation only.
  bool full_recall = false;
  // Rescale the signal key to norm exactly sqrt(d_k) (the large-d_k value of
  // a Gaussian key's norm). Noise keys are always plain Gaussians.
  bool fixed_signal_norm = true;
};

// Monte-Carlo inverse SNR. Each trial draws a fresh signal key and n-1
// standard-Gaussian noise keys; the estimate is
//   n * mean over all (trial, noise key) of kappa^2(k_j, k_i) / kappa^2(k_i, k_i),
// accumulated in log space so Exp/SoLU cannot overflow. stderr is the
// spread of per-trial estimates over sqrt(trials). Trial t uses stream
// rng.split(t), so the result does not depend on the thread count.
// Throws DimensionError if trials < 100 or d_k == 0.
SnrEstimate snr_monte_carlo(const KernelSpec& spec, std::size_t n, std::size_t d_k, std::size_t trials,
                            const Rng& rng, const SnrOptions& opts = {});

// Same estimator for several kernels at once, all reading the same key
// draws (estimates are correlated across kernels, each is unbiased).
std::vector<SnrEstimate> snr_monte_carlo_shared(const std::vector<KernelSpec>& specs, std::size_t n,
                                               std::size_t d_k, std::size_t trials, const Rng& rng,
                                               const SnrOptions& opts = {});

struct CapacityRow {
  std::size_t n = 0;
  std::optional<double> closed_form;
  double mc_mean = 0.0;
  double mc_stderr = 0.0;
};

std::vector<CapacityRow> capacity_curve(const KernelSpec& spec, std::size_t d_k,
                                        const std::vector<std::size_t>& n_values, std::size_t trials,
                                        const Rng& rng, const SnrOptions& opts = {});

// Header n,closed_form,mc_mean,mc_stderr; a missing closed form is empty.
void write_capacity_csv(std::ostream& out, const std::vector<CapacityRow>& rows);

}  // namespace deltamem

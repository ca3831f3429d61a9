#pragma once

#include <cstddef>
#include <ostream>
#include <span>
#include <string>
#include <vector>

#include "deltamem/kernels.hpp"
#include "deltamem/matrix.hpp"

namespace deltamem {

// The recurrent family S_t = A_t S_{t-1} B_t + C_t.
enum class MemoryModel {
  LinearAttn,        // A = I,               B = I,          C = v k^T
  GatedLinearAttn,   // A = diag(lambda),    B = I,          C = v k^T
  DeltaNet,          // A = I,               B = I - k k^T,  C = v k^T
  DeltaNetMomentum,  // A = I,               B = I - k k^T,  C_t = eta C_{t-1} + v k^T
  SoftmaxNoNorm,     // A = I,               B = I,          C = v phi(k)^T
  SoftmaxNorm,       // A = (t-1)/t I,       B = I,          C = v phi(k)^T / t
  GatedSoftmaxNorm,  // A = (t-1)/t diag(l), B = I,          C = v phi(k)^T / t
};

std::string memory_model_name(MemoryModel m);
const std::vector<MemoryModel>& all_memory_models();
// Softmax rows keep phi implicit (see MemoryState::history).
bool uses_feature_map(MemoryModel m);

struct RecurrentSpec {
  MemoryModel model = MemoryModel::LinearAttn;
  // Per-row gate acting on the value axis of S (left multiplication). Entries
  // must lie strictly inside (0, 1).
  std::vector<double> gate_lambda;
  double momentum_eta = 0.9;
  // kappa(x, y) = phi(x)^T phi(y) for the softmax rows; exp(x.y / tau).
  KernelSpec feature_map = KernelSpec::exp();
};

struct StepInput {
  std::vector<double> k;
  std::vector<double> v;
};

struct HistoryEntry {
  std::vector<double> k;
  std::vector<double> v;
  double weight = 1.0;
};

// S_t. Finite-feature rows store S (d_v x d_k) directly; DeltaNetMomentum
// also carries C_{t-1}. Softmax rows never form phi: S is the weighted sum
// sum_i weight_i v_i phi(k_i)^T over `history`. t counts updates applied.
struct MemoryState {
  Matrix s;
  Matrix c;
  std::vector<HistoryEntry> history;
  std::size_t t = 0;
  std::size_t d_k = 0;
  std::size_t d_v = 0;

  static MemoryState zeros(std::size_t d_v, std::size_t d_k);
};

// One step of the recurrence. Throws DimensionError on inconsistent sizes or
// gate/eta outside (0,1), ExplosionError (with the zero-based step index) if
// the new state has a non-finite entry.
MemoryState update(const RecurrentSpec& spec, const MemoryState& state, const StepInput& input);

// L_t(S_{t-1}) as listed for each row. DeltaNet uses 1/2 |S k - v|^2, which
// is the general-form loss plus the constant 1/2 |v|^2. GatedSoftmaxNorm uses
// the general form (the row's listed loss does not have A_t's gradient).
double loss_eval(const RecurrentSpec& spec, const MemoryState& state, const StepInput& input);

// Central finite differences (step eps) of loss_eval against
// state.s - update(...).s; returns the largest discrepancy divided by
// max(1, largest gradient entry). Throws unless eps is in [1e-7, 1e-4]. For softmax
// rows the comparison is made along every direction e_a phi(k_j)^T spanned
// by the history and the incoming key, which contains the whole gradient.
double gradient_step_check(const RecurrentSpec& spec, const MemoryState& state, const StepInput& input,
                           double eps = 1e-6);

// Worst gradient_step_check over `instances` random problems for one row:
// d_k in [1,5], d_v in [1,4], random gates/eta in (0.05, 0.95), up to four
// warm-up writes, and a random dense S for the finite rows.
double random_gradient_check(MemoryModel m, std::size_t instances, const Rng& rng, double eps = 1e-6);

// S q (phi(q) for the softmax rows).
std::vector<double> recall(const RecurrentSpec& spec, const MemoryState& state, std::span<const double> q);

// Frobenius norm of S; for softmax rows in the feature space, via the Gram
// matrix.
double state_norm(const RecurrentSpec& spec, const MemoryState& state);

struct NormPoint {
  std::size_t step = 0;
  double frobenius_norm = 0.0;
};

// Repeats the same (k, v) write `steps` times from S_0 = 0.
std::vector<NormPoint> norm_growth_trace(const RecurrentSpec& spec, const StepInput& input, std::size_t steps);
void write_norm_csv(std::ostream& out, const std::vector<NormPoint>& trace);

// argmin_S E_x[1/2 |S W_k x - W_v x|^2] with the empirical second moment of
// the rows of x_samples: (W_v M W_k^T)(W_k M W_k^T)^{-1}. Throws
// SingularMatrixError when W_k M W_k^T is numerically singular.
Matrix analytical_optimum(const Matrix& w_k, const Matrix& w_v, const Matrix& x_samples);

// The objective above, for stationarity checks.
double optimum_objective(const Matrix& s, const Matrix& w_k, const Matrix& w_v, const Matrix& x_samples);

}  // namespace deltamem

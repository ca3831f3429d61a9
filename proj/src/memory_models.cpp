#include "deltamem/memory_models.hpp"

#include <algorithm>
#include <cmath>

#include "deltamem/errors.hpp"
#include "deltamem/linalg.hpp"

namespace deltamem {

std::string memory_model_name(MemoryModel m) {
  switch (m) {
    case MemoryModel::LinearAttn: return "linear_attn";
    case MemoryModel::GatedLinearAttn: return "gated_linear_attn";
    case MemoryModel::DeltaNet: return "deltanet";
    case MemoryModel::DeltaNetMomentum: return "deltanet_momentum";
    case MemoryModel::SoftmaxNoNorm: return "softmax_nonorm";
    case MemoryModel::SoftmaxNorm: return "softmax_norm";
    case MemoryModel::GatedSoftmaxNorm: return "gated_softmax_norm";
  }
  return "?";
}

const std::vector<MemoryModel>& all_memory_models() {
  static const std::vector<MemoryModel> all{
      MemoryModel::LinearAttn,    MemoryModel::GatedLinearAttn, MemoryModel::DeltaNet,
      MemoryModel::DeltaNetMomentum, MemoryModel::SoftmaxNoNorm, MemoryModel::SoftmaxNorm,
      MemoryModel::GatedSoftmaxNorm};
  return all;
}

bool uses_feature_map(MemoryModel m) {
  return m == MemoryModel::SoftmaxNoNorm || m == MemoryModel::SoftmaxNorm || m == MemoryModel::GatedSoftmaxNorm;
}

MemoryState MemoryState::zeros(std::size_t d_v, std::size_t d_k) {
  if (d_v == 0 || d_k == 0) throw DimensionError("memory state needs positive dimensions");
  MemoryState st;
  st.s = Matrix(d_v, d_k);
  st.c = Matrix(d_v, d_k);
  st.d_k = d_k;
  st.d_v = d_v;
  return st;
}

namespace {

bool gated(MemoryModel m) { return m == MemoryModel::GatedLinearAttn || m == MemoryModel::GatedSoftmaxNorm; }

void validate(const RecurrentSpec& spec, const MemoryState& st, const StepInput& in) {
  if (in.k.size() != st.d_k || in.v.size() != st.d_v)
    throw DimensionError("step input does not match state dimensions");
  if (!uses_feature_map(spec.model) && (st.s.rows() != st.d_v || st.s.cols() != st.d_k))
    throw DimensionError("state matrix has the wrong shape");
  if (gated(spec.model)) {
    if (spec.gate_lambda.size() != st.d_v) throw DimensionError("gate_lambda must have d_v entries");
    for (double l : spec.gate_lambda)
      if (!(l > 0.0 && l < 1.0)) throw DimensionError("gate entries must lie in (0, 1)");
  }
  if (spec.model == MemoryModel::DeltaNetMomentum && !(spec.momentum_eta > 0.0 && spec.momentum_eta < 1.0))
    throw DimensionError("momentum_eta must lie in (0, 1)");
  for (double x : in.k)
    if (!std::isfinite(x)) throw DimensionError("non-finite key");
  for (double x : in.v)
    if (!std::isfinite(x)) throw DimensionError("non-finite value");
}

double kappa(const RecurrentSpec& spec, std::span<const double> x, std::span<const double> y) {
  return kernel_of_score(spec.feature_map, dot(x, y), effective_tau(spec.feature_map, x.size()));
}

// sum_i w_i kappa(k_i, q) v_i, i.e. S phi(q).
std::vector<double> history_apply(const RecurrentSpec& spec, const std::vector<HistoryEntry>& h,
                                  std::span<const double> q, std::size_t d_v) {
  std::vector<double> out(d_v, 0.0);
  for (const auto& e : h) {
    const double c = e.weight * kappa(spec, e.k, q);
    for (std::size_t a = 0; a < d_v; ++a) out[a] += c * e.v[a];
  }
  return out;
}

// <D S, S>_F in feature space for a diagonal weighting D (empty = identity).
double history_sq(const RecurrentSpec& spec, const std::vector<HistoryEntry>& h, const std::vector<double>& diag) {
  double total = 0.0;
  for (std::size_t i = 0; i < h.size(); ++i) {
    for (std::size_t j = 0; j < h.size(); ++j) {
      double vv = 0.0;
      for (std::size_t a = 0; a < h[i].v.size(); ++a)
        vv += h[i].v[a] * h[j].v[a] * (diag.empty() ? 1.0 : diag[a]);
      total += h[i].weight * h[j].weight * kappa(spec, h[i].k, h[j].k) * vv;
    }
  }
  return total;
}

double finite_loss(const RecurrentSpec& spec, const MemoryState& st, const StepInput& in) {
  const std::vector<double> sk = matvec(st.s, in.k);
  switch (spec.model) {
    case MemoryModel::LinearAttn: return -dot(sk, in.v);
    case MemoryModel::GatedLinearAttn: {
      double reg = 0.0;
      for (std::size_t r = 0; r < st.d_v; ++r) reg += (1.0 - spec.gate_lambda[r]) * dot(st.s.row(r), st.s.row(r));
      return -dot(sk, in.v) + 0.5 * reg;
    }
    case MemoryModel::DeltaNet: {
      double e = 0.0;
      for (std::size_t a = 0; a < st.d_v; ++a) e += (sk[a] - in.v[a]) * (sk[a] - in.v[a]);
      return 0.5 * e;
    }
    case MemoryModel::DeltaNetMomentum: {
      // 1/2 |S k_t|^2 - <C_t, S> with C_t = eta C_{t-1} + v_t k_t^T.
      const Matrix ct = add(scale(st.c, spec.momentum_eta), outer(in.v, in.k));
      return 0.5 * dot(sk, sk) - dot(ct.data(), st.s.data());
    }
    default: break;
  }
  throw DimensionError("not a finite-feature model");
}

double softmax_loss(const RecurrentSpec& spec, const MemoryState& st, const StepInput& in) {
  const double t = static_cast<double>(st.t + 1);
  const double read = dot(history_apply(spec, st.history, in.k, st.d_v), in.v);
  switch (spec.model) {
    case MemoryModel::SoftmaxNoNorm: return -read;
    case MemoryModel::SoftmaxNorm: return (0.5 * history_sq(spec, st.history, {}) - read) / t;
    case MemoryModel::GatedSoftmaxNorm:
      return 0.5 * history_sq(spec, st.history, {}) -
             0.5 * (t - 1.0) / t * history_sq(spec, st.history, spec.gate_lambda) - read / t;
    default: break;
  }
  throw DimensionError("not a softmax model");
}

}  // namespace

MemoryState update(const RecurrentSpec& spec, const MemoryState& state, const StepInput& input) {
  validate(spec, state, input);
  MemoryState next = state;
  next.t = state.t + 1;
  bool finite = true;
  switch (spec.model) {
    case MemoryModel::LinearAttn:
      next.s = add(state.s, outer(input.v, input.k));
      break;
    case MemoryModel::GatedLinearAttn:
      for (std::size_t r = 0; r < state.d_v; ++r)
        for (std::size_t c = 0; c < state.d_k; ++c)
          next.s(r, c) = spec.gate_lambda[r] * state.s(r, c) + input.v[r] * input.k[c];
      break;
    case MemoryModel::DeltaNet:
    case MemoryModel::DeltaNetMomentum: {
      Matrix c = outer(input.v, input.k);
      if (spec.model == MemoryModel::DeltaNetMomentum) {
        c = add(scale(state.c, spec.momentum_eta), c);
        next.c = c;
      }
      const std::vector<double> sk = matvec(state.s, input.k);
      next.s = add(sub(state.s, outer(sk, input.k)), c);
      break;
    }
    case MemoryModel::SoftmaxNoNorm:
    case MemoryModel::SoftmaxNorm:
    case MemoryModel::GatedSoftmaxNorm: {
      const double t = static_cast<double>(next.t);
      const bool norm = spec.model != MemoryModel::SoftmaxNoNorm;
      for (auto& e : next.history) {
        if (norm) e.weight *= (t - 1.0) / t;
        if (spec.model == MemoryModel::GatedSoftmaxNorm)
          for (std::size_t a = 0; a < e.v.size(); ++a) e.v[a] *= spec.gate_lambda[a];
        for (double x : e.v) finite = finite && std::isfinite(x);
      }
      next.history.push_back({input.k, input.v, norm ? 1.0 / t : 1.0});
      // phi(k)^T phi(k) must itself be representable.
      finite = finite && std::isfinite(kappa(spec, input.k, input.k));
      break;
    }
  }
  if (!uses_feature_map(spec.model)) finite = next.s.all_finite() && next.c.all_finite();
  if (!finite) throw ExplosionError("memory state became non-finite", state.t);
  return next;
}

double loss_eval(const RecurrentSpec& spec, const MemoryState& state, const StepInput& input) {
  validate(spec, state, input);
  return uses_feature_map(spec.model) ? softmax_loss(spec, state, input) : finite_loss(spec, state, input);
}

double gradient_step_check(const RecurrentSpec& spec, const MemoryState& state, const StepInput& input,
                           double eps) {
  if (!(eps >= 1e-7 && eps <= 1e-4)) throw DimensionError("gradient_step_check eps must lie in [1e-7, 1e-4]");
  const MemoryState next = update(spec, state, input);
  double worst = 0.0, scale_ = 0.0;
  std::vector<std::pair<double, double>> pairs;  // (analytic, finite difference)

  if (!uses_feature_map(spec.model)) {
    const Matrix grad = sub(state.s, next.s);
    MemoryState probe = state;
    for (std::size_t r = 0; r < state.d_v; ++r) {
      for (std::size_t c = 0; c < state.d_k; ++c) {
        const double orig = probe.s(r, c);
        probe.s(r, c) = orig + eps;
        const double up = loss_eval(spec, probe, input);
        probe.s(r, c) = orig - eps;
        const double down = loss_eval(spec, probe, input);
        probe.s(r, c) = orig;
        pairs.emplace_back(grad(r, c), (up - down) / (2 * eps));
      }
    }
  } else {
    // Directional derivative along e_a phi(k_j)^T is (grad phi(k_j))_a, and
    // grad = S_{t-1} - S_t lies in span{phi(k_j)}.
    std::vector<std::vector<double>> dirs;
    for (const auto& e : state.history) dirs.push_back(e.k);
    dirs.push_back(input.k);
    for (const auto& kj : dirs) {
      const std::vector<double> before = history_apply(spec, state.history, kj, state.d_v);
      const std::vector<double> after = history_apply(spec, next.history, kj, state.d_v);
      for (std::size_t a = 0; a < state.d_v; ++a) {
        MemoryState probe = state;
        std::vector<double> ea(state.d_v, 0.0);
        ea[a] = 1.0;
        probe.history.push_back({kj, ea, eps});
        const double up = loss_eval(spec, probe, input);
        probe.history.back().weight = -eps;
        const double down = loss_eval(spec, probe, input);
        pairs.emplace_back(before[a] - after[a], (up - down) / (2 * eps));
      }
    }
  }
  for (const auto& [an, fd] : pairs) scale_ = std::max(scale_, std::abs(an));
  for (const auto& [an, fd] : pairs) worst = std::max(worst, std::abs(an - fd));
  // Absolute for O(1) gradients, relative once entries grow past 1.
  return worst / std::max(1.0, scale_);
}

std::vector<double> recall(const RecurrentSpec& spec, const MemoryState& state, std::span<const double> q) {
  if (q.size() != state.d_k) throw DimensionError("query does not match d_k");
  if (uses_feature_map(spec.model)) return history_apply(spec, state.history, q, state.d_v);
  return matvec(state.s, q);
}

double state_norm(const RecurrentSpec& spec, const MemoryState& state) {
  if (uses_feature_map(spec.model)) return std::sqrt(std::max(0.0, history_sq(spec, state.history, {})));
  return frobenius_norm(state.s);
}

std::vector<NormPoint> norm_growth_trace(const RecurrentSpec& spec, const StepInput& input, std::size_t steps) {
  MemoryState st = MemoryState::zeros(input.v.size(), input.k.size());
  std::vector<NormPoint> out;
  out.reserve(steps);
  for (std::size_t i = 1; i <= steps; ++i) {
    st = update(spec, st, input);
    out.push_back({i, state_norm(spec, st)});
  }
  return out;
}

void write_norm_csv(std::ostream& out, const std::vector<NormPoint>& trace) {
  out << "step,frobenius_norm\n";
  const auto old = out.precision(17);
  for (const auto& p : trace) out << p.step << ',' << p.frobenius_norm << '\n';
  out.precision(old);
}

Matrix analytical_optimum(const Matrix& w_k, const Matrix& w_v, const Matrix& x_samples) {
  if (w_k.cols() != x_samples.cols() || w_v.cols() != x_samples.cols() || x_samples.rows() == 0)
    throw DimensionError("projections and samples disagree on d_x");
  const Matrix m = scale(matmul(transpose(x_samples), x_samples), 1.0 / static_cast<double>(x_samples.rows()));
  const Matrix p = matmul_nt(matmul(w_k, m), w_k);  // W_k M W_k^T, symmetric
  const Matrix q = matmul_nt(matmul(w_v, m), w_k);  // W_v M W_k^T
  // S P = Q  <=>  P S^T = Q^T.
  return transpose(lu_solve(lu_factor(p), transpose(q)));
}

double optimum_objective(const Matrix& s, const Matrix& w_k, const Matrix& w_v, const Matrix& x_samples) {
  const Matrix pred = matmul_nt(x_samples, matmul(s, w_k));  // rows: (S W_k x)^T
  const Matrix target = matmul_nt(x_samples, w_v);
  const Matrix diff = sub(pred, target);
  return 0.5 * dot(diff.data(), diff.data()) / static_cast<double>(x_samples.rows());
}

double random_gradient_check(MemoryModel m, std::size_t instances, const Rng& rng, double eps) {
  Rng r = rng;
  auto vec = [&](std::size_t n, double sd) {
    std::vector<double> v(n);
    for (auto& x : v) x = sd * r.gaussian();
    return v;
  };
  double worst = 0.0;
  for (std::size_t inst = 0; inst < instances; ++inst) {
    const std::size_t d_k = 1 + r.below(5), d_v = 1 + r.below(4);
    RecurrentSpec spec;
    spec.model = m;
    for (std::size_t i = 0; i < d_v; ++i) spec.gate_lambda.push_back(0.05 + 0.9 * r.uniform());
    spec.momentum_eta = 0.05 + 0.9 * r.uniform();
    auto st = MemoryState::zeros(d_v, d_k);
    const std::size_t warm = r.below(5);
    for (std::size_t i = 0; i < warm; ++i) st = update(spec, st, {vec(d_k, 0.5), vec(d_v, 1.0)});
    if (!uses_feature_map(m)) st.s = add(st.s, r.gaussian_matrix(d_v, d_k));
    worst = std::max(worst, gradient_step_check(spec, st, {vec(d_k, 0.5), vec(d_v, 1.0)}, eps));
  }
  return worst;
}

}  // namespace deltamem

#include <cmath>
#include <sstream>

#include "doctest.h"

#include "deltamem/errors.hpp"
#include "deltamem/linalg.hpp"
#include "deltamem/memory_models.hpp"
#include "deltamem/rng.hpp"

using namespace deltamem;

namespace {

std::vector<double> gaussian_vec(Rng& rng, std::size_t n, double sd = 1.0) {
  std::vector<double> v(n);
  for (auto& x : v) x = sd * rng.gaussian();
  return v;
}

RecurrentSpec spec_for(MemoryModel m, std::size_t d_v, Rng& rng) {
  RecurrentSpec spec;
  spec.model = m;
  for (std::size_t i = 0; i < d_v; ++i) spec.gate_lambda.push_back(0.05 + 0.9 * rng.uniform());
  spec.momentum_eta = 0.05 + 0.9 * rng.uniform();
  return spec;
}

}  // namespace

TEST_CASE("update examples") {
  const StepInput in{{1, 0}, {2, 3}};
  auto st = MemoryState::zeros(2, 2);

  RecurrentSpec lin{MemoryModel::LinearAttn};
  const auto s1 = update(lin, st, in);
  CHECK(s1.s == Matrix::from_rows({{2, 0}, {3, 0}}));
  CHECK(s1.t == 1);
  CHECK(update(lin, s1, in).s == Matrix::from_rows({{4, 0}, {6, 0}}));

  RecurrentSpec delta{MemoryModel::DeltaNet};
  const auto d1 = update(delta, st, in);
  // A unit key overwrites its slot instead of accumulating.
  CHECK(update(delta, d1, in).s == d1.s);

  RecurrentSpec gated{MemoryModel::GatedLinearAttn, {0.5, 0.25}};
  CHECK(update(gated, s1, in).s == Matrix::from_rows({{3, 0}, {3.75, 0}}));

  RecurrentSpec mom{MemoryModel::DeltaNetMomentum};
  mom.momentum_eta = 0.5;
  const auto m1 = update(mom, st, in);
  const auto m2 = update(mom, m1, in);
  // S_2 = S_1 (I - k k^T) + (0.5 + 1) v k^T.
  CHECK(m2.s == Matrix::from_rows({{3, 0}, {4.5, 0}}));
  CHECK(m2.c == Matrix::from_rows({{3, 0}, {4.5, 0}}));
}

TEST_CASE("update validates its inputs") {
  auto st = MemoryState::zeros(2, 3);
  CHECK_THROWS_AS(update({MemoryModel::LinearAttn}, st, {{1, 0}, {1, 1}}), DimensionError);
  CHECK_THROWS_AS(update({MemoryModel::GatedLinearAttn, {0.5}}, st, {{1, 0, 0}, {1, 1}}), DimensionError);
  CHECK_THROWS_AS(update({MemoryModel::GatedLinearAttn, {0.5, 1.0}}, st, {{1, 0, 0}, {1, 1}}), DimensionError);
  RecurrentSpec mom{MemoryModel::DeltaNetMomentum};
  mom.momentum_eta = 1.0;
  CHECK_THROWS_AS(update(mom, st, {{1, 0, 0}, {1, 1}}), DimensionError);
  CHECK_THROWS_AS(MemoryState::zeros(0, 3), DimensionError);
}

TEST_CASE("explosion is reported with its step") {
  // A key with |k|^2 = 9 makes I - k k^T expand by a factor 8 per step.
  RecurrentSpec delta{MemoryModel::DeltaNet};
  const StepInput in{{3.0}, {1.0}};
  auto st = MemoryState::zeros(1, 1);
  std::size_t failed_at = 0;
  try {
    for (int i = 0; i < 2000; ++i) st = update(delta, st, in);
  } catch (const ExplosionError& e) {
    failed_at = e.step();
  }
  CHECK(failed_at > 100);
  CHECK(failed_at == st.t);
}

TEST_CASE("loss examples") {
  auto st = MemoryState::zeros(2, 2);
  st.s = Matrix::from_rows({{1, 2}, {3, 4}});
  const StepInput in{{1, 1}, {1, -1}};
  // S k = (3, 7).
  CHECK(loss_eval({MemoryModel::LinearAttn}, st, in) == -(3.0 - 7.0));
  CHECK(loss_eval({MemoryModel::DeltaNet}, st, in) == 0.5 * (4.0 + 64.0));
  RecurrentSpec gated{MemoryModel::GatedLinearAttn, {0.5, 0.5}};
  CHECK(loss_eval(gated, st, in) == doctest::Approx(4.0 + 0.25 * 30.0));

  RecurrentSpec soft{MemoryModel::SoftmaxNoNorm};
  soft.feature_map = KernelSpec::linear();
  auto hs = MemoryState::zeros(2, 2);
  CHECK(loss_eval(soft, hs, in) == 0.0);
  hs = update(soft, hs, {{1, 0}, {2, 0}});
  // S = (2,0)(1,0)^T so S k = (2, 0).
  CHECK(loss_eval(soft, hs, in) == -2.0);
}

TEST_CASE("gradient step equals one step of the recurrence, every row") {
  Rng rng(2024);
  for (MemoryModel m : all_memory_models()) {
    double worst = 0.0;
    for (int inst = 0; inst < 100; ++inst) {
      const std::size_t d_k = 1 + rng.below(5), d_v = 1 + rng.below(4);
      const RecurrentSpec spec = spec_for(m, d_v, rng);
      auto st = MemoryState::zeros(d_v, d_k);
      const std::size_t warm = rng.below(5);
      for (std::size_t i = 0; i < warm; ++i)
        st = update(spec, st, {gaussian_vec(rng, d_k, 0.5), gaussian_vec(rng, d_v)});
      if (!uses_feature_map(m)) st.s = add(st.s, rng.gaussian_matrix(d_v, d_k));
      worst = std::max(worst, gradient_step_check(spec, st, {gaussian_vec(rng, d_k, 0.5), gaussian_vec(rng, d_v)}));
    }
    INFO(memory_model_name(m));
    CHECK(worst < 1e-6);
  }
}

TEST_CASE("gradient_step_check rejects a bad step size") {
  auto st = MemoryState::zeros(1, 1);
  CHECK_THROWS_AS(gradient_step_check({MemoryModel::LinearAttn}, st, {{1}, {1}}, 1e-2), DimensionError);
}

TEST_CASE("softmax rows agree with an explicit finite feature map") {
  // With kappa = linear, phi is the identity and S can be formed directly.
  Rng rng(31);
  for (MemoryModel m : {MemoryModel::SoftmaxNoNorm, MemoryModel::SoftmaxNorm, MemoryModel::GatedSoftmaxNorm}) {
    RecurrentSpec spec = spec_for(m, 3, rng);
    spec.feature_map = KernelSpec::linear();
    auto st = MemoryState::zeros(3, 4);
    Matrix s(3, 4);
    for (int t = 1; t <= 6; ++t) {
      const StepInput in{gaussian_vec(rng, 4), gaussian_vec(rng, 3)};
      st = update(spec, st, in);
      const double a = m == MemoryModel::SoftmaxNoNorm ? 1.0 : (t - 1.0) / t;
      const double c = m == MemoryModel::SoftmaxNoNorm ? 1.0 : 1.0 / t;
      for (std::size_t r = 0; r < 3; ++r)
        for (std::size_t j = 0; j < 4; ++j)
          s(r, j) = a * (m == MemoryModel::GatedSoftmaxNorm ? spec.gate_lambda[r] : 1.0) * s(r, j) +
                    c * in.v[r] * in.k[j];
    }
    const auto q = gaussian_vec(rng, 4);
    const auto got = recall(spec, st, q), want = matvec(s, q);
    for (std::size_t r = 0; r < 3; ++r) CHECK(got[r] == doctest::Approx(want[r]).epsilon(1e-12));
    CHECK(state_norm(spec, st) == doctest::Approx(frobenius_norm(s)).epsilon(1e-12));
  }
}

TEST_CASE("normalized softmax writes with weight 1/t") {
  RecurrentSpec spec{MemoryModel::SoftmaxNorm};
  auto st = MemoryState::zeros(1, 2);
  for (int t = 1; t <= 50; ++t) {
    st = update(spec, st, {{0.1 * t, 0.0}, {1.0}});
    CHECK(st.history.back().weight == doctest::Approx(1.0 / t).epsilon(1e-14));
    // Older writes have been decayed to the same weight.
    CHECK(st.history.front().weight == doctest::Approx(1.0 / t).epsilon(1e-12));
  }
}

TEST_CASE("norm growth: deltanet bounded, linear attention linear") {
  Rng rng(77);
  for (int trial = 0; trial < 20; ++trial) {
    auto k = gaussian_vec(rng, 8);
    const double nk = norm2(k);
    for (auto& x : k) x /= nk;
    const StepInput in{k, gaussian_vec(rng, 5)};
    const double nv = norm2(in.v);

    const auto delta = norm_growth_trace({MemoryModel::DeltaNet}, in, 200);
    for (const auto& p : delta) CHECK(p.frobenius_norm <= nv * (1 + 1e-12));

    const auto lin = norm_growth_trace({MemoryModel::LinearAttn}, in, 200);
    for (const auto& p : lin) CHECK(p.frobenius_norm == doctest::Approx(p.step * nv).epsilon(1e-12));
  }
  std::ostringstream os;
  write_norm_csv(os, norm_growth_trace({MemoryModel::LinearAttn}, {{1.0}, {2.0}}, 2));
  CHECK(os.str() == "step,frobenius_norm\n1,2\n2,4\n");
}

TEST_CASE("analytical optimum") {
  Rng rng(5);
  const Matrix x = rng.gaussian_matrix(200, 4);

  SUBCASE("identity key projection returns W_v") {
    const Matrix w_v = rng.gaussian_matrix(3, 4);
    CHECK(max_abs_diff(analytical_optimum(Matrix::identity(4), w_v, x), w_v) < 1e-10);
  }
  SUBCASE("invertible key projection returns W_v W_k^-1") {
    const Matrix w_k = add(rng.gaussian_matrix(4, 4), scale(Matrix::identity(4), 3.0));
    const Matrix w_v = rng.gaussian_matrix(4, 4);
    const Matrix expect = matmul(w_v, inverse(w_k));
    CHECK(max_abs_diff(analytical_optimum(w_k, w_v, x), expect) < 1e-9);
  }
  SUBCASE("low-rank key projection is stationary") {
    const Matrix w_k = rng.gaussian_matrix(2, 4);
    const Matrix w_v = rng.gaussian_matrix(3, 4);
    Matrix s = analytical_optimum(w_k, w_v, x);
    const double base = optimum_objective(s, w_k, w_v, x);
    double g = 0.0;
    for (std::size_t i = 0; i < s.size(); ++i) {
      const double o = s.data()[i];
      s.data()[i] = o + 1e-6;
      const double up = optimum_objective(s, w_k, w_v, x);
      s.data()[i] = o - 1e-6;
      const double down = optimum_objective(s, w_k, w_v, x);
      s.data()[i] = o;
      g = std::max(g, std::abs(up - down) / 2e-6);
      // and it is a minimum
      CHECK(up >= base - 1e-12);
      CHECK(down >= base - 1e-12);
    }
    CHECK(g < 1e-6);
  }
  SUBCASE("rank-deficient key projection is singular") {
    Matrix w_k = rng.gaussian_matrix(3, 4);
    for (std::size_t c = 0; c < 4; ++c) w_k(2, c) = w_k(0, c) + w_k(1, c);
    CHECK_THROWS_AS(analytical_optimum(w_k, rng.gaussian_matrix(2, 4), x), SingularMatrixError);
  }
}

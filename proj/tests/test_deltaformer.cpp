#include <chrono>
#include <cmath>

#include "doctest.h"

#include "deltamem/deltaformer.hpp"
#include "deltamem/errors.hpp"
#include "deltamem/linalg.hpp"
#include "deltamem/memory_models.hpp"
#include "deltamem/rng.hpp"

using namespace deltamem;

namespace {

SequenceBatch random_batch(Rng& rng, std::size_t T, std::size_t d, bool with_w = false) {
  SequenceBatch s;
  s.q = rng.gaussian_matrix(T, d);
  s.k = rng.gaussian_matrix(T, d);
  s.v = rng.gaussian_matrix(T, d);
  if (with_w) s.w = rng.gaussian_matrix(T, d);
  return s;
}

DeltaFormerConfig linear_cfg() {
  DeltaFormerConfig cfg;
  cfg.kappa1 = KernelSpec::linear();
  cfg.kappa2 = KernelSpec::linear();
  cfg.normalize_u = UNormalization::None;
  return cfg;
}

// Independent softmax attention: explicit loops, no shared helpers.
Matrix reference_attention(const Matrix& q, const Matrix& k, const Matrix& v) {
  const std::size_t T = q.rows(), d = q.cols();
  Matrix o(T, v.cols());
  for (std::size_t t = 0; t < T; ++t) {
    std::vector<double> s(t + 1);
    double m = -1e300;
    for (std::size_t i = 0; i <= t; ++i) {
      double acc = 0;
      for (std::size_t c = 0; c < d; ++c) acc += q(t, c) * k(i, c);
      s[i] = acc / std::sqrt(double(d));
      m = std::max(m, s[i]);
    }
    double z = 0;
    for (auto& x : s) z += (x = std::exp(x - m));
    for (std::size_t i = 0; i <= t; ++i)
      for (std::size_t c = 0; c < v.cols(); ++c) o(t, c) += s[i] / z * v(i, c);
  }
  return o;
}

}  // namespace

TEST_CASE("compute_u_naive examples") {
  Rng rng(1);
  SUBCASE("single step is alpha v") {
    DeltaFormerConfig cfg;
    cfg.alpha = 0.7;
    auto s = random_batch(rng, 1, 4);
    CHECK(max_abs_diff(compute_u_naive(cfg, s), scale(s.v, 0.7)) == 0.0);
  }
  SUBCASE("orthogonal keys erase nothing") {
    auto cfg = linear_cfg();
    SequenceBatch s;
    s.k = Matrix::identity(4);
    s.v = rng.gaussian_matrix(4, 3);
    CHECK(compute_u_naive(cfg, s) == s.v);
  }
  SUBCASE("rounded similarity exchanges two slots") {
    DeltaFormerConfig cfg;
    cfg.kappa1 = KernelSpec::round(2);
    cfg.normalize_u = UNormalization::None;
    cfg.scale_scores = false;
    SequenceBatch s;
    s.k = Matrix::from_rows({{1, 0}, {0, 1}, {1, -1}});
    s.v = Matrix::from_rows({{1, 2, 3}, {4, 5, 6}, {0, 0, 0}});
    const Matrix u = compute_u_naive(cfg, s);
    for (std::size_t c = 0; c < 3; ++c) CHECK(u(2, c) == -u(0, c) + u(1, c));
  }
  SUBCASE("unnormalized exp blows up with a step index") {
    DeltaFormerConfig cfg;
    cfg.kappa1 = KernelSpec::exp();
    cfg.normalize_u = UNormalization::None;
    cfg.beta = 1.0;
    SequenceBatch s;
    s.k = Matrix(400, 2, 5.0);
    s.v = Matrix(400, 2, 1.0);
    CHECK_THROWS_AS(compute_u_naive(cfg, s), ExplosionError);
  }
}

TEST_CASE("config validation") {
  Rng rng(2);
  auto s = random_batch(rng, 4, 2);
  DeltaFormerConfig cfg;
  cfg.normalize_u = UNormalization::None;  // softmax kappa1 needs SoftmaxZ
  CHECK_THROWS_AS(compute_u_naive(cfg, s), DimensionError);
  cfg = DeltaFormerConfig{};
  cfg.chunk_size = 3;
  CHECK_THROWS_AS(compute_u_chunked(cfg, s), DimensionError);
  cfg = DeltaFormerConfig{};
  cfg.w_source = WSource::SeparateProjection;
  CHECK_THROWS_AS(compute_u_naive(cfg, s), DimensionError);
  cfg = linear_cfg();
  cfg.group_heads = 2;
  cfg.group_weights = {1.0};
  CHECK_THROWS_AS(compute_u_naive(cfg, s), DimensionError);
  cfg = DeltaFormerConfig{};
  cfg.normalize_u = UNormalization::RmsNorm;
  cfg.kappa1 = KernelSpec::linear();
  CHECK_NOTHROW(compute_u_naive(cfg, s));
  CHECK_THROWS_AS(compute_u_inverse(cfg, s), DimensionError);
  SequenceBatch empty;
  CHECK_THROWS_AS(compute_u_naive(DeltaFormerConfig{}, empty), DimensionError);
}

TEST_CASE("RmsNorm gives unit-RMS rows") {
  Rng rng(3);
  DeltaFormerConfig cfg = linear_cfg();
  cfg.normalize_u = UNormalization::RmsNorm;
  const Matrix u = compute_u_naive(cfg, random_batch(rng, 10, 6));
  for (std::size_t t = 0; t < 10; ++t) CHECK(norm2(u.row(t)) / std::sqrt(6.0) == doctest::Approx(1.0).epsilon(1e-9));
}

TEST_CASE("inverse path examples") {
  Rng rng(4);
  SUBCASE("beta zero leaves alpha V") {
    DeltaFormerConfig cfg;
    cfg.beta = 0.0;
    cfg.alpha = 2.0;
    auto s = random_batch(rng, 8, 3);
    CHECK(max_abs_diff(compute_u_inverse(cfg, s), scale(s.v, 2.0)) == 0.0);
  }
  SUBCASE("linear kernel T=32") {
    auto s = random_batch(rng, 32, 8);
    for (auto& x : s.k.data()) x *= 0.3;
    CHECK(max_abs_diff(compute_u_inverse(linear_cfg(), s), compute_u_naive(linear_cfg(), s)) < 1e-10);
  }
  SUBCASE("softmax T=64") {
    auto s = random_batch(rng, 64, 16);
    CHECK(max_abs_diff(compute_u_inverse(DeltaFormerConfig{}, s), compute_u_naive(DeltaFormerConfig{}, s)) < 1e-5);
  }
}

TEST_CASE("chunked path examples") {
  Rng rng(5);
  SUBCASE("single chunk matches the inverse path") {
    DeltaFormerConfig cfg;
    cfg.chunk_size = 32;
    auto s = random_batch(rng, 32, 8);
    CHECK(max_abs_diff(compute_u_chunked(cfg, s), compute_u_inverse(cfg, s)) < 1e-12);
  }
  SUBCASE("T=1024, C=32 softmax") {
    DeltaFormerConfig cfg;
    cfg.chunk_size = 32;
    auto s = random_batch(rng, 1024, 64);
    CHECK(max_abs_diff(compute_u_chunked(cfg, s), compute_u_naive(cfg, s)) < 1e-5);
  }
  SUBCASE("C=1 is the recurrence") {
    DeltaFormerConfig cfg;
    cfg.chunk_size = 1;
    auto s = random_batch(rng, 40, 8);
    CHECK(max_abs_diff(compute_u_chunked(cfg, s), compute_u_naive(cfg, s)) < 1e-10);
    auto lin = linear_cfg();
    lin.chunk_size = 1;
    for (auto& x : s.k.data()) x *= 0.3;
    CHECK(max_abs_diff(compute_u_chunked(lin, s), compute_u_naive(lin, s)) < 1e-10);
  }
  SUBCASE("ragged tail is padded") {
    DeltaFormerConfig cfg;
    cfg.chunk_size = 8;
    auto s = random_batch(rng, 21, 4);
    const Matrix u = compute_u_chunked(cfg, s);
    CHECK(u.rows() == 21);
    CHECK(max_abs_diff(u, compute_u_naive(cfg, s)) < 1e-10);
  }
}

TEST_CASE("three-way equivalence over random configurations") {
  Rng rng(6);
  int checked = 0;
  for (int trial = 0; trial < 60; ++trial) {
    const std::size_t T = 1 + rng.below(100), d = 1 + rng.below(12);
    DeltaFormerConfig cfg;
    cfg.chunk_size = std::size_t{1} << rng.below(7);
    cfg.alpha = 0.5 + rng.uniform();
    cfg.beta = rng.uniform() * 1.5;
    cfg.w_source = rng.below(2) ? WSource::SameAsKey : WSource::SeparateProjection;
    double tol = 1e-5;
    switch (trial % 4) {
      case 0: break;  // softmax, SoftmaxZ
      case 1: cfg.kappa1 = KernelSpec::exp(2.0); break;
      case 2: cfg.kappa1 = KernelSpec::linear(); cfg.normalize_u = UNormalization::None; tol = 1e-10; break;
      case 3: cfg.kappa1 = KernelSpec::relu(); cfg.normalize_u = UNormalization::None; tol = 1e-10; break;
    }
    auto s = random_batch(rng, T, d, true);
    if (cfg.normalize_u == UNormalization::None) {
      // keep the unnormalized recurrence contractive enough to stay O(1)
      const double shrink = 0.5 / std::sqrt(double(T));
      for (auto& x : s.k.data()) x *= shrink;
      for (auto& x : s.w.data()) x *= shrink;
    }
    const Matrix naive = compute_u_naive(cfg, s);
    const double scale_ = std::max(1.0, max_abs(naive));
    INFO("trial " << trial << " T=" << T << " C=" << cfg.chunk_size);
    CHECK(max_abs_diff(compute_u_inverse(cfg, s), naive) / scale_ < tol);
    CHECK(max_abs_diff(compute_u_chunked(cfg, s), naive) / scale_ < tol);
    ++checked;
  }
  CHECK(checked >= 50);
}

TEST_CASE("beta zero reduces the layer to softmax attention") {
  Rng rng(7);
  for (int trial = 0; trial < 10; ++trial) {
    DeltaFormerConfig cfg;
    cfg.beta = 0.0;
    auto s = random_batch(rng, 1 + rng.below(40), 1 + rng.below(8));
    const Matrix o = readout(cfg, s, compute_u_chunked(cfg, s));
    CHECK(max_abs_diff(o, reference_attention(s.q, s.k, s.v)) < 1e-12);
  }
  DeltaFormerConfig cfg;
  auto one = random_batch(rng, 1, 3);
  CHECK(max_abs_diff(readout(cfg, one, one.v), one.v) < 1e-15);
}

TEST_CASE("linear kernels reproduce the DeltaNet state") {
  Rng rng(8);
  auto cfg = linear_cfg();
  cfg.scale_scores = false;
  const std::size_t T = 30, d = 5;
  auto s = random_batch(rng, T, d);
  for (std::size_t t = 0; t < T; ++t) {
    const double n = norm2(s.k.row(t));
    for (auto& x : s.k.row(t)) x /= n;
  }
  const Matrix u = compute_u_naive(cfg, s);
  auto st = MemoryState::zeros(d, d);
  Matrix acc(d, d);
  for (std::size_t t = 0; t < T; ++t) {
    st = update({MemoryModel::DeltaNet}, st, {std::vector<double>(s.k.row(t).begin(), s.k.row(t).end()),
                                             std::vector<double>(s.v.row(t).begin(), s.v.row(t).end())});
    acc = add(acc, outer(u.row(t), s.k.row(t)));
    CHECK(max_abs_diff(acc, st.s) < 1e-9);
  }
  // and the readout is S_t q_t
  const Matrix o = readout(cfg, s, u);
  const auto sq = matvec(st.s, s.q.row(T - 1));
  for (std::size_t c = 0; c < d; ++c) CHECK(o(T - 1, c) == doctest::Approx(sq[c]).epsilon(1e-9));
}

TEST_CASE("sensitivity of u to erase perturbations is bounded") {
  Rng rng(9);
  for (int trial = 0; trial < 20; ++trial) {
    const std::size_t T = 16, d = 4;
    DeltaFormerConfig cfg;
    auto s = random_batch(rng, T, d);
    const Matrix a = erase_matrix(cfg, s);
    Matrix da = rng.gaussian_matrix(T, T);
    for (std::size_t r = 0; r < T; ++r)
      for (std::size_t c = r; c < T; ++c) da(r, c) = 0.0;
    const double delta = 1e-4;
    da = scale(da, delta / frobenius_norm(da));  // operator norm <= delta
    const Matrix u0 = tri_solve_unit_lower(a, s.v);
    const Matrix u1 = tri_solve_unit_lower(add(a, da), s.v);
    const Matrix inv = tri_inverse_padded(a);
    const Matrix inv1 = tri_inverse_padded(add(a, da));
    // Frobenius norms bound the operator norms.
    const double bound = frobenius_norm(inv) * frobenius_norm(inv1) * delta * frobenius_norm(s.v);
    CHECK(frobenius_norm(sub(u1, u0)) <= bound);
  }
}

TEST_CASE("chunked heads run independently") {
  Rng rng(10);
  DeltaFormerConfig cfg;
  cfg.chunk_size = 8;
  std::vector<SequenceBatch> heads;
  for (int h = 0; h < 4; ++h) heads.push_back(random_batch(rng, 50, 6));
  const auto out = compute_u_chunked_heads(cfg, heads);
  for (int h = 0; h < 4; ++h) CHECK(out[h] == compute_u_chunked(cfg, heads[h]));
}

TEST_CASE("grouped kernel and fitted coefficients") {
  const std::vector<double> one{1.0};
  const std::vector<double> k{0.3, -0.2}, w{0.5, 0.9};
  CHECK(grouped_kappa1(one, KernelSpec::exp(1.0), k, w) == doctest::Approx(std::exp(dot(k, w))));

  const auto a = fit_round_coefficients();
  REQUIRE(a.size() == 4);
  double row_m1 = 0, sum = 0;
  for (int j = 0; j < 4; ++j) {
    row_m1 += a[j] * std::exp(-(j + 1.0));
    sum += a[j];
  }
  CHECK(row_m1 == doctest::Approx(-1.0).epsilon(1e-9));
  CHECK(std::abs(sum) < 1e-9);
  for (double x : {-1.0, 0.0, 1.0, 2.0}) {
    const std::vector<double> kx{x}, unit{1.0};
    CHECK(std::abs(grouped_kappa1(a, KernelSpec::exp(1.0), kx, unit) - x) < 1e-8);
  }
  CHECK_THROWS_AS(fit_round_coefficients(3), DimensionError);

  // The same mixture through the layer config.
  DeltaFormerConfig cfg;
  cfg.kappa1 = KernelSpec::exp(1.0);
  cfg.normalize_u = UNormalization::None;
  cfg.scale_scores = false;
  cfg.group_heads = 4;
  cfg.group_weights = a;
  const std::vector<double> e1{1, 0}, e2{0, 1}, m{1, -1};
  CHECK(std::abs(kappa1_value(cfg, e1, e2)) < 1e-8);
  CHECK(std::abs(kappa1_value(cfg, e1, m) - 1.0) < 1e-8);
  CHECK(std::abs(kappa1_value(cfg, e2, m) + 1.0) < 1e-8);
}

TEST_CASE("chunk size sweep has a single valley (timing smoke)") {
  Rng rng(11);
  DeltaFormerConfig cfg;
  auto s = random_batch(rng, 256, 16);
  std::vector<double> times;
  for (std::size_t c = 1; c <= 256; c *= 2) {
    cfg.chunk_size = c;
    double best = 1e300;
    for (int rep = 0; rep < 3; ++rep) {
      const auto t0 = std::chrono::steady_clock::now();
      (void)compute_u_chunked(cfg, s);
      best = std::min(best, std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count());
    }
    times.push_back(best);
  }
  const auto valley = std::min_element(times.begin(), times.end()) - times.begin();
  // Timing noise allowance: 50% against the neighbour plus 1 ms.
  for (std::size_t i = 1; i < times.size(); ++i) {
    if (static_cast<long>(i) <= valley) CHECK(times[i] <= times[i - 1] * 1.5 + 1e-3);
    else CHECK(times[i] >= times[i - 1] / 1.5 - 1e-3);
  }
  CHECK(times.back() > times[valley]);
}

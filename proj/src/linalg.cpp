#include "deltamem/linalg.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>

#include "deltamem/errors.hpp"

namespace deltamem {

namespace {

void require_square(const Matrix& a, const char* op) {
  if (a.rows() != a.cols()) {
    throw DimensionError(std::string(op) + ": matrix is " + std::to_string(a.rows()) + "x" +
                         std::to_string(a.cols()) + ", expected square");
  }
}

double one_norm(const Matrix& a) {
  double best = 0.0;
  for (std::size_t j = 0; j < a.cols(); ++j) {
    double s = 0.0;
    for (std::size_t i = 0; i < a.rows(); ++i) s += std::abs(a(i, j));
    best = std::max(best, s);
  }
  return best;
}

}  // namespace

Matrix row_softmax(const Matrix& a, Mask mask) { return omp::row_softmax(a, mask); }

Matrix tri_solve_unit_lower(const Matrix& a, const Matrix& rhs) {
  require_square(a, "tri_solve_unit_lower");
  if (rhs.rows() != a.rows()) throw DimensionError("tri_solve_unit_lower: rhs row count mismatch");
  Matrix x = rhs;
  const std::size_t m = rhs.cols();
  for (std::size_t t = 1; t < a.rows(); ++t) {
    auto xt = x.row(t);
    for (std::size_t i = 0; i < t; ++i) {
      const double c = a(t, i);
      if (c == 0.0) continue;
      auto xi = x.row(i);
      for (std::size_t j = 0; j < m; ++j) xt[j] -= c * xi[j];
    }
  }
  return x;
}

Matrix tri_solve_unit_lower_transposed(const Matrix& a, const Matrix& rhs) {
  require_square(a, "tri_solve_unit_lower_transposed");
  if (rhs.rows() != a.rows()) {
    throw DimensionError("tri_solve_unit_lower_transposed: rhs row count mismatch");
  }
  Matrix x = rhs;
  const std::size_t n = a.rows(), m = rhs.cols();
  // (I + a)^T is unit upper: row i couples to rows t > i through a(t, i).
  for (std::size_t ii = n; ii-- > 0;) {
    auto xi = x.row(ii);
    for (std::size_t t = ii + 1; t < n; ++t) {
      const double c = a(t, ii);
      if (c == 0.0) continue;
      auto xt = x.row(t);
      for (std::size_t j = 0; j < m; ++j) xi[j] -= c * xt[j];
    }
  }
  return x;
}

bool is_power_of_two(std::size_t n) { return n != 0 && (n & (n - 1)) == 0; }

TriInverse tri_inverse_logdepth(const Matrix& a) {
  require_square(a, "tri_inverse_logdepth");
  const std::size_t c = a.rows();
  if (!is_power_of_two(c)) {
    throw DimensionError("tri_inverse_logdepth: size " + std::to_string(c) +
                         " is not a power of two");
  }
  for (std::size_t i = 0; i < c; ++i)
    for (std::size_t j = i; j < c; ++j)
      if (a(i, j) != 0.0) {
        throw DimensionError("tri_inverse_logdepth: entry (" + std::to_string(i) + "," +
                             std::to_string(j) + ") on or above the diagonal is nonzero");
      }

  TriInverse out;
  if (c == 1) {
    out.value = Matrix::identity(1);
    return out;
  }
  // (I+A)(I-A)(I+A^2)(I+A^4)... = I - A^C = I.
  Matrix x = sub(Matrix::identity(c), a);
  Matrix y = matmul(a, a);
  out.steps = 1;
  for (std::size_t span = 4; span <= c; span *= 2) {
    x = add(x, matmul(x, y));
    if (span < c) y = matmul(y, y);
    ++out.steps;
  }
  out.value = std::move(x);
  return out;
}

Matrix tri_inverse_padded(const Matrix& a) {
  require_square(a, "tri_inverse_padded");
  const std::size_t c = a.rows();
  std::size_t p = 1;
  while (p < c) p *= 2;
  if (p == c) return tri_inverse_logdepth(a).value;
  Matrix padded(p, p);
  for (std::size_t i = 0; i < c; ++i)
    for (std::size_t j = 0; j < c; ++j) padded(i, j) = a(i, j);
  const Matrix inv = tri_inverse_logdepth(padded).value;
  Matrix out(c, c);
  for (std::size_t i = 0; i < c; ++i)
    for (std::size_t j = 0; j < c; ++j) out(i, j) = inv(i, j);
  return out;
}

LuFactor lu_factor(const Matrix& a) {
  require_square(a, "lu_factor");
  const std::size_t n = a.rows();
  LuFactor f;
  f.lu = a;
  f.perm.resize(n);
  for (std::size_t i = 0; i < n; ++i) f.perm[i] = i;
  const double scale = std::max(max_abs(a), 1e-300);
  Matrix& lu = f.lu;
  for (std::size_t k = 0; k < n; ++k) {
    std::size_t piv = k;
    for (std::size_t i = k + 1; i < n; ++i)
      if (std::abs(lu(i, k)) > std::abs(lu(piv, k))) piv = i;
    if (std::abs(lu(piv, k)) <= 1e-15 * scale) {
      throw SingularMatrixError("lu_factor: zero pivot at column " + std::to_string(k),
                                std::numeric_limits<double>::infinity());
    }
    if (piv != k) {
      for (std::size_t j = 0; j < n; ++j) std::swap(lu(k, j), lu(piv, j));
      std::swap(f.perm[k], f.perm[piv]);
    }
    for (std::size_t i = k + 1; i < n; ++i) {
      const double m = lu(i, k) / lu(k, k);
      lu(i, k) = m;
      for (std::size_t j = k + 1; j < n; ++j) lu(i, j) -= m * lu(k, j);
    }
  }
  const Matrix inv = lu_solve(f, Matrix::identity(n));
  f.condition_estimate = one_norm(a) * one_norm(inv);
  if (!std::isfinite(f.condition_estimate) || f.condition_estimate > 1e14) {
    throw SingularMatrixError("lu_factor: matrix is numerically singular (condition " +
                                  std::to_string(f.condition_estimate) + ")",
                              f.condition_estimate);
  }
  return f;
}

Matrix lu_solve(const LuFactor& f, const Matrix& rhs) {
  const std::size_t n = f.lu.rows();
  if (rhs.rows() != n) throw DimensionError("lu_solve: rhs row count mismatch");
  const std::size_t m = rhs.cols();
  Matrix x(n, m);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < m; ++j) x(i, j) = rhs(f.perm[i], j);
  for (std::size_t i = 1; i < n; ++i)
    for (std::size_t k = 0; k < i; ++k) {
      const double l = f.lu(i, k);
      for (std::size_t j = 0; j < m; ++j) x(i, j) -= l * x(k, j);
    }
  for (std::size_t i = n; i-- > 0;) {
    for (std::size_t k = i + 1; k < n; ++k) {
      const double u = f.lu(i, k);
      for (std::size_t j = 0; j < m; ++j) x(i, j) -= u * x(k, j);
    }
    const double d = f.lu(i, i);
    for (std::size_t j = 0; j < m; ++j) x(i, j) /= d;
  }
  return x;
}

Matrix solve(const Matrix& a, const Matrix& rhs) { return lu_solve(lu_factor(a), rhs); }

Matrix inverse(const Matrix& a) { return solve(a, Matrix::identity(a.rows())); }

}  // namespace deltamem

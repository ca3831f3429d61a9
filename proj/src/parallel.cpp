#include "deltamem/parallel.hpp"

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <limits>
#include <string>

#include <omp.h>

#include "deltamem/errors.hpp"

namespace deltamem {

namespace {

int g_threads = 0;  // 0: use OpenMP default

int active_threads() { return g_threads > 0 ? g_threads : omp_get_max_threads(); }

void check_product(std::size_t inner_a, std::size_t inner_b, const char* op) {
  if (inner_a != inner_b) {
    throw DimensionError(std::string(op) + ": inner dimensions " + std::to_string(inner_a) +
                         " and " + std::to_string(inner_b) + " differ");
  }
}

std::size_t row_limit(Mask mask, std::size_t r, std::size_t cols) {
  switch (mask) {
    case Mask::None:
      return cols;
    case Mask::CausalInclusive:
      return std::min(r + 1, cols);
    case Mask::CausalStrict:
      return std::min(r, cols);
  }
  return cols;
}

// Softmax of one row prefix; shared by both schedules so they agree bitwise.
void softmax_row(std::span<const double> in, std::span<double> out, std::size_t limit) {
  double mx = -std::numeric_limits<double>::infinity();
  for (std::size_t j = 0; j < limit; ++j) mx = std::max(mx, in[j]);
  double z = 0.0;
  for (std::size_t j = 0; j < limit; ++j) {
    out[j] = std::exp(in[j] - mx);
    z += out[j];
  }
  const double inv = 1.0 / z;
  for (std::size_t j = 0; j < limit; ++j) out[j] *= inv;
  for (std::size_t j = limit; j < out.size(); ++j) out[j] = 0.0;
}

void check_softmax_input(const Matrix& a, Mask mask) {
  if (!a.all_finite()) throw DimensionError("row_softmax: non-finite input");
  for (std::size_t r = 0; r < a.rows(); ++r) {
    if (row_limit(mask, r, a.cols()) == 0) {
      throw DimensionError("row_softmax: row " + std::to_string(r) + " is fully masked");
    }
  }
}

}  // namespace

int configured_threads() {
  if (const char* env = std::getenv("DELTAMEM_THREADS")) {
    char* end = nullptr;
    const long n = std::strtol(env, &end, 10);
    if (end != env && *end == '\0' && n > 0) return static_cast<int>(n);
  }
  return omp_get_max_threads();
}

void set_threads(int n) { g_threads = std::max(0, n); }

int thread_count() { return active_threads(); }

namespace omp {

Matrix matmul(const Matrix& a, const Matrix& b) {
  check_product(a.cols(), b.rows(), "matmul");
  const std::size_t n = a.rows(), k = a.cols(), m = b.cols();
  Matrix c(n, m);
  const double* ad = a.data().data();
  const double* bd = b.data().data();
  double* cd = c.data().data();
#pragma omp parallel for schedule(static) num_threads(active_threads()) if (n * k * m > 32768)
  for (std::ptrdiff_t i = 0; i < static_cast<std::ptrdiff_t>(n); ++i) {
    double* crow = cd + i * m;
    for (std::size_t p = 0; p < k; ++p) {
      const double aip = ad[i * k + p];
      const double* brow = bd + p * m;
      for (std::size_t j = 0; j < m; ++j) crow[j] += aip * brow[j];
    }
  }
  return c;
}

Matrix matmul_nt(const Matrix& a, const Matrix& b) {
  check_product(a.cols(), b.cols(), "matmul_nt");
  const std::size_t n = a.rows(), k = a.cols(), m = b.rows();
  Matrix c(n, m);
  const double* ad = a.data().data();
  const double* bd = b.data().data();
  double* cd = c.data().data();
#pragma omp parallel for schedule(static) num_threads(active_threads()) if (n * k * m > 32768)
  for (std::ptrdiff_t i = 0; i < static_cast<std::ptrdiff_t>(n); ++i) {
    const double* arow = ad + i * k;
    for (std::size_t j = 0; j < m; ++j) {
      const double* brow = bd + j * k;
      double s = 0.0;
      for (std::size_t p = 0; p < k; ++p) s += arow[p] * brow[p];
      cd[i * m + j] = s;
    }
  }
  return c;
}

Matrix matmul_tn(const Matrix& a, const Matrix& b) {
  check_product(a.rows(), b.rows(), "matmul_tn");
  const std::size_t n = a.cols(), k = a.rows(), m = b.cols();
  Matrix c(n, m);
  const double* ad = a.data().data();
  const double* bd = b.data().data();
  double* cd = c.data().data();
#pragma omp parallel for schedule(static) num_threads(active_threads()) if (n * k * m > 32768)
  for (std::ptrdiff_t i = 0; i < static_cast<std::ptrdiff_t>(n); ++i) {
    double* crow = cd + i * m;
    for (std::size_t p = 0; p < k; ++p) {
      const double api = ad[p * n + i];
      const double* brow = bd + p * m;
      for (std::size_t j = 0; j < m; ++j) crow[j] += api * brow[j];
    }
  }
  return c;
}

Matrix row_softmax(const Matrix& a, Mask mask) {
  check_softmax_input(a, mask);
  Matrix out(a.rows(), a.cols());
#pragma omp parallel for schedule(static) num_threads(active_threads()) if (a.size() > 16384)
  for (std::ptrdiff_t r = 0; r < static_cast<std::ptrdiff_t>(a.rows()); ++r) {
    softmax_row(a.row(r), out.row(r), row_limit(mask, r, a.cols()));
  }
  return out;
}

}  // namespace omp

namespace serial {

Matrix matmul(const Matrix& a, const Matrix& b) {
  check_product(a.cols(), b.rows(), "matmul");
  Matrix c(a.rows(), b.cols());
  for (std::size_t i = 0; i < a.rows(); ++i)
    for (std::size_t j = 0; j < b.cols(); ++j) {
      double s = 0.0;
      for (std::size_t p = 0; p < a.cols(); ++p) s += a(i, p) * b(p, j);
      c(i, j) = s;
    }
  return c;
}

Matrix matmul_nt(const Matrix& a, const Matrix& b) {
  check_product(a.cols(), b.cols(), "matmul_nt");
  Matrix c(a.rows(), b.rows());
  for (std::size_t i = 0; i < a.rows(); ++i)
    for (std::size_t j = 0; j < b.rows(); ++j) {
      double s = 0.0;
      for (std::size_t p = 0; p < a.cols(); ++p) s += a(i, p) * b(j, p);
      c(i, j) = s;
    }
  return c;
}

Matrix matmul_tn(const Matrix& a, const Matrix& b) {
  check_product(a.rows(), b.rows(), "matmul_tn");
  Matrix c(a.cols(), b.cols());
  for (std::size_t i = 0; i < a.cols(); ++i)
    for (std::size_t j = 0; j < b.cols(); ++j) {
      double s = 0.0;
      for (std::size_t p = 0; p < a.rows(); ++p) s += a(p, i) * b(p, j);
      c(i, j) = s;
    }
  return c;
}

Matrix row_softmax(const Matrix& a, Mask mask) {
  check_softmax_input(a, mask);
  Matrix out(a.rows(), a.cols());
  for (std::size_t r = 0; r < a.rows(); ++r) softmax_row(a.row(r), out.row(r), row_limit(mask, r, a.cols()));
  return out;
}

}  // namespace serial

}  // namespace deltamem

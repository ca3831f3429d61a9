#pragma once

#include <cstddef>

#include "deltamem/matrix.hpp"
#include "deltamem/parallel.hpp"

namespace deltamem {

// Row softmax with max subtraction. Masked entries come out as exactly 0.
// Throws DimensionError if any row is fully masked (e.g. row 0 under
// Mask::CausalStrict).
Matrix row_softmax(const Matrix& a, Mask mask = Mask::None);

// Solves (I + a) X = rhs by forward substitution. Only the strictly lower
// triangle of `a` is read.
Matrix tri_solve_unit_lower(const Matrix& a, const Matrix& rhs);

// Solves (I + a)^T X = rhs (backward substitution on the transpose), the
// adjoint system used when differentiating tri_solve_unit_lower.
Matrix tri_solve_unit_lower_transposed(const Matrix& a, const Matrix& rhs);

struct TriInverse {
  Matrix value;
  int steps = 0;  // matrix-squaring rounds, log2(C)
};

// (I + a)^{-1} for strictly lower-triangular a of power-of-two size C via the
// doubling iteration X0 = I - a, Y0 = a^2; X <- X + X Y, Y <- Y^2, which
// terminates after log2(C) rounds because a^C = 0.
// Throws DimensionError if C is not a power of two or a has a nonzero entry
// on or above the diagonal.
TriInverse tri_inverse_logdepth(const Matrix& a);

// Same inverse for any C: pads a to the next power of two with a zero block
// (identity block in I + a), inverts, and crops.
Matrix tri_inverse_padded(const Matrix& a);

bool is_power_of_two(std::size_t n);

struct LuFactor {
  Matrix lu;
  std::vector<std::size_t> perm;
  double condition_estimate = 0.0;  // 1-norm condition number
};

// LU with partial pivoting. Throws SingularMatrixError when a pivot vanishes
// relative to the matrix scale or the condition estimate exceeds 1e14.
LuFactor lu_factor(const Matrix& a);
Matrix lu_solve(const LuFactor& f, const Matrix& rhs);
Matrix solve(const Matrix& a, const Matrix& rhs);
Matrix inverse(const Matrix& a);

}  // namespace deltamem

#pragma once

#include <cstddef>

#include "deltamem/matrix.hpp"

// Data-parallel inner loops. Every kernel in `omp` has a counterpart in
// `serial` written as the plainest possible loop nest; the serial versions
// are the test oracles and the benchmark baseline.
//
// All OpenMP kernels partition output rows statically and never reduce across
// threads, so results are bit-identical to a single-threaded run.
namespace deltamem {

// Thread cap from DELTAMEM_THREADS (unset or invalid: OpenMP default).
int configured_threads();

// Forces a thread count for subsequent kernels; 1 pins the serial schedule.
void set_threads(int n);

// Threads the next parallel region will use.
int thread_count();

// Which prefix of row r takes part in a row-wise reduction: all columns,
// columns [0, r] (inclusive causal) or [0, r) (strict causal).
enum class Mask { None, CausalInclusive, CausalStrict };

namespace omp {

Matrix matmul(const Matrix& a, const Matrix& b);
Matrix matmul_nt(const Matrix& a, const Matrix& b);
Matrix matmul_tn(const Matrix& a, const Matrix& b);

// Max-subtracted softmax over the unmasked prefix of each row; masked
// entries are 0. Throws DimensionError on a fully masked row.
Matrix row_softmax(const Matrix& a, Mask mask);

}  // namespace omp

namespace serial {

Matrix matmul(const Matrix& a, const Matrix& b);
Matrix matmul_nt(const Matrix& a, const Matrix& b);
Matrix matmul_tn(const Matrix& a, const Matrix& b);
Matrix row_softmax(const Matrix& a, Mask mask);

}  // namespace serial

}  // namespace deltamem

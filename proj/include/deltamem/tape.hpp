#pragma once

#include <cstddef>
#include <functional>
#include <vector>

#include "deltamem/matrix.hpp"
#include "deltamem/parallel.hpp"

namespace deltamem {

// Handle to a node on a Tape.
struct Var {
  std::size_t id = 0;
};

// Reverse-mode autodiff over 2-D matrices. Nodes are appended in creation
// order, which is already a topological order, so backward() walks them once
// in reverse. One tape per forward pass; tapes are not shared across threads.
class Tape {
 public:
  Var leaf(Matrix value);

  const Matrix& value(Var v) const { return nodes_[v.id].value; }
  // Adjoint after backward(); zeros if the node did not influence the output.
  const Matrix& grad(Var v);
  std::size_t size() const noexcept { return nodes_.size(); }

  Var matmul(Var a, Var b);
  Var matmul_nt(Var a, Var b);  // a b^T
  // scale * a b^T on the mask's prefix of every row, zero elsewhere; the
  // masked half is never computed.
  Var masked_scores(Var a, Var b, double scale, Mask mask);
  // p u reading only the mask's prefix of each row of p.
  Var masked_matmul(Var p, Var u, Mask mask);
  Var add(Var a, Var b);
  Var sub(Var a, Var b);
  Var hadamard(Var a, Var b);
  Var scale(Var a, double s);
  Var add_row_bias(Var x, Var bias);  // bias is 1 x cols, broadcast over rows
  Var mul_scalar(Var x, Var s);       // s is 1 x 1

  // Row softmax over the mask's prefix. With allow_empty, fully masked rows
  // (row 0 under CausalStrict) produce zeros instead of an error.
  Var row_softmax(Var x, Mask mask, bool allow_empty = false);
  Var exp(Var x);
  Var relu(Var x);
  // Rounds to 10^-decimals; backward passes the gradient straight through.
  Var round_ste(Var x, int decimals);
  // Zeroes entries outside the mask (j > i for CausalInclusive, j >= i for
  // CausalStrict).
  Var mask_lower(Var x, Mask mask);

  // X with (I + a) X = rhs; only the strict lower triangle of a is read.
  Var tri_solve(Var a, Var rhs);

  Var gather_rows(Var table, const std::vector<int>& ids);
  Var slice_cols(Var x, std::size_t begin, std::size_t end);
  Var concat_cols(const std::vector<Var>& parts);
  Var rms_norm_rows(Var x, double eps = 1e-6);
  // Rotary embedding with position = row index; consecutive column pairs
  // rotate, an odd trailing column is left alone.
  Var rope(Var x, double base);

  Var sum(Var x);
  Var mean(Var x);
  // Mean cross-entropy of logits rows against integer labels; 1 x 1.
  Var cross_entropy(Var logits, const std::vector<int>& labels);

  // Seeds d(out)/d(out) = 1 and propagates. out must be 1 x 1.
  void backward(Var out);

 private:
  struct Node {
    Matrix value;
    Matrix grad;
    std::function<void(Tape&, const Matrix&)> back;
  };

  Var push(Matrix value, std::function<void(Tape&, const Matrix&)> back = {});
  Matrix& acc(Var v);

  std::vector<Node> nodes_;
};

// Maximum over entries of |g_ad - g_fd| / (|g_ad| + |g_fd| + 1e-12), where
// g_fd uses central differences of step eps. f records a scalar on the tape
// given the leaf for x. Throws DimensionError if f's output is not 1 x 1 or
// eps is outside [1e-7, 1e-4].
double grad_check(const std::function<Var(Tape&, Var)>& f, const Matrix& x, double eps);

}  // namespace deltamem

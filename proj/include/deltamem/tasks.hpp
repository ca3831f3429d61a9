#pragma once

#include <cstddef>
#include <ostream>
#include <utility>
#include <vector>

#include "deltamem/matrix.hpp"
#include "deltamem/rng.hpp"

namespace deltamem {

// Token t stands for the t-th pair (i, j), i < j, in row-major order:
// (0,1), (0,2), ..., (n-2,n-1).
std::vector<std::pair<std::size_t, std::size_t>> swap_pairs(std::size_t n);

struct SwapSample {
  std::vector<int> input_ids;  // over C(n,2) swap tokens
  std::vector<int> labels;     // original element now at slot 0, after each swap
};

// Uniform i.i.d. swap tokens; each call consumes rng, so repeated calls give
// fresh data. Throws DimensionError for n < 2.
std::vector<SwapSample> gen_swap(std::size_t n, std::size_t seq_len, std::size_t batch, Rng& rng);

// Two disjoint random recursive trees over nodes 0..n-1, n/2 nodes each.
// Nodes are numbered in a topological order: every parent has a smaller id.
// Node 0 is the root whose tree is labelled reachable (itself included).
struct DagSample {
  std::vector<int> parent;       // -1 for the two roots
  std::vector<int> node_tokens;  // parent id, or n for a root
  std::vector<int> labels;       // 1 iff reachable from node 0
};

// Throws DimensionError unless n is even and >= 4.
std::vector<DagSample> gen_dag(std::size_t n, std::size_t batch, Rng& rng);

// adj(i, j) = 1 for the edge parent i -> child j.
Matrix dag_adjacency(const DagSample& s);

struct Closure {
  Matrix reachable;  // 0/1, diagonal included
  Matrix inverse;    // (I - A)^{-1}: path counts
};

// Boolean closure I + A + ... + A^{n-1} by repeated products, and the real
// (I - A)^{-1}. Throws DimensionError for a non-square or non-0/1 input,
// std::runtime_error when A^n != 0 (a cycle) or when the positive pattern of
// the inverse disagrees with the boolean closure.
Closure reachability_closure(const Matrix& adj);

// One sample per line: space-separated tokens, a tab, space-separated labels.
void dump_swap_dataset(std::ostream& out, const std::vector<SwapSample>& samples);
void dump_dag_dataset(std::ostream& out, const std::vector<DagSample>& samples);

}  // namespace deltamem

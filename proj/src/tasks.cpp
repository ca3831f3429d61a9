#include "deltamem/tasks.hpp"

#include <stdexcept>

#include "deltamem/errors.hpp"
#include "deltamem/linalg.hpp"

namespace deltamem {

std::vector<std::pair<std::size_t, std::size_t>> swap_pairs(std::size_t n) {
  std::vector<std::pair<std::size_t, std::size_t>> out;
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = i + 1; j < n; ++j) out.emplace_back(i, j);
  return out;
}

std::vector<SwapSample> gen_swap(std::size_t n, std::size_t seq_len, std::size_t batch, Rng& rng) {
  if (n < 2) throw DimensionError("gen_swap: need n >= 2");
  const auto pairs = swap_pairs(n);
  std::vector<SwapSample> out(batch);
  for (auto& s : out) {
    std::vector<std::size_t> perm(n);
    for (std::size_t i = 0; i < n; ++i) perm[i] = i;
    for (std::size_t t = 0; t < seq_len; ++t) {
      const std::size_t tok = rng.below(pairs.size());
      std::swap(perm[pairs[tok].first], perm[pairs[tok].second]);
      s.input_ids.push_back(static_cast<int>(tok));
      s.labels.push_back(static_cast<int>(perm[0]));
    }
  }
  return out;
}

std::vector<DagSample> gen_dag(std::size_t n, std::size_t batch, Rng& rng) {
  if (n < 4 || n % 2) throw DimensionError("gen_dag: n must be even and >= 4");
  std::vector<DagSample> out(batch);
  for (auto& s : out) {
    // Classes of nodes 1..n-1: n/2 - 1 more of tree A, n/2 of tree B, in
    // random order (Fisher-Yates).
    std::vector<int> cls(n, 0);
    for (std::size_t i = n / 2; i < n; ++i) cls[i] = 1;
    for (std::size_t i = n - 1; i > 1; --i) std::swap(cls[i], cls[1 + rng.below(i)]);
    s.parent.assign(n, -1);
    std::vector<std::vector<int>> members(2);
    for (std::size_t i = 0; i < n; ++i) {
      auto& m = members[cls[i]];
      if (!m.empty()) s.parent[i] = m[rng.below(m.size())];
      m.push_back(static_cast<int>(i));
    }
    for (std::size_t i = 0; i < n; ++i) {
      s.node_tokens.push_back(s.parent[i] < 0 ? static_cast<int>(n) : s.parent[i]);
      s.labels.push_back(cls[i] == 0 ? 1 : 0);
    }
  }
  return out;
}

Matrix dag_adjacency(const DagSample& s) {
  const std::size_t n = s.parent.size();
  Matrix a(n, n);
  for (std::size_t j = 0; j < n; ++j)
    if (s.parent[j] >= 0) a(static_cast<std::size_t>(s.parent[j]), j) = 1.0;
  return a;
}

Closure reachability_closure(const Matrix& adj) {
  const std::size_t n = adj.rows();
  if (n == 0 || adj.cols() != n) throw DimensionError("reachability_closure: adjacency must be square");
  for (double x : adj.data())
    if (x != 0.0 && x != 1.0) throw DimensionError("reachability_closure: adjacency must be 0/1");

  auto boolean = [](Matrix m) {
    for (double& x : m.data()) x = x > 0.0 ? 1.0 : 0.0;
    return m;
  };
  Matrix reach = Matrix::identity(n);
  Matrix power = adj;  // A^k as 0/1
  for (std::size_t k = 1; k <= n; ++k) {
    if (max_abs(power) == 0.0) break;
    if (k == n) throw std::runtime_error("reachability_closure: A^n != 0, the graph has a cycle");
    reach = boolean(add(reach, power));
    power = boolean(matmul(power, adj));
  }

  Closure c;
  c.reachable = reach;
  c.inverse = inverse(sub(Matrix::identity(n), adj));
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j)
      // path counts are integers, so 0.5 separates "none" from "some"
      if ((c.inverse(i, j) > 0.5) != (reach(i, j) == 1.0))
        throw std::runtime_error("reachability_closure: inverse sign pattern disagrees with the closure");
  return c;
}

namespace {

void write_ints(std::ostream& out, const std::vector<int>& v) {
  for (std::size_t i = 0; i < v.size(); ++i) out << (i ? " " : "") << v[i];
}

}  // namespace

void dump_swap_dataset(std::ostream& out, const std::vector<SwapSample>& samples) {
  for (const auto& s : samples) {
    write_ints(out, s.input_ids);
    out << '\t';
    write_ints(out, s.labels);
    out << '\n';
  }
}

void dump_dag_dataset(std::ostream& out, const std::vector<DagSample>& samples) {
  for (const auto& s : samples) {
    write_ints(out, s.node_tokens);
    out << '\t';
    write_ints(out, s.labels);
    out << '\n';
  }
}

}  // namespace deltamem

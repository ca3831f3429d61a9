// OpenMP kernels against their serial reference loops.
// Thread count comes from DELTAMEM_THREADS (OpenMP default when unset).
#include <benchmark/benchmark.h>

#include "deltamem/parallel.hpp"
#include "deltamem/rng.hpp"

namespace {

using deltamem::Mask;
using deltamem::Matrix;

Matrix random_square(std::size_t n, std::uint64_t seed) {
  deltamem::Rng rng(seed);
  return rng.gaussian_matrix(n, n);
}

template <Matrix (*F)(const Matrix&, const Matrix&)>
void bm_product(benchmark::State& state) {
  const auto n = static_cast<std::size_t>(state.range(0));
  const Matrix a = random_square(n, 1), b = random_square(n, 2);
  for (auto _ : state) benchmark::DoNotOptimize(F(a, b));
  state.SetItemsProcessed(state.iterations() * static_cast<std::int64_t>(n * n * n));
}

template <Matrix (*F)(const Matrix&, Mask)>
void bm_softmax(benchmark::State& state) {
  const auto n = static_cast<std::size_t>(state.range(0));
  const Matrix a = random_square(n, 3);
  for (auto _ : state) benchmark::DoNotOptimize(F(a, Mask::CausalInclusive));
  state.SetItemsProcessed(state.iterations() * static_cast<std::int64_t>(n * n));
}

}  // namespace

BENCHMARK(bm_product<deltamem::serial::matmul>)->Name("matmul/serial")->RangeMultiplier(2)->Range(64, 512);
BENCHMARK(bm_product<deltamem::omp::matmul>)->Name("matmul/omp")->RangeMultiplier(2)->Range(64, 512);
BENCHMARK(bm_product<deltamem::serial::matmul_nt>)->Name("matmul_nt/serial")->RangeMultiplier(2)->Range(64, 512);
BENCHMARK(bm_product<deltamem::omp::matmul_nt>)->Name("matmul_nt/omp")->RangeMultiplier(2)->Range(64, 512);
BENCHMARK(bm_product<deltamem::serial::matmul_tn>)->Name("matmul_tn/serial")->RangeMultiplier(2)->Range(64, 512);
BENCHMARK(bm_product<deltamem::omp::matmul_tn>)->Name("matmul_tn/omp")->RangeMultiplier(2)->Range(64, 512);
BENCHMARK(bm_softmax<deltamem::serial::row_softmax>)->Name("row_softmax/serial")->RangeMultiplier(2)->Range(64, 512);
BENCHMARK(bm_softmax<deltamem::omp::row_softmax>)->Name("row_softmax/omp")->RangeMultiplier(2)->Range(64, 512);

BENCHMARK_MAIN();

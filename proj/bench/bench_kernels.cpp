#include <benchmark/benchmark.h>

#include <random>
#include <vector>

#include "dslu/kernels.hpp"

namespace k = dslu::kernels;

namespace {

std::vector<double> random_vec(std::size_t n, unsigned seed) {
  std::mt19937_64 g(seed);
  std::normal_distribution<double> d;
  std::vector<double> v(n);
  for (auto& x : v) x = d(g);
  return v;
}

template <bool Omp>
void BM_Gemm(benchmark::State& st) {
  const auto n = static_cast<std::size_t>(st.range(0));
  const auto a = random_vec(n * n, 1), b = random_vec(n * n, 2);
  std::vector<double> c(n * n);
  for (auto _ : st) {
    if constexpr (Omp)
      k::omp::gemm(n, n, n, a, k::Trans::kNo, b, k::Trans::kNo, c, false);
    else
      k::serial::gemm(n, n, n, a, k::Trans::kNo, b, k::Trans::kNo, c, false);
    benchmark::DoNotOptimize(c.data());
  }
  st.SetItemsProcessed(st.iterations() * static_cast<long>(n * n * n));
}

template <bool Omp>
void BM_Softmax(benchmark::State& st) {
  const auto rows = static_cast<std::size_t>(st.range(0)), cols = std::size_t{256};
  const auto in = random_vec(rows * cols, 3);
  std::vector<double> out(in.size());
  for (auto _ : st) {
    if constexpr (Omp)
      k::omp::softmax_rows(rows, cols, in, out);
    else
      k::serial::softmax_rows(rows, cols, in, out);
    benchmark::DoNotOptimize(out.data());
  }
}

template <bool Omp>
void BM_LayerNorm(benchmark::State& st) {
  const auto rows = static_cast<std::size_t>(st.range(0)), cols = std::size_t{256};
  const auto in = random_vec(rows * cols, 4);
  std::vector<double> out(in.size()), inv(rows);
  for (auto _ : st) {
    if constexpr (Omp)
      k::omp::normalize_rows(rows, cols, 1e-5, in, out, inv);
    else
      k::serial::normalize_rows(rows, cols, 1e-5, in, out, inv);
    benchmark::DoNotOptimize(out.data());
  }
}

template <bool Omp>
void BM_Attention(benchmark::State& st) {
  const auto len = static_cast<std::size_t>(st.range(0)), d = std::size_t{64}, heads = std::size_t{4};
  const auto q = random_vec(len * d, 5), kk = random_vec(len * d, 6), v = random_vec(len * d, 7);
  std::vector<double> probs(heads * len * len), out(len * d);
  for (auto _ : st) {
    if constexpr (Omp)
      k::omp::attention_forward(len, len, d, heads, q, kk, v, {}, probs, out);
    else
      k::serial::attention_forward(len, len, d, heads, q, kk, v, {}, probs, out);
    benchmark::DoNotOptimize(out.data());
  }
}

}  // namespace

BENCHMARK(BM_Gemm<false>)->Arg(32)->Arg(128)->Arg(256);
BENCHMARK(BM_Gemm<true>)->Arg(32)->Arg(128)->Arg(256);
BENCHMARK(BM_Softmax<false>)->Arg(64)->Arg(1024);
BENCHMARK(BM_Softmax<true>)->Arg(64)->Arg(1024);
BENCHMARK(BM_LayerNorm<false>)->Arg(64)->Arg(1024);
BENCHMARK(BM_LayerNorm<true>)->Arg(64)->Arg(1024);
BENCHMARK(BM_Attention<false>)->Arg(32)->Arg(128);
BENCHMARK(BM_Attention<true>)->Arg(32)->Arg(128);

BENCHMARK_MAIN();

// SPDX-License-Identifier: Apache-2.0
//
// Serial reference loops against the OpenMP kernels at denoiser-sized shapes.
#include <benchmark/benchmark.h>
#include <omp.h>

#include <vector>

#include "ql/kernels.hpp"
#include "ql/rng.hpp"

namespace k = ql::kernels;

namespace {

std::vector<float> filled(std::size_t n, std::uint64_t seed) {
  ql::Rng rng(seed);
  std::vector<float> v;
  v.reserve(n);
  for (double d : rng.normals(n)) v.push_back(static_cast<float>(d));
  return v;
}

template <bool Parallel>
void BM_Matmul(benchmark::State& state) {
  const auto m = static_cast<std::size_t>(state.range(0));
  const std::size_t kk = 64, n = 64;
  auto a = filled(m * kk, 1), b = filled(kk * n, 2);
  std::vector<float> c(m * n);
  for (auto _ : state) {
    if constexpr (Parallel) {
      k::matmul_nn<float>(a, b, c, m, kk, n, false);
    } else {
      k::serial::matmul_nn<float>(a, b, c, m, kk, n, false);
    }
    benchmark::DoNotOptimize(c.data());
  }
  state.SetItemsProcessed(static_cast<std::int64_t>(state.iterations() * m * kk * n));
}

template <bool Parallel>
void BM_Softmax(benchmark::State& state) {
  const auto rows = static_cast<std::size_t>(state.range(0));
  const std::size_t cols = 256;
  auto x = filled(rows * cols, 3);
  std::vector<float> y(rows * cols);
  for (auto _ : state) {
    if constexpr (Parallel) {
      k::softmax_rows<float>(x, y, rows, cols);
    } else {
      k::serial::softmax_rows<float>(x, y, rows, cols);
    }
    benchmark::DoNotOptimize(y.data());
  }
}

template <bool Parallel>
void BM_LayerNorm(benchmark::State& state) {
  const auto rows = static_cast<std::size_t>(state.range(0));
  const std::size_t cols = 32;
  auto x = filled(rows * cols, 4), g = filled(cols, 5), b = filled(cols, 6);
  std::vector<float> y(rows * cols), xhat(rows * cols), inv(rows);
  for (auto _ : state) {
    if constexpr (Parallel) {
      k::layer_norm_rows<float>(x, g, b, y, xhat, inv, rows, cols, 1e-5);
    } else {
      k::serial::layer_norm_rows<float>(x, g, b, y, xhat, inv, rows, cols, 1e-5);
    }
    benchmark::DoNotOptimize(y.data());
  }
}

template <bool Parallel>
void BM_Attention(benchmark::State& state) {
  const auto n_k = static_cast<std::size_t>(state.range(0));
  const k::AttentionDims d{.n_q = 256, .n_k = n_k, .d_qk = 32, .d_v = 32, .heads = 8};
  auto q = filled(d.n_q * d.d_qk, 7), kk = filled(n_k * d.d_qk, 8), v = filled(n_k * d.d_v, 9);
  auto dout = filled(d.n_q * d.d_v, 10);
  std::vector<float> out(d.n_q * d.d_v), probs(d.heads * d.n_q * n_k);
  std::vector<float> dq(q.size()), dk(kk.size()), dv(v.size());
  for (auto _ : state) {
    if constexpr (Parallel) {
      k::attention_forward<float>(q, kk, v, {}, out, probs, d);
      k::attention_backward<float>(q, kk, v, probs, dout, dq, dk, dv, d);
    } else {
      k::serial::attention_forward<float>(q, kk, v, {}, out, probs, d);
      k::serial::attention_backward<float>(q, kk, v, probs, dout, dq, dk, dv, d);
    }
    benchmark::DoNotOptimize(dq.data());
  }
}

}  // namespace

BENCHMARK(BM_Matmul<false>)->Name("matmul/serial")->Arg(16)->Arg(256)->Arg(1024);
BENCHMARK(BM_Matmul<true>)->Name("matmul/openmp")->Arg(16)->Arg(256)->Arg(1024);
BENCHMARK(BM_Softmax<false>)->Name("softmax/serial")->Arg(256)->Arg(2048);
BENCHMARK(BM_Softmax<true>)->Name("softmax/openmp")->Arg(256)->Arg(2048);
BENCHMARK(BM_LayerNorm<false>)->Name("layer_norm/serial")->Arg(256)->Arg(4096);
BENCHMARK(BM_LayerNorm<true>)->Name("layer_norm/openmp")->Arg(256)->Arg(4096);
BENCHMARK(BM_Attention<false>)->Name("attention/serial")->Arg(1)->Arg(16)->Arg(256);
BENCHMARK(BM_Attention<true>)->Name("attention/openmp")->Arg(1)->Arg(16)->Arg(256);

int main(int argc, char** argv) {
  benchmark::Initialize(&argc, argv);
  if (benchmark::ReportUnrecognizedArguments(argc, argv)) return 1;
  benchmark::AddCustomContext("omp_max_threads", std::to_string(omp_get_max_threads()));
  benchmark::RunSpecifiedBenchmarks();
  benchmark::Shutdown();
  return 0;
}

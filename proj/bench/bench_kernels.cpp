// Copyright 2026 The bamforge Authors
// SPDX-License-Identifier: Apache-2.0

// Parallel kernels against their serial references.

#include <benchmark/benchmark.h>

#include <vector>

#include "bamforge/kernels.hpp"
#include "bamforge/rng.hpp"

namespace {

using namespace bamforge;

std::vector<double> random_buffer(std::size_t n, std::uint64_t seed) {
  Rng rng(seed);
  std::vector<double> v(n);
  for (double& x : v) x = rng.normal(0.0, 1.0);
  return v;
}

template <auto Fn>
void BM_Matmul(benchmark::State& state) {
  const auto n = static_cast<std::size_t>(state.range(0));
  const auto a = random_buffer(n * n, 1), b = random_buffer(n * n, 2);
  std::vector<double> c(n * n);
  for (auto _ : state) {
    Fn(a.data(), b.data(), c.data(), n, n, n, false);
    benchmark::DoNotOptimize(c.data());
  }
  state.SetItemsProcessed(state.iterations() * static_cast<std::int64_t>(2 * n * n * n));
}

template <auto Fn>
void BM_Attention(benchmark::State& state) {
  kernels::AttentionDims dims{8, static_cast<std::size_t>(state.range(0)), 4, 16};
  const auto q = random_buffer(dims.rows() * dims.width(), 3);
  const auto k = random_buffer(dims.rows() * dims.width(), 4);
  const auto v = random_buffer(dims.rows() * dims.width(), 5);
  std::vector<double> out(dims.rows() * dims.width()), probs(dims.prob_size());
  for (auto _ : state) {
    Fn(q.data(), k.data(), v.data(), out.data(), probs.data(), dims);
    benchmark::DoNotOptimize(out.data());
  }
}

BENCHMARK(BM_Matmul<kernels::matmul>)->Arg(64)->Arg(256);
BENCHMARK(BM_Matmul<kernels::serial::matmul>)->Arg(64)->Arg(256);
BENCHMARK(BM_Attention<kernels::attention_forward>)->Arg(64)->Arg(256);
BENCHMARK(BM_Attention<kernels::serial::attention_forward>)->Arg(64)->Arg(256);

}  // namespace

BENCHMARK_MAIN();

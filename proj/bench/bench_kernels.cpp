// Copyright 2026 The qlab Authors
// SPDX-License-Identifier: Apache-2.0
//
// Serial reference kernels against their OpenMP counterparts.

#include <omp.h>

#include <benchmark/benchmark.h>

#include "qlab/attention_sim.hpp"
#include "qlab/gemm_sim.hpp"
#include "qlab/quantizer.hpp"
#include "qlab/synth.hpp"

namespace {

using namespace qlab;

struct GemmInputs {
  std::vector<Fp8ActivationRow> x;
  QuantizedWeight w;
};

GemmInputs gemm_inputs(std::size_t m, std::size_t n, std::size_t k) {
  return {fp8_quantize_activations(gaussian_matrix(m, k, 1.0, 1)),
          quantize_weight(gaussian_matrix(n, k, 0.05, 2), 128, 0)};
}

void BM_GemmSerial(benchmark::State& state) {
  const auto n = static_cast<std::size_t>(state.range(0));
  const GemmInputs in = gemm_inputs(64, n, n);
  for (auto _ : state) benchmark::DoNotOptimize(int4fp8_gemm_serial(in.x, in.w));
  state.SetItemsProcessed(state.iterations() * 64 * static_cast<std::int64_t>(n * n));
}

void BM_GemmOmp(benchmark::State& state) {
  const auto n = static_cast<std::size_t>(state.range(0));
  const GemmInputs in = gemm_inputs(64, n, n);
  for (auto _ : state) benchmark::DoNotOptimize(int4fp8_gemm(in.x, in.w));
  state.SetItemsProcessed(state.iterations() * 64 * static_cast<std::int64_t>(n * n));
}

void attention(benchmark::State& state, bool parallel) {
  const auto n = static_cast<std::size_t>(state.range(0));
  const RealMatrix q = gaussian_matrix(n, 64, 1.0, 3);
  const RealMatrix k = gaussian_matrix(n, 64, 1.0, 4);
  const RealMatrix v = gaussian_matrix(n, 64, 1.0, 5);
  const TileSchedule s{64, 64, true, std::nullopt};
  const PrecisionPolicy pol = PrecisionPolicy::mixed();
  for (auto _ : state) {
    benchmark::DoNotOptimize(parallel ? tiled_attention_forward(q, k, v, s, pol)
                                      : tiled_attention_forward_serial(q, k, v, s, pol));
  }
}

void BM_AttentionSerial(benchmark::State& state) { attention(state, false); }
void BM_AttentionOmp(benchmark::State& state) { attention(state, true); }

// quantize_weight has no separate serial version; the reference run pins
// OpenMP to one thread.
void quantize(benchmark::State& state, bool parallel) {
  const auto n = static_cast<std::size_t>(state.range(0));
  const RealMatrix w = gaussian_matrix(n, n, 0.05, 6);
  const int saved = omp_get_max_threads();
  omp_set_num_threads(parallel ? saved : 1);
  for (auto _ : state) benchmark::DoNotOptimize(quantize_weight(w, 128, 0));
  omp_set_num_threads(saved);
}

void BM_QuantizeSerial(benchmark::State& state) { quantize(state, false); }
void BM_QuantizeOmp(benchmark::State& state) { quantize(state, true); }

BENCHMARK(BM_GemmSerial)->Arg(256)->Arg(512)->Unit(benchmark::kMillisecond);
BENCHMARK(BM_GemmOmp)->Arg(256)->Arg(512)->Unit(benchmark::kMillisecond);
BENCHMARK(BM_AttentionSerial)->Arg(256)->Arg(1024)->Unit(benchmark::kMillisecond);
BENCHMARK(BM_AttentionOmp)->Arg(256)->Arg(1024)->Unit(benchmark::kMillisecond);
BENCHMARK(BM_QuantizeSerial)->Arg(512)->Arg(2048)->Unit(benchmark::kMillisecond);
BENCHMARK(BM_QuantizeOmp)->Arg(512)->Arg(2048)->Unit(benchmark::kMillisecond);

}  // namespace

BENCHMARK_MAIN();

// SPDX-License-Identifier: Apache-2.0
// Copyright 2026 The protoncd Authors

// Serial reference vs OpenMP kernels on benchmark-sized batches.

#include <benchmark/benchmark.h>

#include "protoncd/kernels.hpp"

namespace protoncd {
namespace {

struct Batch {
  EncoderParams params;
  std::vector<Matrix> patches;
  std::vector<Vector> scores;
  std::vector<EncodeJob> jobs;
};

Batch make_batch(int n, int tokens) {
  EncoderConfig c;  // library defaults: d_model 32, 2 layers
  c.d_in = 16;
  Batch b;
  b.params = EncoderParams::init(c, 1);
  Rng rng(2);
  for (int i = 0; i < n; ++i) {
    Matrix m(tokens, c.d_in);
    for (double& x : m.flat()) x = rng.normal();
    b.patches.push_back(std::move(m));
    Vector s(tokens);
    for (double& x : s) x = rng.uniform();
    b.scores.push_back(std::move(s));
  }
  for (int i = 0; i < n; ++i) b.jobs.push_back({&b.patches[i], b.scores[i]});
  return b;
}

void BM_EncodeBatch(benchmark::State& state, ExecMode mode) {
  const Batch b = make_batch(static_cast<int>(state.range(0)), static_cast<int>(state.range(1)));
  const RegionGuidanceParams rg;
  std::vector<ForwardCache> caches;
  for (auto _ : state) benchmark::DoNotOptimize(encode_batch(b.jobs, b.params, rg, &caches, mode));
  state.SetItemsProcessed(state.iterations() * state.range(0));
}

void BM_BackwardBatch(benchmark::State& state, ExecMode mode) {
  const Batch b = make_batch(static_cast<int>(state.range(0)), static_cast<int>(state.range(1)));
  const RegionGuidanceParams rg;
  std::vector<ForwardCache> caches;
  encode_batch(b.jobs, b.params, rg, &caches, ExecMode::Serial);
  Rng rng(3);
  std::vector<Vector> dz(b.jobs.size(), Vector(b.params.config.d_model)), dh(b.jobs.size(), Vector(b.params.config.d_proj));
  for (auto* vs : {&dz, &dh}) {
    for (Vector& v : *vs) {
      for (double& x : v) x = rng.normal();
    }
  }
  EncoderParams grad = EncoderParams::zeros(b.params.config);
  for (auto _ : state) {
    backward_batch(b.params, caches, dz, dh, grad, mode);
    benchmark::ClobberMemory();
  }
  state.SetItemsProcessed(state.iterations() * state.range(0));
}

void BM_FiniteDiff(benchmark::State& state, ExecMode mode) {
  const Batch b = make_batch(4, 9);
  const RegionGuidanceParams rg;
  Vector x(static_cast<std::size_t>(state.range(0)));
  Rng rng(4);
  for (double& v : x) v = rng.normal();
  // each evaluation runs one encode so the per-coordinate work is realistic
  const numerics::ScalarFunction f = [&](std::span<const double> v) {
    double s = 0.0;
    for (double y : v) s += y * y;
    return s + encode(b.patches[0], b.scores[0], b.params, rg).z[0];
  };
  for (auto _ : state) benchmark::DoNotOptimize(finite_diff_grad(f, x, 1e-5, mode));
  state.SetItemsProcessed(state.iterations() * state.range(0));
}

BENCHMARK_CAPTURE(BM_EncodeBatch, serial, ExecMode::Serial)->Args({64, 1})->Args({64, 65})->Args({256, 17});
BENCHMARK_CAPTURE(BM_EncodeBatch, parallel, ExecMode::Parallel)->Args({64, 1})->Args({64, 65})->Args({256, 17});
BENCHMARK_CAPTURE(BM_BackwardBatch, serial, ExecMode::Serial)->Args({64, 1})->Args({64, 65})->Args({256, 17});
BENCHMARK_CAPTURE(BM_BackwardBatch, parallel, ExecMode::Parallel)->Args({64, 1})->Args({64, 65})->Args({256, 17});
BENCHMARK_CAPTURE(BM_FiniteDiff, serial, ExecMode::Serial)->Arg(256);
BENCHMARK_CAPTURE(BM_FiniteDiff, parallel, ExecMode::Parallel)->Arg(256);

}  // namespace
}  // namespace protoncd

BENCHMARK_MAIN();

#include <benchmark/benchmark.h>

#include <vector>

#include "hfan/kernels.hpp"
#include "hfan/rng.hpp"
#include "hfan/trainer.hpp"

using namespace hfan;

namespace {

std::vector<float> filled(std::size_t n, std::uint64_t seed) {
  Rng rng(seed);
  std::vector<float> v(n);
  for (float& x : v) x = static_cast<float>(rng.uniform(-1, 1));
  return v;
}

// Sizes follow the model at batch 8, 64x64: a stage-1 conv and a decoder-sized gemm.
template <bool Parallel>
void BM_gemm(benchmark::State& state) {
  const std::size_t m = state.range(0), k = state.range(1), n = state.range(2);
  const auto a = filled(m * k, 1), b = filled(k * n, 2);
  std::vector<float> c(m * n);
  for (auto _ : state) {
    if constexpr (Parallel)
      kernels::parallel::gemm(a.data(), b.data(), c.data(), m, k, n, false);
    else
      kernels::reference::gemm(a.data(), b.data(), c.data(), m, k, n, false);
    benchmark::DoNotOptimize(c.data());
  }
  state.SetItemsProcessed(state.iterations() * std::int64_t(m * k * n));
}

template <bool Parallel>
void BM_conv1x1(benchmark::State& state) {
  const std::size_t batch = 8, cin = state.range(0), cout = state.range(1), pixels = state.range(2);
  const auto x = filled(batch * cin * pixels, 3), w = filled(cout * cin, 4), bias = filled(cout, 5);
  std::vector<float> y(batch * cout * pixels);
  for (auto _ : state) {
    if constexpr (Parallel)
      kernels::parallel::conv1x1(x.data(), w.data(), bias.data(), y.data(), batch, cin, cout, pixels);
    else
      kernels::reference::conv1x1(x.data(), w.data(), bias.data(), y.data(), batch, cin, cout, pixels);
    benchmark::DoNotOptimize(y.data());
  }
  state.SetItemsProcessed(state.iterations() * std::int64_t(batch * cin * cout * pixels));
}

template <bool Parallel>
void BM_transpose(benchmark::State& state) {
  const std::size_t rows = state.range(0), cols = state.range(1);
  const auto src = filled(rows * cols, 6);
  std::vector<float> dst(rows * cols);
  for (auto _ : state) {
    if constexpr (Parallel)
      kernels::parallel::transpose(src.data(), dst.data(), rows, cols);
    else
      kernels::reference::transpose(src.data(), dst.data(), rows, cols);
    benchmark::DoNotOptimize(dst.data());
  }
}

template <bool Parallel>
void BM_channel_stats(benchmark::State& state) {
  const std::size_t batch = 8, channels = state.range(0), pixels = state.range(1);
  const auto x = filled(batch * channels * pixels, 7);
  std::vector<float> mean(channels), var(channels);
  for (auto _ : state) {
    if constexpr (Parallel)
      kernels::parallel::channel_stats(x.data(), mean.data(), var.data(), batch, channels, pixels);
    else
      kernels::reference::channel_stats(x.data(), mean.data(), var.data(), batch, channels, pixels);
    benchmark::DoNotOptimize(var.data());
  }
}

void BM_train_step(benchmark::State& state) {
  std::vector<Sequence> data;
  for (std::uint64_t i = 0; i < 2; ++i) data.push_back({"s", synth::generate(synth::random_scene(i, 64, 64, 4), i)});
  TrainConfig cfg;
  const Batch batch = draw_batch(data, cfg, 0);
  SegNet<float> model(ModelConfig{});
  AdamW<float> opt(model.state().params);
  for (auto _ : state) benchmark::DoNotOptimize(train_step(model, opt, batch, 1e-4));
}

}  // namespace

BENCHMARK(BM_gemm<false>)->Args({256, 64, 256})->Args({1024, 16, 64});
BENCHMARK(BM_gemm<true>)->Args({256, 64, 256})->Args({1024, 16, 64});
BENCHMARK(BM_conv1x1<false>)->Args({8, 16, 256})->Args({64, 64, 16})->Args({120, 64, 256});
BENCHMARK(BM_conv1x1<true>)->Args({8, 16, 256})->Args({64, 64, 16})->Args({120, 64, 256});
BENCHMARK(BM_transpose<false>)->Args({256, 1024});
BENCHMARK(BM_transpose<true>)->Args({256, 1024});
BENCHMARK(BM_channel_stats<false>)->Args({16, 256})->Args({64, 256});
BENCHMARK(BM_channel_stats<true>)->Args({16, 256})->Args({64, 256});
BENCHMARK(BM_train_step)->Unit(benchmark::kMillisecond);

BENCHMARK_MAIN();

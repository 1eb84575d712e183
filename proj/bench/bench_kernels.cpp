// Reference (serial loops) vs parallel (im2col + BLAS, OpenMP) kernels.

#include <benchmark/benchmark.h>

#include <random>
#include <vector>

#include "engraf/kernels.hpp"

using namespace engraf::kernels;

namespace {

std::vector<float> random_vec(std::size_t n, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<float> d(0.0f, 1.0f);
  std::vector<float> v(n);
  for (auto& x : v) x = d(rng);
  return v;
}

// Args: batch, channels, spatial side. 3x3 stride-1 same-padding conv.
ConvGeometry conv_geometry(const benchmark::State& s) {
  const auto n = static_cast<std::size_t>(s.range(0)), c = static_cast<std::size_t>(s.range(1)),
             hw = static_cast<std::size_t>(s.range(2));
  return ConvGeometry{n, c, hw, hw, c, 3, 1, 1};
}

double conv_flops(const ConvGeometry& g) {
  return 2.0 * static_cast<double>(g.output_size()) * static_cast<double>(g.in_channels * g.kernel * g.kernel);
}

template <bool Parallel>
void BM_ConvForward(benchmark::State& state) {
  const auto g = conv_geometry(state);
  const auto x = random_vec(g.input_size(), 1), w = random_vec(g.weight_size(), 2);
  std::vector<float> y(g.output_size());
  for (auto _ : state) {
    if constexpr (Parallel) {
      parallel::conv2d_forward(g, x.data(), w.data(), y.data());
    } else {
      reference::conv2d_forward(g, x.data(), w.data(), y.data());
    }
    benchmark::DoNotOptimize(y.data());
  }
  state.counters["FLOP/s"] = benchmark::Counter(conv_flops(g), benchmark::Counter::kIsIterationInvariantRate);
}

template <bool Parallel>
void BM_ConvBackward(benchmark::State& state) {
  const auto g = conv_geometry(state);
  const auto x = random_vec(g.input_size(), 1), w = random_vec(g.weight_size(), 2), dy = random_vec(g.output_size(), 3);
  std::vector<float> dx(g.input_size()), dw(g.weight_size());
  for (auto _ : state) {
    if constexpr (Parallel) {
      parallel::conv2d_backward(g, x.data(), w.data(), dy.data(), dx.data(), dw.data());
    } else {
      reference::conv2d_backward(g, x.data(), w.data(), dy.data(), dx.data(), dw.data());
    }
    benchmark::DoNotOptimize(dx.data());
  }
  state.counters["FLOP/s"] = benchmark::Counter(2 * conv_flops(g), benchmark::Counter::kIsIterationInvariantRate);
}

template <bool Parallel>
void BM_BatchNorm(benchmark::State& state) {
  const ChannelGeometry g{static_cast<std::size_t>(state.range(0)), static_cast<std::size_t>(state.range(1)),
                          static_cast<std::size_t>(state.range(2) * state.range(2))};
  const auto x = random_vec(g.size(), 1), gamma = random_vec(g.channels, 2), beta = random_vec(g.channels, 3);
  std::vector<float> mean(g.channels), var(g.channels), inv(g.channels, 1.0f), y(g.size());
  for (auto _ : state) {
    if constexpr (Parallel) {
      parallel::channel_moments(g, x.data(), mean.data(), var.data());
      parallel::batchnorm_apply(g, x.data(), mean.data(), inv.data(), gamma.data(), beta.data(), y.data());
    } else {
      reference::channel_moments(g, x.data(), mean.data(), var.data());
      reference::batchnorm_apply(g, x.data(), mean.data(), inv.data(), gamma.data(), beta.data(), y.data());
    }
    benchmark::DoNotOptimize(y.data());
  }
  state.SetBytesProcessed(static_cast<std::int64_t>(state.iterations() * g.size() * sizeof(float) * 3));
}

// ResNet-18 CIFAR stage shapes at batch 8.
void ConvShapes(benchmark::internal::Benchmark* b) {
  b->Args({8, 64, 32})->Args({8, 128, 16})->Args({8, 256, 8})->Args({8, 512, 4})->Unit(benchmark::kMillisecond);
}

}  // namespace

BENCHMARK(BM_ConvForward<false>)->Name("conv_forward/reference")->Apply(ConvShapes);
BENCHMARK(BM_ConvForward<true>)->Name("conv_forward/parallel")->Apply(ConvShapes);
BENCHMARK(BM_ConvBackward<false>)->Name("conv_backward/reference")->Apply(ConvShapes);
BENCHMARK(BM_ConvBackward<true>)->Name("conv_backward/parallel")->Apply(ConvShapes);
BENCHMARK(BM_BatchNorm<false>)->Name("batchnorm/reference")->Apply(ConvShapes);
BENCHMARK(BM_BatchNorm<true>)->Name("batchnorm/parallel")->Apply(ConvShapes);

BENCHMARK_MAIN();

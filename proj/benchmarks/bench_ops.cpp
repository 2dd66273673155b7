// SPDX-License-Identifier: Apache-2.0
#include <benchmark/benchmark.h>

#include <random>

#include "segdistill/ops.hpp"

using namespace segdistill;

namespace {

Tensor noise(Shape shape, unsigned seed) {
  std::mt19937 gen(seed);
  std::uniform_real_distribution<float> dist(-1.0f, 1.0f);
  Tensor t(std::move(shape));
  for (std::size_t i = 0; i < t.size(); ++i) t[i] = dist(gen);
  return t;
}

// Args: spatial extent, input channels, output channels.
void BM_Conv2dForward(benchmark::State& state) {
  const int hw = state.range(0), cin = state.range(1), cout = state.range(2);
  const Tensor x = noise({16, hw, hw, cin}, 1), k = noise({3, 3, cin, cout}, 2);
  for (auto _ : state) {
    Tape tape(false);
    benchmark::DoNotOptimize(conv2d(tape.constant(x), tape.constant(k), 1, Padding::kSame).value().data().data());
  }
  state.SetItemsProcessed(state.iterations() * 16);
}
BENCHMARK(BM_Conv2dForward)->Args({24, 16, 32})->Args({12, 32, 64})->Unit(benchmark::kMillisecond);

void BM_Conv2dBackward(benchmark::State& state) {
  const int hw = state.range(0), cin = state.range(1), cout = state.range(2);
  const Tensor x = noise({16, hw, hw, cin}, 1), k = noise({3, 3, cin, cout}, 2);
  for (auto _ : state) {
    Tape tape;
    const Var xv = tape.leaf(x), kv = tape.leaf(k);
    tape.backward(sum(conv2d(xv, kv, 1, Padding::kSame)));
    const Tensor g = tape.gradient(kv);
    benchmark::DoNotOptimize(g.data().data());
  }
}
BENCHMARK(BM_Conv2dBackward)->Args({24, 16, 32})->Args({12, 32, 64})->Unit(benchmark::kMillisecond);

void BM_Depthwise(benchmark::State& state) {
  const int hw = state.range(0), c = state.range(1);
  const Tensor x = noise({16, hw, hw, c}, 1), k = noise({3, 3, c}, 2);
  for (auto _ : state) {
    Tape tape;
    const Var xv = tape.leaf(x), kv = tape.leaf(k);
    tape.backward(sum(depthwise_conv2d(xv, kv, 1, Padding::kSame)));
    const Tensor g = tape.gradient(kv);
    benchmark::DoNotOptimize(g.data().data());
  }
}
BENCHMARK(BM_Depthwise)->Args({24, 96})->Args({12, 192})->Unit(benchmark::kMillisecond);

void BM_TransposeConv(benchmark::State& state) {
  const int hw = state.range(0), cin = state.range(1), cout = state.range(2);
  const Tensor x = noise({16, hw, hw, cin}, 1), k = noise({3, 3, cout, cin}, 2);
  for (auto _ : state) {
    Tape tape;
    const Var xv = tape.leaf(x), kv = tape.leaf(k);
    tape.backward(sum(transpose_conv2d(xv, kv, 2)));
    const Tensor g = tape.gradient(kv);
    benchmark::DoNotOptimize(g.data().data());
  }
}
BENCHMARK(BM_TransposeConv)->Args({6, 64, 32})->Args({12, 32, 16})->Unit(benchmark::kMillisecond);

}  // namespace

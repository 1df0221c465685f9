#include <benchmark/benchmark.h>

#include "basup/classifier.hpp"
#include "basup/nn/layers.hpp"
#include "basup/rng.hpp"

using namespace basup;

namespace {

nn::Tensor<float> random_input(int n, int c, int h, int w, Rng& rng) {
  nn::Tensor<float> t(n, c, h, w);
  for (auto& v : t.storage()) v = static_cast<float>(rng.uniform(-1.0, 1.0));
  return t;
}

// Args: channels, spatial side.
void BM_ConvForward(benchmark::State& state) {
  const int c = static_cast<int>(state.range(0)), side = static_cast<int>(state.range(1));
  Rng rng(1);
  nn::Conv2d<float> conv("conv", c, c, 3, 1, 1, rng);
  const auto x = random_input(8, c, side, side, rng);
  for (auto _ : state) benchmark::DoNotOptimize(conv.forward(x, nullptr));
  state.SetItemsProcessed(state.iterations() * 8);
}
BENCHMARK(BM_ConvForward)->Args({8, 64})->Args({16, 32})->Args({32, 16})->Unit(benchmark::kMillisecond);

void BM_ConvBackward(benchmark::State& state) {
  const int c = static_cast<int>(state.range(0)), side = static_cast<int>(state.range(1));
  Rng rng(2);
  nn::Conv2d<float> conv("conv", c, c, 3, 1, 1, rng);
  const auto x = random_input(8, c, side, side, rng);
  nn::Cache<float> cache;
  const auto y = conv.forward(x, &cache);
  const auto dy = random_input(y.n(), y.c(), y.h(), y.w(), rng);
  for (auto _ : state) benchmark::DoNotOptimize(conv.backward(dy, cache));
  state.SetItemsProcessed(state.iterations() * 8);
}
BENCHMARK(BM_ConvBackward)->Args({8, 64})->Args({16, 32})->Args({32, 16})->Unit(benchmark::kMillisecond);

// One optimizer-free training step of the desk classifier: forward and backward.
void BM_ClassifierStep(benchmark::State& state) {
  cls::ClassifierConfig config;
  config.num_classes = 3;
  config.input_size = static_cast<int>(state.range(0));
  auto net = cls::make_network(config);
  Rng rng(3);
  const auto x = random_input(8, 3, config.input_size, config.input_size, rng);
  for (auto _ : state) {
    nn::Cache<float> cache;
    const auto logits = net->forward(x, &cache);
    nn::Tensor<float> dl(logits.n(), logits.c(), logits.h(), logits.w());
    dl.storage().assign(dl.size(), 1.0f / static_cast<float>(dl.size()));
    net->backward(dl, cache);
  }
  state.SetItemsProcessed(state.iterations() * 8);
}
BENCHMARK(BM_ClassifierStep)->Arg(64)->Arg(128)->Unit(benchmark::kMillisecond);

}  // namespace

BENCHMARK_MAIN();

#include <benchmark/benchmark.h>

#include "scopeformer/ops.hpp"
#include "scopeformer/rng.hpp"
#include "scopeformer/vit.hpp"

namespace scopeformer {
namespace {

Tensor random_tensor(Shape shape, std::uint64_t seed) {
  std::size_t n = 1;
  for (auto d : shape) n *= d;
  Rng rng(seed);
  return Tensor::from(std::move(shape), rng.uniform_vector(n, -1.0, 1.0));
}

void BM_Matmul(benchmark::State& state) {
  const auto n = static_cast<std::size_t>(state.range(0));
  const Tensor a = random_tensor({n, n}, 1);
  const Tensor b = random_tensor({n, n}, 2);
  NoGradGuard guard;
  for (auto _ : state) benchmark::DoNotOptimize(matmul(a, b));
  state.SetItemsProcessed(state.iterations() * static_cast<std::int64_t>(2 * n * n * n));
}
BENCHMARK(BM_Matmul)->RangeMultiplier(2)->Range(32, 256);

void BM_Conv2dSame(benchmark::State& state) {
  const auto c = static_cast<std::size_t>(state.range(0));
  const Tensor x = random_tensor({8, 32, 32, c}, 3);
  const Tensor w = random_tensor({3, 3, c, c}, 4);
  NoGradGuard guard;
  for (auto _ : state) benchmark::DoNotOptimize(conv2d(x, w, 1, Padding::Same));
}
BENCHMARK(BM_Conv2dSame)->Arg(8)->Arg(32);

void BM_DepthwiseConv2d(benchmark::State& state) {
  const Tensor x = random_tensor({8, 32, 32, 32}, 5);
  const Tensor w = random_tensor({3, 3, 32}, 6);
  NoGradGuard guard;
  for (auto _ : state) benchmark::DoNotOptimize(depthwise_conv2d(x, w, 1, Padding::Same));
}
BENCHMARK(BM_DepthwiseConv2d);

void BM_MhsaForwardBackward(benchmark::State& state) {
  const auto tokens = static_cast<std::size_t>(state.range(0));
  Rng rng(7);
  const MultiHeadAttention attn(64, 4, rng);
  const Tensor x = random_tensor({4, tokens, 64}, 8);
  for (auto _ : state) {
    ParameterList params;
    attn.collect("a", params);
    for (auto& p : params) p.value.zero_grad();
    backward(sum_all(attn.forward(x)));
  }
}
BENCHMARK(BM_MhsaForwardBackward)->Arg(17)->Arg(50);

}  // namespace
}  // namespace scopeformer

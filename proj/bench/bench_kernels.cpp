// Parallel kernels against their serial references, and the linear-time
// distance transform against brute force.
#include <random>
#include <vector>

#include <benchmark/benchmark.h>

#include "focalseg/distance_maps.hpp"
#include "focalseg/kernels.hpp"
#include "oracles.hpp"

using namespace focalseg;
namespace k = focalseg::kernels;

namespace {

std::vector<float> random_values(std::size_t n, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<float> u(-1.0f, 1.0f);
  std::vector<float> v(n);
  for (auto& x : v) x = u(rng);
  return v;
}

Tensor<float> random_tensor(std::size_t c, std::size_t h, std::size_t w, std::uint64_t seed) {
  Tensor<float> t(c, h, w);
  const auto v = random_values(t.size(), seed);
  std::copy(v.begin(), v.end(), t.values().begin());
  return t;
}

// args: channels, side
template <bool Parallel>
void BM_conv3x3_forward(benchmark::State& state) {
  const auto c = static_cast<std::size_t>(state.range(0)), s = static_cast<std::size_t>(state.range(1));
  const auto in = random_tensor(c, s, s, 1);
  const auto w = random_values(c * c * 9, 2);
  const auto b = random_values(c, 3);
  Tensor<float> out;
  for (auto _ : state) {
    if constexpr (Parallel)
      k::conv2d_forward<float>(in, w, b, c, {}, out);
    else
      k::reference::conv2d_forward<float>(in, w, b, c, {}, out);
    benchmark::DoNotOptimize(out.data());
  }
  state.SetItemsProcessed(state.iterations() * static_cast<long>(c * c * 9 * s * s));
}

template <bool Parallel>
void BM_conv3x3_backward(benchmark::State& state) {
  const auto c = static_cast<std::size_t>(state.range(0)), s = static_cast<std::size_t>(state.range(1));
  const auto in = random_tensor(c, s, s, 1);
  const auto w = random_values(c * c * 9, 2);
  const auto d_out = random_tensor(c, s, s, 4);
  Tensor<float> d_in;
  std::vector<float> dw(w.size()), db(c);
  for (auto _ : state) {
    if constexpr (Parallel)
      k::conv2d_backward<float>(in, w, c, {}, d_out, &d_in, dw, db);
    else
      k::reference::conv2d_backward<float>(in, w, c, {}, d_out, &d_in, dw, db);
    benchmark::DoNotOptimize(dw.data());
  }
}

template <bool Parallel>
void BM_conv_transpose(benchmark::State& state) {
  const auto c = static_cast<std::size_t>(state.range(0)), s = static_cast<std::size_t>(state.range(1));
  const auto in = random_tensor(c, s, s, 1);
  const auto w = random_values(c * (c / 2) * 4, 2);
  const auto b = random_values(c / 2, 3);
  Tensor<float> out;
  for (auto _ : state) {
    if constexpr (Parallel)
      k::conv_transpose2x2_forward<float>(in, w, b, c / 2, out);
    else
      k::reference::conv_transpose2x2_forward<float>(in, w, b, c / 2, out);
    benchmark::DoNotOptimize(out.data());
  }
}

BinaryMask blob_mask(std::size_t side) {
  std::mt19937_64 rng(7);
  return oracle::random_mask(rng, side, side, 0.4);
}

void BM_edt_linear(benchmark::State& state) {
  const auto mask = blob_mask(static_cast<std::size_t>(state.range(0)));
  for (auto _ : state) benchmark::DoNotOptimize(squared_distance_transform(mask));
}

void BM_edt_brute_force(benchmark::State& state) {
  const auto mask = blob_mask(static_cast<std::size_t>(state.range(0)));
  for (auto _ : state) benchmark::DoNotOptimize(oracle::brute_force_sq_distance(mask));
}

}  // namespace

BENCHMARK(BM_conv3x3_forward<true>)->Args({16, 64})->Args({64, 32})->Unit(benchmark::kMicrosecond);
BENCHMARK(BM_conv3x3_forward<false>)->Args({16, 64})->Args({64, 32})->Unit(benchmark::kMicrosecond);
BENCHMARK(BM_conv3x3_backward<true>)->Args({16, 64})->Args({64, 32})->Unit(benchmark::kMicrosecond);
BENCHMARK(BM_conv3x3_backward<false>)->Args({16, 64})->Args({64, 32})->Unit(benchmark::kMicrosecond);
BENCHMARK(BM_conv_transpose<true>)->Args({32, 32})->Unit(benchmark::kMicrosecond);
BENCHMARK(BM_conv_transpose<false>)->Args({32, 32})->Unit(benchmark::kMicrosecond);
BENCHMARK(BM_edt_linear)->Arg(32)->Arg(64)->Unit(benchmark::kMicrosecond);
BENCHMARK(BM_edt_brute_force)->Arg(32)->Arg(64)->Unit(benchmark::kMicrosecond);

BENCHMARK_MAIN();

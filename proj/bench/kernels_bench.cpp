// Serial reference kernels against their OpenMP counterparts.
// Run with OMP_NUM_THREADS set to compare thread counts.

#include <benchmark/benchmark.h>

#include <vector>

#include "dualpf/kernels.hpp"
#include "dualpf/rng.hpp"

namespace ks = dualpf::kernels::serial;
namespace kp = dualpf::kernels::parallel;

namespace {

std::vector<double> random(std::size_t n, std::uint64_t seed) {
  dualpf::CounterRng rng(seed);
  std::vector<double> v(n);
  for (auto& x : v) x = rng.uniform(-1.0, 1.0);
  return v;
}

template <auto Kernel>
void gemm(benchmark::State& state) {
  const auto n = static_cast<std::size_t>(state.range(0));
  const auto a = random(n * n, 1), b = random(n * n, 2);
  std::vector<double> c(n * n);
  for (auto _ : state) {
    std::fill(c.begin(), c.end(), 0.0);
    Kernel(n, n, n, a.data(), b.data(), c.data());
    benchmark::DoNotOptimize(c.data());
  }
  state.SetItemsProcessed(static_cast<int64_t>(state.iterations() * n * n * n));
}

template <auto Kernel>
void softmax(benchmark::State& state) {
  const auto rows = static_cast<std::size_t>(state.range(0)), cols = std::size_t{64};
  const auto x = random(rows * cols, 3);
  std::vector<double> y(rows * cols);
  for (auto _ : state) {
    Kernel(rows, cols, x.data(), y.data());
    benchmark::DoNotOptimize(y.data());
  }
}

template <auto Kernel>
void guided(benchmark::State& state) {
  // One dual-step sentence: T decoding steps over I source rows, 5 capsules.
  const auto steps = static_cast<std::size_t>(state.range(0));
  const std::size_t lows = steps, highs = 5, hidden = 16;
  const auto zp = random(steps * hidden, 4), up = random(lows * highs * hidden, 5);
  const auto op = random(steps * highs * hidden, 6), w = random(hidden, 7);
  std::vector<double> a(steps * lows * highs), act(steps * lows * highs * hidden);
  for (auto _ : state) {
    Kernel(steps, lows, highs, hidden, zp.data(), up.data(), op.data(), w.data(), a.data(), act.data());
    benchmark::DoNotOptimize(a.data());
  }
}

template <auto Kernel>
void pool(benchmark::State& state) {
  const auto steps = static_cast<std::size_t>(state.range(0));
  const std::size_t lows = steps, highs = 5, dim = 16;
  const auto c = random(steps * lows * highs, 8), u = random(lows * highs * dim, 9);
  std::vector<double> s(steps * highs * dim);
  for (auto _ : state) {
    Kernel(steps, lows, highs, dim, c.data(), u.data(), s.data());
    benchmark::DoNotOptimize(s.data());
  }
}

}  // namespace

BENCHMARK(gemm<ks::gemm_nn>)->Name("gemm_nn/serial")->Arg(64)->Arg(128)->Arg(256);
BENCHMARK(gemm<kp::gemm_nn>)->Name("gemm_nn/parallel")->Arg(64)->Arg(128)->Arg(256);
BENCHMARK(gemm<ks::gemm_nt>)->Name("gemm_nt/serial")->Arg(128)->Arg(256);
BENCHMARK(gemm<kp::gemm_nt>)->Name("gemm_nt/parallel")->Arg(128)->Arg(256);
BENCHMARK(gemm<ks::gemm_tn>)->Name("gemm_tn/serial")->Arg(128)->Arg(256);
BENCHMARK(gemm<kp::gemm_tn>)->Name("gemm_tn/parallel")->Arg(128)->Arg(256);
BENCHMARK(softmax<ks::softmax_rows>)->Name("softmax_rows/serial")->Arg(512)->Arg(4096);
BENCHMARK(softmax<kp::softmax_rows>)->Name("softmax_rows/parallel")->Arg(512)->Arg(4096);
BENCHMARK(guided<ks::guided_agreement>)->Name("guided_agreement/serial")->Arg(16)->Arg(32);
BENCHMARK(guided<kp::guided_agreement>)->Name("guided_agreement/parallel")->Arg(16)->Arg(32);
BENCHMARK(pool<ks::routing_pool>)->Name("routing_pool/serial")->Arg(16)->Arg(32);
BENCHMARK(pool<kp::routing_pool>)->Name("routing_pool/parallel")->Arg(16)->Arg(32);

BENCHMARK_MAIN();

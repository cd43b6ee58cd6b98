// Serial reference vs OpenMP kernels. The second benchmark argument selects
// the path: 0 serial, 1 parallel.

#include <benchmark/benchmark.h>

#include <vector>

#include "jembed/kernels.hpp"
#include "jembed/rng.hpp"

using namespace mg;
using kernels::Exec;

namespace {

std::vector<double> random_vec(std::size_t n, std::uint64_t seed, double lo = -1.0, double hi = 1.0) {
  Rng rng(seed);
  std::vector<double> v(n);
  for (double& x : v) x = rng.uniform(lo, hi);
  return v;
}

Exec exec_of(const benchmark::State& s) { return s.range(1) ? Exec::parallel : Exec::serial; }

void BM_Gemm(benchmark::State& state) {
  const auto n = static_cast<std::size_t>(state.range(0));
  const auto a = random_vec(n * n, 1), b = random_vec(n * n, 2);
  std::vector<double> c(n * n);
  for (auto _ : state) {
    kernels::gemm_nn(a, b, c, n, n, n, false, exec_of(state));
    benchmark::DoNotOptimize(c.data());
  }
  state.counters["GFLOP/s"] =
      benchmark::Counter(2.0 * static_cast<double>(n * n * n), benchmark::Counter::kIsIterationInvariantRate,
                         benchmark::Counter::kIs1000);
}

/// Trunk-shaped convolution: batch 32, 3x3, stride 1.
void BM_Conv2d(benchmark::State& state) {
  const auto c = static_cast<std::size_t>(state.range(0));
  const kernels::ConvGeometry g{32, c, 16, 16, 2 * c, 3, 1, 1};
  const auto x = random_vec(g.batch * c * 16 * 16, 3);
  const auto w = random_vec(g.out_channels * g.patch(), 4);
  const auto bias = random_vec(g.out_channels, 5);
  std::vector<double> out(g.batch * g.out_channels * g.positions());
  std::vector<double> cols(g.batch * g.patch() * g.positions());
  for (auto _ : state) {
    kernels::conv2d_forward(x, w, bias, g, out, cols, exec_of(state));
    benchmark::DoNotOptimize(out.data());
  }
}

void BM_GemForward(benchmark::State& state) {
  const auto rows = static_cast<std::size_t>(state.range(0));
  const std::size_t len = 64;
  const auto x = random_vec(rows * len, 6, 0.0, 2.0);
  std::vector<double> out(rows);
  for (auto _ : state) {
    kernels::gem_forward(x, rows, len, 3.0, 1e-6, out, exec_of(state));
    benchmark::DoNotOptimize(out.data());
  }
}

}  // namespace

BENCHMARK(BM_Gemm)->ArgsProduct({{64, 256}, {0, 1}})->ArgNames({"n", "parallel"});
BENCHMARK(BM_Conv2d)->ArgsProduct({{16, 32}, {0, 1}})->ArgNames({"c", "parallel"});
BENCHMARK(BM_GemForward)->ArgsProduct({{2048}, {0, 1}})->ArgNames({"rows", "parallel"});

BENCHMARK_MAIN();

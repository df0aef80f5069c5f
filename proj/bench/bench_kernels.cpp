// Serial reference vs OpenMP kernels at model-sized shapes.
//   ./bench_kernels --benchmark_filter=Gemm
#include <benchmark/benchmark.h>

#include <random>
#include <vector>

#include "cafe/kernels.hpp"

namespace k = cafe::kernels;

namespace {

std::vector<double> random_values(std::size_t n, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  std::vector<double> v(n);
  for (auto& x : v) x = u(rng);
  return v;
}

template <void (*Gemm)(const k::GemmArgs&)>
void BM_Gemm(benchmark::State& state) {
  const auto n = static_cast<std::size_t>(state.range(0));
  const auto a = random_values(n * n, 1), b = random_values(n * n, 2);
  std::vector<double> c(n * n);
  for (auto _ : state) {
    Gemm({n, n, n, a.data(), k::Trans::No, b.data(), k::Trans::No, c.data(), false});
    benchmark::DoNotOptimize(c.data());
  }
  state.SetItemsProcessed(static_cast<std::int64_t>(state.iterations() * 2 * n * n * n));
}

template <void (*Forward)(const k::FmForwardArgs&)>
void BM_FmForward(benchmark::State& state) {
  const auto rows = static_cast<std::size_t>(state.range(0));
  const std::size_t n = 600, f = 10;
  const auto x = random_values(rows * n, 1), w = random_values(n, 2), v = random_values(n * f, 3);
  std::vector<double> out(rows), sums(rows * f);
  for (auto _ : state) {
    Forward({rows, n, f, x.data(), 0.1, w.data(), v.data(), out.data(), sums.data()});
    benchmark::DoNotOptimize(out.data());
  }
  state.SetItemsProcessed(static_cast<std::int64_t>(state.iterations() * rows));
}

template <void (*Backward)(const k::FmBackwardArgs&)>
void BM_FmBackward(benchmark::State& state) {
  const auto rows = static_cast<std::size_t>(state.range(0));
  const std::size_t n = 600, f = 10;
  const auto x = random_values(rows * n, 1), w = random_values(n, 2), v = random_values(n * f, 3);
  const auto g = random_values(rows, 4);
  std::vector<double> out(rows), sums(rows * f), dx(rows * n), dw(n), dv(n * f);
  double dw0 = 0.0;
  k::serial::fm_forward({rows, n, f, x.data(), 0.1, w.data(), v.data(), out.data(), sums.data()});
  for (auto _ : state) {
    Backward({rows, n, f, x.data(), w.data(), v.data(), sums.data(), g.data(), dx.data(), &dw0, dw.data(),
              dv.data()});
    benchmark::DoNotOptimize(dv.data());
  }
  state.SetItemsProcessed(static_cast<std::int64_t>(state.iterations() * rows));
}

template <void (*Softmax)(const k::MaskedSoftmaxArgs&)>
void BM_MaskedSoftmax(benchmark::State& state) {
  const auto n = static_cast<std::size_t>(state.range(0));
  const auto x = random_values(n * n, 1);
  std::vector<double> mask(n, 1.0), out(n * n);
  for (std::size_t j = n - n / 4; j < n; ++j) mask[j] = 0.0;
  for (auto _ : state) {
    Softmax({n, n, x.data(), mask.data(), out.data()});
    benchmark::DoNotOptimize(out.data());
  }
  state.SetItemsProcessed(static_cast<std::int64_t>(state.iterations() * n * n));
}

}  // namespace

BENCHMARK(BM_Gemm<k::serial::gemm>)->Name("Gemm/serial")->RangeMultiplier(2)->Range(32, 256);
BENCHMARK(BM_Gemm<k::parallel::gemm>)->Name("Gemm/parallel")->RangeMultiplier(2)->Range(32, 256)->UseRealTime();
BENCHMARK(BM_FmForward<k::serial::fm_forward>)->Name("FmForward/serial")->Arg(64)->Arg(512);
BENCHMARK(BM_FmForward<k::parallel::fm_forward>)->Name("FmForward/parallel")->Arg(64)->Arg(512)->UseRealTime();
BENCHMARK(BM_FmBackward<k::serial::fm_backward>)->Name("FmBackward/serial")->Arg(64)->Arg(512);
BENCHMARK(BM_FmBackward<k::parallel::fm_backward>)->Name("FmBackward/parallel")->Arg(64)->Arg(512)->UseRealTime();
BENCHMARK(BM_MaskedSoftmax<k::serial::masked_softmax>)->Name("MaskedSoftmax/serial")->Arg(64)->Arg(512);
BENCHMARK(BM_MaskedSoftmax<k::parallel::masked_softmax>)
    ->Name("MaskedSoftmax/parallel")
    ->Arg(64)
    ->Arg(512)
    ->UseRealTime();

BENCHMARK_MAIN();

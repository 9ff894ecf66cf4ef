// Serial reference kernels against their OpenMP counterparts. Thread count
// follows SSLALM_THREADS (default: all cores).

#include <random>
#include <vector>

#include <benchmark/benchmark.h>

#include "sslalm/kernels.hpp"

namespace k = sslalm::kernels;

namespace {

std::vector<double> random(std::size_t n, double lo, double hi, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(lo, hi);
  std::vector<double> v(n);
  for (double& x : v) x = u(rng);
  return v;
}

template <auto Gemm>
void BM_gemm(benchmark::State& state) {
  const auto n = static_cast<std::size_t>(state.range(0));
  const auto a = random(n * n, -1, 1, 1), b = random(n * n, -1, 1, 2);
  std::vector<double> c(n * n);
  for (auto _ : state) {
    Gemm(a, b, c, {n, n, n}, false);
    benchmark::DoNotOptimize(c.data());
  }
  state.SetItemsProcessed(static_cast<std::int64_t>(state.iterations() * 2 * n * n * n));
}

struct ScanInputs {
  std::size_t L, D, N;
  std::vector<double> u, delta, A, B, C, skip, y, h_last;

  ScanInputs(std::size_t L_, std::size_t D_, std::size_t N_)
      : L(L_), D(D_), N(N_),
        u(random(L * D, -1, 1, 3)),
        delta(random(L * D, 0.01, 0.5, 4)),
        A(random(D * N, -2, -0.1, 5)),
        B(random(L * N, -1, 1, 6)),
        C(random(L * N, -1, 1, 7)),
        skip(random(D, -1, 1, 8)),
        y(L * D),
        h_last(D * N) {}

  k::ScanArgs args() const { return {u, delta, A, B, C, skip, {}, L, D, N}; }
  k::ScanOut out() { return {y, h_last, {}}; }
};

void BM_scan_serial(benchmark::State& state) {
  ScanInputs in(static_cast<std::size_t>(state.range(0)), static_cast<std::size_t>(state.range(1)), 16);
  for (auto _ : state) {
    k::serial::selective_scan(in.args(), in.out());
    benchmark::DoNotOptimize(in.y.data());
  }
}

void BM_scan_parallel(benchmark::State& state) {
  ScanInputs in(static_cast<std::size_t>(state.range(0)), static_cast<std::size_t>(state.range(1)), 16);
  for (auto _ : state) {
    k::parallel::selective_scan(in.args(), in.out());
    benchmark::DoNotOptimize(in.y.data());
  }
}

void BM_scan_chunked(benchmark::State& state) {
  ScanInputs in(static_cast<std::size_t>(state.range(0)), static_cast<std::size_t>(state.range(1)), 16);
  const auto chunk = static_cast<std::size_t>(state.range(2));
  for (auto _ : state) {
    k::parallel::selective_scan_chunked(in.args(), in.out(), chunk);
    benchmark::DoNotOptimize(in.y.data());
  }
}

}  // namespace

BENCHMARK(BM_gemm<k::serial::gemm_nn>)->Name("gemm_nn/serial")->Arg(64)->Arg(256);
BENCHMARK(BM_gemm<k::parallel::gemm_nn>)->Name("gemm_nn/parallel")->Arg(64)->Arg(256);
BENCHMARK(BM_gemm<k::serial::gemm_nt>)->Name("gemm_nt/serial")->Arg(256);
BENCHMARK(BM_gemm<k::parallel::gemm_nt>)->Name("gemm_nt/parallel")->Arg(256);

// Wide (many channels) and long (few channels) scans.
BENCHMARK(BM_scan_serial)->Args({256, 512})->Args({4096, 8});
BENCHMARK(BM_scan_parallel)->Args({256, 512})->Args({4096, 8});
BENCHMARK(BM_scan_chunked)->Args({256, 512, 64})->Args({4096, 8, 256});

int main(int argc, char** argv) {
  k::configure_threads();
  benchmark::Initialize(&argc, argv);
  if (benchmark::ReportUnrecognizedArguments(argc, argv)) return 1;
  benchmark::RunSpecifiedBenchmarks();
  benchmark::Shutdown();
  return 0;
}

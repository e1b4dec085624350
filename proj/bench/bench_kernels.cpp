// Serial reference kernels against their OpenMP counterparts. Set
// CLIPQ_THREADS (or OMP_NUM_THREADS) to vary the parallel width.

#include <random>
#include <vector>

#include <benchmark/benchmark.h>

#include "clipq/kernels.hpp"

using namespace clipq;

namespace {

std::vector<double> gaussian(std::size_t n, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> dist;
  std::vector<double> v(n);
  for (double& x : v) x = dist(rng);
  return v;
}

struct ScanInput {
  std::size_t M, K = 256;
  std::vector<float> lut;
  std::vector<std::uint8_t> codes;
  std::vector<float> scores;

  ScanInput(std::size_t n, std::size_t m) : M(m), scores(n) {
    std::mt19937_64 rng(1);
    std::normal_distribution<float> dist;
    lut.resize(M * K);
    for (auto& x : lut) x = dist(rng);
    codes.resize(n * M);
    for (auto& c : codes) c = static_cast<std::uint8_t>(rng() % K);
  }
};

template <bool Parallel>
void BM_AdcScan(benchmark::State& state) {
  ScanInput in(static_cast<std::size_t>(state.range(0)),
               static_cast<std::size_t>(state.range(1)));
  for (auto _ : state) {
    if constexpr (Parallel) {
      kernels::parallel::adc_scan<std::uint8_t>(in.lut, in.M, in.K, in.codes,
                                                in.scores);
    } else {
      kernels::serial::adc_scan<std::uint8_t>(in.lut, in.M, in.K, in.codes,
                                              in.scores);
    }
    benchmark::DoNotOptimize(in.scores.data());
  }
  state.SetItemsProcessed(state.iterations() * state.range(0));
}

template <bool Parallel>
void BM_Gram(benchmark::State& state) {
  const auto n = static_cast<std::size_t>(state.range(0));
  const std::size_t dim = 64;
  const auto rows = gaussian(n * dim, 2);
  std::vector<double> out(n * n);
  for (auto _ : state) {
    if constexpr (Parallel) {
      kernels::parallel::gram(rows, n, dim, out);
    } else {
      kernels::serial::gram(rows, n, dim, out);
    }
    benchmark::DoNotOptimize(out.data());
  }
}

template <bool Parallel>
void BM_HardEncode(benchmark::State& state) {
  const auto n = static_cast<std::size_t>(state.range(0));
  const std::size_t M = 4, K = 256, d = 16;
  const Codebooks C(M, K, d, gaussian(M * K * d, 3));
  const auto rows = gaussian(n * M * d, 4);
  std::vector<std::uint8_t> codes(n * M);
  for (auto _ : state) {
    if constexpr (Parallel) {
      kernels::parallel::hard_encode<std::uint8_t>(rows, n, C, codes);
    } else {
      kernels::serial::hard_encode<std::uint8_t>(rows, n, C, codes);
    }
    benchmark::DoNotOptimize(codes.data());
  }
  state.SetItemsProcessed(state.iterations() * state.range(0));
}

}  // namespace

BENCHMARK(BM_AdcScan<false>)->Args({100000, 4})->Args({100000, 8});
BENCHMARK(BM_AdcScan<true>)->Args({100000, 4})->Args({100000, 8});
BENCHMARK(BM_Gram<false>)->Arg(256)->Arg(1024);
BENCHMARK(BM_Gram<true>)->Arg(256)->Arg(1024);
BENCHMARK(BM_HardEncode<false>)->Arg(10000);
BENCHMARK(BM_HardEncode<true>)->Arg(10000);

int main(int argc, char** argv) {
  kernels::configure_threads_from_env();
  benchmark::Initialize(&argc, argv);
  if (benchmark::ReportUnrecognizedArguments(argc, argv)) return 1;
  benchmark::RunSpecifiedBenchmarks();
  benchmark::Shutdown();
  return 0;
}

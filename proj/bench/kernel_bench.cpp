// Serial reference kernels against their OpenMP counterparts.

#include <benchmark/benchmark.h>

#include <random>
#include <vector>

#include "encod/kernels.hpp"
#include "encod/randtests.hpp"

using namespace encod;

namespace {

struct Batch {
  std::vector<std::vector<std::uint8_t>> owned;
  std::vector<kernels::Fragment> views;
  Batch(std::size_t n, std::size_t size) {
    std::mt19937_64 rng(1);
    owned.resize(n, std::vector<std::uint8_t>(size));
    for (auto& f : owned)
      for (auto& b : f) b = static_cast<std::uint8_t>(rng());
    views.assign(owned.begin(), owned.end());
  }
};

const Batch& batch() {
  static const Batch b(4096, 2048);
  return b;
}

void BM_entropies_serial(benchmark::State& s) {
  for (auto _ : s) benchmark::DoNotOptimize(kernels::entropies_serial(batch().views));
  s.SetItemsProcessed(s.iterations() * static_cast<std::int64_t>(batch().views.size()));
}
void BM_entropies_parallel(benchmark::State& s) {
  for (auto _ : s) benchmark::DoNotOptimize(kernels::entropies(batch().views));
  s.SetItemsProcessed(s.iterations() * static_cast<std::int64_t>(batch().views.size()));
}

void BM_features_serial(benchmark::State& s) {
  for (auto _ : s) benchmark::DoNotOptimize(kernels::feature_matrix_serial(batch().views, nullptr));
  s.SetItemsProcessed(s.iterations() * static_cast<std::int64_t>(batch().views.size()));
}
void BM_features_parallel(benchmark::State& s) {
  for (auto _ : s) benchmark::DoNotOptimize(kernels::feature_matrix(batch().views, nullptr));
  s.SetItemsProcessed(s.iterations() * static_cast<std::int64_t>(batch().views.size()));
}

void BM_nist_serial(benchmark::State& s) {
  const std::span<const kernels::Fragment> v(batch().views.data(), 256);
  auto fn = [](kernels::Fragment f) { return nist_majority_vote(f).random; };
  for (auto _ : s) benchmark::DoNotOptimize(kernels::map_flags_serial(v, fn));
  s.SetItemsProcessed(s.iterations() * 256);
}
void BM_nist_parallel(benchmark::State& s) {
  const std::span<const kernels::Fragment> v(batch().views.data(), 256);
  auto fn = [](kernels::Fragment f) { return nist_majority_vote(f).random; };
  for (auto _ : s) benchmark::DoNotOptimize(kernels::map_flags(v, fn));
  s.SetItemsProcessed(s.iterations() * 256);
}

template <bool Parallel>
void BM_gemm(benchmark::State& s) {
  const std::size_t m = 256, k = static_cast<std::size_t>(s.range(0)), n = 128;
  std::vector<float> a(m * k, 0.5f), b(k * n, 0.25f), c(m * n);
  for (auto _ : s) {
    if constexpr (Parallel)
      kernels::gemm_nn(m, k, n, a.data(), b.data(), c.data(), false);
    else
      kernels::gemm_nn_serial(m, k, n, a.data(), b.data(), c.data(), false);
    benchmark::DoNotOptimize(c.data());
  }
  s.SetItemsProcessed(s.iterations() * static_cast<std::int64_t>(2 * m * k * n));
}

}  // namespace

BENCHMARK(BM_entropies_serial);
BENCHMARK(BM_entropies_parallel);
BENCHMARK(BM_features_serial);
BENCHMARK(BM_features_parallel);
BENCHMARK(BM_nist_serial);
BENCHMARK(BM_nist_parallel);
BENCHMARK(BM_gemm<false>)->Arg(256);
BENCHMARK(BM_gemm<true>)->Arg(256);

BENCHMARK_MAIN();

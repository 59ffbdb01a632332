// OpenMP kernels against their serial reference implementations.
#include <benchmark/benchmark.h>

#include "mimofb/channel_model.hpp"
#include "mimofb/codebook.hpp"
#include "mimofb/lloyd.hpp"

namespace {

using namespace mimofb;

struct Fixture {
  SystemConfig cfg;
  std::vector<CMatrix> channels;
  Codebook cb;

  Fixture() {
    const auto ds = generate_paired_dataset(cfg, 1024, 11);
    channels = ds.channels(Link::kDownlink);
    cb.rho = cfg.rho;
    cb.rank_cap = cfg.n_rx;
    cb.m_bits = 6;
    for (std::size_t k = 0; k < 64; ++k)
      cb.entries.push_back(waterfilling_cov(channels[k * 7], cfg.rho, cfg.sigma_n2));
  }
};

const Fixture& fixture() {
  static const Fixture f;
  return f;
}

void BM_SelectAllKernel(benchmark::State& state) {
  const auto& f = fixture();
  for (auto _ : state)
    benchmark::DoNotOptimize(kernels::select_all(f.channels, f.cb, f.cfg.sigma_n2));
}

void BM_SelectAllReference(benchmark::State& state) {
  const auto& f = fixture();
  for (auto _ : state)
    benchmark::DoNotOptimize(reference::select_all(f.channels, f.cb, f.cfg.sigma_n2));
}

void BM_AssignKernel(benchmark::State& state) {
  const auto& f = fixture();
  for (auto _ : state)
    benchmark::DoNotOptimize(assign_clusters(f.channels, f.cb, f.cfg.sigma_n2));
}

void BM_AssignReference(benchmark::State& state) {
  const auto& f = fixture();
  for (auto _ : state)
    benchmark::DoNotOptimize(reference::assign_clusters(f.channels, f.cb, f.cfg.sigma_n2));
}

void BM_GradientKernel(benchmark::State& state) {
  const auto& f = fixture();
  const CMatrix q = uniform_power_cov(f.cfg);
  for (auto _ : state) benchmark::DoNotOptimize(pgd_gradient(q, f.channels, f.cfg.sigma_n2));
}

void BM_GradientReference(benchmark::State& state) {
  const auto& f = fixture();
  const CMatrix q = uniform_power_cov(f.cfg);
  for (auto _ : state)
    benchmark::DoNotOptimize(reference::pgd_gradient(q, f.channels, f.cfg.sigma_n2));
}

}  // namespace

BENCHMARK(BM_SelectAllKernel)->Unit(benchmark::kMillisecond);
BENCHMARK(BM_SelectAllReference)->Unit(benchmark::kMillisecond);
BENCHMARK(BM_AssignKernel)->Unit(benchmark::kMillisecond);
BENCHMARK(BM_AssignReference)->Unit(benchmark::kMillisecond);
BENCHMARK(BM_GradientKernel)->Unit(benchmark::kMillisecond);
BENCHMARK(BM_GradientReference)->Unit(benchmark::kMillisecond);

BENCHMARK_MAIN();

#include <benchmark/benchmark.h>

#include <random>

#include "vlab/numkit.hpp"
#include "vlab/probes.hpp"

namespace {

vlab::Matrix random_matrix(std::size_t n, std::size_t d, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> g;
  vlab::Matrix m(n, d);
  for (double& x : m.data()) x = g(rng);
  return m;
}

void BM_Auc(benchmark::State& state) {
  const auto n = static_cast<std::size_t>(state.range(0));
  const vlab::Matrix s = random_matrix(n, 1, 3);
  std::vector<int> labels(n);
  for (std::size_t i = 0; i < n; ++i) labels[i] = static_cast<int>(i % 2);
  for (auto _ : state) benchmark::DoNotOptimize(vlab::auc(s.data(), labels));
}
BENCHMARK(BM_Auc)->Arg(36)->Arg(1000)->Arg(100000);

void BM_SignProbe(benchmark::State& state) {
  const vlab::Matrix x = random_matrix(72, 64, 4);
  vlab::Vector targets(72);
  std::vector<int> ids(72);
  for (std::size_t i = 0; i < 72; ++i) {
    targets[i] = x(i, 0) > 0 ? 1.0 : 0.0;
    ids[i] = static_cast<int>(i);
  }
  const auto data = vlab::ProbeDataset::make(vlab::HookSite{}, x, targets, ids);
  for (auto _ : state) benchmark::DoNotOptimize(vlab::fit_sign_probe(data));
}
BENCHMARK(BM_SignProbe)->Unit(benchmark::kMicrosecond);

void BM_Ridge(benchmark::State& state) {
  const vlab::Matrix x = random_matrix(72, 64, 5);
  vlab::Vector y(72);
  for (std::size_t i = 0; i < 72; ++i) y[i] = x(i, 1) - 0.5 * x(i, 2);
  for (auto _ : state) benchmark::DoNotOptimize(vlab::fit_ridge(x, y, 1.0));
}
BENCHMARK(BM_Ridge)->Unit(benchmark::kMicrosecond);

void BM_Spearman(benchmark::State& state) {
  const vlab::Matrix m = random_matrix(2, 1000, 6);
  for (auto _ : state) benchmark::DoNotOptimize(vlab::spearman(m.row(0), m.row(1)));
}
BENCHMARK(BM_Spearman)->Unit(benchmark::kMicrosecond);

}  // namespace

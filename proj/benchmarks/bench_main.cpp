// SPDX-License-Identifier: Apache-2.0
#include <benchmark/benchmark.h>

#include <cstdint>
#include <random>
#include <vector>

#include "madtp/dtp.hpp"
#include "madtp/numerics.hpp"
#include "madtp/synthetic.hpp"
#include "madtp/vlt.hpp"

namespace {

using namespace madtp;

Matrix random_stochastic(std::size_t rows, std::size_t cols, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u(0.01, 1.0);
  Matrix m(rows, cols);
  for (std::size_t i = 0; i < rows; ++i) {
    double s = 0.0;
    for (std::size_t j = 0; j < cols; ++j) s += (m(i, j) = u(rng));
    for (std::size_t j = 0; j < cols; ++j) m(i, j) /= s;
  }
  return m;
}

void BM_Sparsemax(benchmark::State& state) {
  std::mt19937_64 rng(7);
  std::normal_distribution<double> g;
  Vector v(static_cast<std::size_t>(state.range(0)));
  for (double& x : v) x = g(rng);
  for (auto _ : state) benchmark::DoNotOptimize(numerics::sparsemax(v));
  state.SetComplexityN(state.range(0));
}
BENCHMARK(BM_Sparsemax)->RangeMultiplier(4)->Range(16, 4096)->Complexity(benchmark::oNLogN);

// One layer of threshold pruning over a batch of 32 instances.
void BM_PruneLayer(benchmark::State& state) {
  const auto n = static_cast<std::size_t>(state.range(0));
  constexpr std::size_t kBatch = 32, kWidth = 64, kTokens = 4;
  std::mt19937_64 rng(11);
  std::normal_distribution<double> g;

  TokenBatch batch;
  std::vector<Matrix> a_self, a_token;
  for (std::size_t b = 0; b < kBatch; ++b) {
    TokenSequence s;
    s.tokens = Matrix(n, kWidth);
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < kWidth; ++j) s.tokens(i, j) = g(rng);
    for (std::size_t i = 0; i < n; ++i) s.origin.push_back(static_cast<int>(i));
    s.specials = {0};
    s.alive.assign(n, true);
    batch.instances.push_back(std::move(s));
    a_self.push_back(random_stochastic(n, n, rng));
    a_token.push_back(random_stochastic(kTokens, n, rng));
  }
  std::vector<dtp::InstanceMaps> maps;
  for (std::size_t b = 0; b < kBatch; ++b) maps.push_back({&a_self[b], &a_token[b]});

  dtp::PruneSettings settings;
  settings.temperature = 3.0;
  for (auto _ : state) benchmark::DoNotOptimize(dtp::prune(batch, maps, settings));
}
BENCHMARK(BM_PruneLayer)->Arg(17)->Arg(65)->Arg(197);

// Full forward of one batch from the default workload, pruned and unpruned.
void BM_ModelForward(benchmark::State& state) {
  const bool pruned = state.range(0) != 0;
  harness::RunConfig c = harness::default_config();
  c.model.pruning = pruned;
  c.data.size = 32;
  const vlt::Model model = vlt::build_model(c.model);
  const harness::Dataset d = harness::gen_synthetic(c, model, c.data.seed);
  std::vector<Matrix> images, texts;
  for (const harness::Sample& s : d.samples) {
    images.push_back(s.image);
    texts.push_back(s.text);
  }
  const vlt::DtpHandle dtp = vlt::make_dtp_handle(c.model);
  for (auto _ : state) benchmark::DoNotOptimize(vlt::model_forward(images, texts, model, dtp));
  state.SetItemsProcessed(state.iterations() * static_cast<std::int64_t>(images.size()));
}
BENCHMARK(BM_ModelForward)->ArgName("pruned")->Arg(0)->Arg(1)->Unit(benchmark::kMillisecond);

}  // namespace

BENCHMARK_MAIN();

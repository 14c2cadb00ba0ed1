#include <benchmark/benchmark.h>

#include <random>

#include "snatchml/analysis.hpp"
#include "snatchml/hijack.hpp"
#include "snatchml/training.hpp"

using namespace snatchml;

namespace {

std::vector<double> random_vector(std::mt19937_64& gen, std::size_t n) {
  std::normal_distribution<double> z(0.0, 1.0);
  std::vector<double> v(n);
  for (auto& x : v) x = z(gen);
  return v;
}

Network make_net(int width) {
  NetworkSpec spec;
  spec.layer_widths = {16, width, width, 8};
  spec.seed = 1;
  return build(spec);
}

}  // namespace

static void bm_classify(benchmark::State& state) {
  const int m = static_cast<int>(state.range(0));
  std::mt19937_64 gen(3);
  std::vector<std::pair<BekVector, int>> entries;
  for (int c = 0; c < m; ++c) {
    for (int k = 0; k < 4; ++k) entries.emplace_back(BekVector{random_vector(gen, 32), BekSource::logits(), 0}, c);
  }
  const ReferenceDb db(entries, m);
  const BekVector q{random_vector(gen, 32), BekSource::logits(), 0};
  for (auto _ : state) benchmark::DoNotOptimize(classify(db, q, Metric::kCosine));
  state.SetItemsProcessed(state.iterations() * m * 4);
}
BENCHMARK(bm_classify)->Arg(8)->Arg(64)->Arg(512);

static void bm_forward(benchmark::State& state) {
  const auto net = make_net(static_cast<int>(state.range(0)));
  std::mt19937_64 gen(4);
  const auto x = random_vector(gen, 16);
  for (auto _ : state) benchmark::DoNotOptimize(forward(net, x));
}
BENCHMARK(bm_forward)->Arg(32)->Arg(128)->Arg(512);

static void bm_loss_and_grad(benchmark::State& state) {
  const auto net = make_net(static_cast<int>(state.range(0)));
  std::mt19937_64 gen(5);
  std::vector<std::vector<double>> xs;
  std::vector<Example> batch;
  for (int i = 0; i < 16; ++i) xs.push_back(random_vector(gen, 16));
  for (int i = 0; i < 16; ++i) batch.push_back({&xs[i], i % 8});
  for (auto _ : state) benchmark::DoNotOptimize(loss_and_grad(net, batch));
}
BENCHMARK(bm_loss_and_grad)->Arg(32)->Arg(128);

static void bm_pearson(benchmark::State& state) {
  std::mt19937_64 gen(6);
  const auto x = random_vector(gen, static_cast<std::size_t>(state.range(0)));
  const auto y = random_vector(gen, static_cast<std::size_t>(state.range(0)));
  for (auto _ : state) benchmark::DoNotOptimize(pearson(x, y));
}
BENCHMARK(bm_pearson)->Arg(256)->Arg(4096);
BENCHMARK_MAIN();

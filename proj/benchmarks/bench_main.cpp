#include <benchmark/benchmark.h>

#include <map>

#include "deeprtc/deeprtc.hpp"

namespace {

using namespace deeprtc;

SyntheticConfig config_for(int fanout) {
  SyntheticConfig cfg;
  cfg.tree_shape = {fanout, fanout, fanout};
  cfg.n_max = 200;
  cfg.imbalance_factor = 0.1;
  return cfg;
}

struct Fixture {
  SyntheticBenchmark bench;
  NodeParams params;
  FeatureMap fmap;

  explicit Fixture(int fanout) : bench(synth_generate(config_for(fanout))) {
    params = init_params(1, 0.1, bench.train.dim(),
                         static_cast<Eigen::Index>(bench.taxonomy.num_classification_nodes()));
    fmap = FeatureMap::identity(bench.train.dim());
  }
};

const Fixture& fixture(int fanout) {
  static std::map<int, Fixture> cache;
  auto it = cache.find(fanout);
  if (it == cache.end()) it = cache.emplace(fanout, Fixture(fanout)).first;
  return it->second;
}

void BM_ForwardNode(benchmark::State& state) {
  const auto& f = fixture(static_cast<int>(state.range(0)));
  const Eigen::VectorXd x = f.bench.test.features.row(0).transpose();
  for (auto _ : state) {
    benchmark::DoNotOptimize(forward_node(f.bench.taxonomy, x, kRoot, f.params, f.fmap));
  }
}
BENCHMARK(BM_ForwardNode)->Arg(4)->Arg(8);

void BM_ForwardAllLeaves(benchmark::State& state) {
  const auto& f = fixture(static_cast<int>(state.range(0)));
  const Eigen::VectorXd x = f.bench.test.features.row(0).transpose();
  const auto ls = full_leaves(f.bench.taxonomy);
  for (auto _ : state) {
    benchmark::DoNotOptimize(forward_labelset(f.bench.taxonomy, x, ls, f.params, f.fmap));
  }
}
BENCHMARK(BM_ForwardAllLeaves)->Arg(4)->Arg(8);

void BM_EvaluateObjective(benchmark::State& state) {
  const auto& f = fixture(static_cast<int>(state.range(0)));
  std::vector<std::size_t> rows(64);
  for (std::size_t i = 0; i < rows.size(); ++i) rows[i] = i;
  const Batch batch{f.bench.train, rows};
  Rng rng(3);
  for (auto _ : state) {
    const auto cut = sample_cut(f.bench.taxonomy, 0.5, rng);
    benchmark::DoNotOptimize(evaluate_objective(f.bench.taxonomy, batch, f.params, f.fmap, 1.0, cut));
  }
  state.SetItemsProcessed(state.iterations() * static_cast<std::int64_t>(rows.size()));
}
BENCHMARK(BM_EvaluateObjective)->Arg(4)->Arg(8);

void BM_SampleCut(benchmark::State& state) {
  const auto& f = fixture(static_cast<int>(state.range(0)));
  Rng rng(5);
  for (auto _ : state) benchmark::DoNotOptimize(sample_cut(f.bench.taxonomy, 0.5, rng));
}
BENCHMARK(BM_SampleCut)->Arg(4)->Arg(8);

void BM_RtcPredict(benchmark::State& state) {
  const auto& f = fixture(static_cast<int>(state.range(0)));
  const Eigen::VectorXd x = f.bench.test.features.row(0).transpose();
  for (auto _ : state) {
    benchmark::DoNotOptimize(
        rtc_predict(x, f.bench.taxonomy, f.params, f.fmap, CompetenceLevel(0.5)));
  }
}
BENCHMARK(BM_RtcPredict)->Arg(4)->Arg(8);

}  // namespace

BENCHMARK_MAIN();

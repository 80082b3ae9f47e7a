#include <benchmark/benchmark.h>

#include "swgrid/grid_topology.hpp"
#include "swgrid/model.hpp"
#include "swgrid/random.hpp"

using namespace swgrid;

namespace {

void BM_EnumeratePaths(benchmark::State& state) {
  const GridSpec spec{static_cast<std::size_t>(state.range(0)), static_cast<std::size_t>(state.range(1)), 1, 1};
  for (auto _ : state) benchmark::DoNotOptimize(enumerate_paths(spec).total);
  state.SetLabel(std::to_string(spec.unit_count()) + " units");
}
BENCHMARK(BM_EnumeratePaths)->Args({1, 16})->Args({2, 4})->Args({4, 2})->Args({3, 10})->Args({2, 30});

// Args: dims, side, base width.
void BM_GridBlockForward(benchmark::State& state) {
  const auto dims = static_cast<std::size_t>(state.range(0));
  const auto side = static_cast<std::size_t>(state.range(1));
  const auto k = static_cast<std::size_t>(state.range(2));
  GridBlock<float> block({dims, side, k, 2 * k}, 2 * k);
  init_msra(block, 1);
  Tensor<float> x({16, 2 * k, 16, 16});
  Rng rng(3);
  for (float& v : x.data()) v = static_cast<float>(rng.normal());
  for (auto _ : state) benchmark::DoNotOptimize(block.forward(x).ptr());
  state.SetItemsProcessed(state.iterations() * 16);
}
BENCHMARK(BM_GridBlockForward)
    ->Args({1, 16, 16})
    ->Args({2, 4, 16})
    ->Args({4, 2, 16})
    ->Unit(benchmark::kMillisecond);

}  // namespace

BENCHMARK_MAIN();

#include <benchmark/benchmark.h>

#include "evkit/dvs_sim.hpp"
#include "evkit/event_core.hpp"
#include "evkit/losses.hpp"
#include "evkit/masking.hpp"
#include "evkit/rng.hpp"
#include "evkit/synthetic.hpp"
#include "evkit/toy_model.hpp"

namespace {

using namespace evkit;

void BM_Simulate(benchmark::State& state)
{
  const int side = static_cast<int>(state.range(0));
  const auto frames = random_frames(side, side, 12, 1);
  const auto ts = frame_timestamps(frames.size(), 30.0, default_config().resolution_us());
  DvsConfig cfg = default_config();
  cfg.seed = 3;
  std::size_t events = 0;
  for (auto _ : state) {
    const EventStream s = simulate_frames(frames, ts, cfg);
    events = s.size();
    benchmark::DoNotOptimize(events);
  }
  state.counters["pixels/s"] =
    benchmark::Counter(static_cast<double>(side) * side, benchmark::Counter::kIsIterationInvariantRate);
  state.counters["events"] = static_cast<double>(events);
}
BENCHMARK(BM_Simulate)->Arg(32)->Arg(64)->Unit(benchmark::kMillisecond);

void BM_Voxelize(benchmark::State& state)
{
  Rng rng(5);
  EventStream s;
  s.width = s.height = 224;
  s.t_start = 0;
  s.t_end = 33000;
  for (std::int64_t i = 0; i < state.range(0); ++i)
    s.events.push_back({static_cast<Micros>(rng() % 33001), static_cast<std::uint16_t>(rng() % 224),
                        static_cast<std::uint16_t>(rng() % 224), static_cast<std::int8_t>(rng() % 2 ? 1 : -1)});
  std::sort(s.events.begin(), s.events.end(), [](const Event& a, const Event& b) { return a.t < b.t; });
  for (auto _ : state)
    benchmark::DoNotOptimize(voxelize(s, 5));
  state.SetItemsProcessed(state.iterations() * state.range(0));
}
BENCHMARK(BM_Voxelize)->Arg(10000)->Arg(100000);

void BM_InfoNce(benchmark::State& state)
{
  Rng rng(9);
  auto unit = [&] {
    std::vector<double> v(32);
    for (double& x : v)
      x = normal(rng);
    return l2_normalize(v);
  };
  ContrastBatch b{unit(), unit(), {}, kDefaultTemperature};
  for (std::int64_t k = 0; k < state.range(0); ++k)
    b.negatives.push_back(unit());
  for (auto _ : state)
    benchmark::DoNotOptimize(info_nce(b));
}
BENCHMARK(BM_InfoNce)->Arg(1024);

void BM_MakeMask(benchmark::State& state)
{
  PatchGrid g;
  g.rows = g.cols = 14;
  for (int i = 0; i < 196; ++i)
    g.density.push_back(static_cast<double>((i * 37) % 101));
  std::uint64_t seed = 0;
  for (auto _ : state)
    benchmark::DoNotOptimize(make_mask(g, 0.5, MaskStrategy::RandomBalanced, ++seed));
}
BENCHMARK(BM_MakeMask);

void BM_MmStep(benchmark::State& state)
{
  const auto data = stripe_dataset(8, 11);
  ModelConfig mc;
  Model model(mc);
  std::vector<MmExample> batch;
  for (std::size_t i = 0; i < data.size(); ++i)
    batch.push_back(make_mm_example(data[i].voxel, data[i].diff,
                                    make_mask(compute_density(data[i].voxel, 16), 0.5,
                                              MaskStrategy::RandomBalanced, i),
                                    16));
  for (auto _ : state)
    benchmark::DoNotOptimize(mm_loss_and_grad(model, batch));
}
BENCHMARK(BM_MmStep)->Unit(benchmark::kMillisecond);

} // namespace

BENCHMARK_MAIN();

#include <benchmark/benchmark.h>

#include "micronet/dataset_io.hpp"
#include "micronet/metrics.hpp"
#include "micronet/postprocess.hpp"
#include "micronet/training.hpp"

namespace {

using micronet::InstanceMask;

InstanceMask synth_truth(int size, std::uint64_t seed) {
  micronet::io::SynthOptions o;
  o.n_images = 1;
  o.size = size;
  o.seed = seed;
  return *micronet::io::synth_dataset(o)[0].truth;
}

void BM_WeightMap(benchmark::State& state) {
  const InstanceMask t = synth_truth(static_cast<int>(state.range(0)), 1);
  for (auto _ : state) {
    auto w = micronet::train::weight_map(t);
    benchmark::DoNotOptimize(w.w.data());
  }
}
BENCHMARK(BM_WeightMap)->Arg(256)->Arg(512)->Unit(benchmark::kMillisecond);

void BM_Evaluate(benchmark::State& state) {
  const int size = static_cast<int>(state.range(0));
  const InstanceMask truth = synth_truth(size, 1);
  const InstanceMask pred = synth_truth(size, 2);
  for (auto _ : state) {
    auto m = micronet::metrics::evaluate("x", pred, truth);
    benchmark::DoNotOptimize(m.dice);
  }
}
BENCHMARK(BM_Evaluate)->Arg(256)->Arg(512)->Unit(benchmark::kMillisecond);

void BM_Clean(benchmark::State& state) {
  const auto fg = micronet::foreground(synth_truth(static_cast<int>(state.range(0)), 3));
  const micronet::postprocess::PostprocessParams p;
  for (auto _ : state) {
    auto m = micronet::postprocess::clean(fg, p);
    benchmark::DoNotOptimize(m.labels.data());
  }
}
BENCHMARK(BM_Clean)->Arg(512)->Unit(benchmark::kMillisecond);

}  // namespace

BENCHMARK_MAIN();

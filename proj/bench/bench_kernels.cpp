// Serial reference kernels against their OpenMP counterparts.
#include <random>
#include <vector>

#include <benchmark/benchmark.h>

#include "kinemod/modality.hpp"
#include "kinemod/skeleton.hpp"

using namespace kinemod;

namespace {

std::vector<SkeletonSequence> random_batch(std::size_t samples) {
  std::mt19937_64 rng(7);
  std::normal_distribution<double> n(0.0, 1.0);
  std::vector<SkeletonSequence> out;
  for (std::size_t i = 0; i < samples; ++i) {
    Tensor4 t(kMaxBodies, 3, kResampledFrames, 25);
    for (double& v : t.values()) v = n(rng);
    out.push_back(make_sequence(std::move(t), 40 + 20 * (i % 4)));
  }
  return out;
}

const SkeletonTopology& topo() {
  static const SkeletonTopology t = default_topology();
  return t;
}

template <Exec E>
void BM_DeriveBatch(benchmark::State& state) {
  const auto seqs = random_batch(static_cast<std::size_t>(state.range(0)));
  for (auto _ : state) benchmark::DoNotOptimize(derive_batch(seqs, topo(), E));
  state.SetItemsProcessed(state.iterations() * state.range(0));
}

template <Exec E>
void BM_DeriveAll(benchmark::State& state) {
  const auto seq = random_batch(1).front();
  for (auto _ : state) benchmark::DoNotOptimize(derive_all(seq, topo(), E));
}

template <Exec E>
void BM_AngularVelocity(benchmark::State& state) {
  const auto seq = random_batch(1).front();
  const auto bones = derive_bones(seq, topo(), E);
  const auto axes = derive_rotation_axes(bones, topo(), E);
  const auto theta = derive_joint_angles(bones, topo(), E);
  for (auto _ : state) benchmark::DoNotOptimize(derive_angular_velocity(axes, theta, time_scale(seq), E));
}

}  // namespace

BENCHMARK(BM_DeriveBatch<Exec::Serial>)->Arg(16)->Arg(64)->Unit(benchmark::kMillisecond);
BENCHMARK(BM_DeriveBatch<Exec::Parallel>)->Arg(16)->Arg(64)->Unit(benchmark::kMillisecond);
BENCHMARK(BM_DeriveAll<Exec::Serial>)->Unit(benchmark::kMicrosecond);
BENCHMARK(BM_DeriveAll<Exec::Parallel>)->Unit(benchmark::kMicrosecond);
BENCHMARK(BM_AngularVelocity<Exec::Serial>)->Unit(benchmark::kMicrosecond);
BENCHMARK(BM_AngularVelocity<Exec::Parallel>)->Unit(benchmark::kMicrosecond);

BENCHMARK_MAIN();

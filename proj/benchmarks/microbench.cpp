#include <benchmark/benchmark.h>

#include "drbd/data.hpp"
#include "drbd/metrics.hpp"
#include "drbd/morton.hpp"
#include "drbd/network.hpp"
#include "drbd/ops.hpp"
#include "drbd/ssm.hpp"
#include "drbd/vq.hpp"

using namespace drbd;

namespace {

std::vector<float> noise(std::size_t n, std::uint64_t seed) {
  SplitMix64 rng(seed);
  std::vector<float> v(n);
  for (auto& x : v) x = float(rng.normal());
  return v;
}

void BM_MortonPermutation(benchmark::State& state) {
  const auto n = std::size_t(state.range(0));
  for (auto _ : state) benchmark::DoNotOptimize(build_permutation({n, n, n}));
  state.SetItemsProcessed(state.iterations() * std::int64_t(n * n * n));
}
BENCHMARK(BM_MortonPermutation)->Arg(10)->Arg(16)->Arg(32)->Arg(64);

void BM_Locality(benchmark::State& state) {
  const auto n = std::size_t(state.range(0));
  for (auto _ : state) benchmark::DoNotOptimize(locality_stats({n, n, n}, Ordering::morton));
}
BENCHMARK(BM_Locality)->Arg(8)->Arg(32);

void BM_GatherScatter(benchmark::State& state) {
  const std::size_t n = 20, c = std::size_t(state.range(0));
  const auto perm = build_permutation({n, n, n});
  const auto x = TensorF::from({c, n, n, n}, noise(c * n * n * n, 1));
  NoGradGuard guard;
  for (auto _ : state) benchmark::DoNotOptimize(scatter_back(gather_sequence(x, perm), perm));
}
BENCHMARK(BM_GatherScatter)->Arg(32)->Arg(128);

void BM_Conv3dForward(benchmark::State& state) {
  const std::size_t n = std::size_t(state.range(0)), c = std::size_t(state.range(1));
  const auto x = TensorF::from({c, n, n, n}, noise(c * n * n * n, 2));
  const auto w = TensorF::from({c, c, 3, 3, 3}, noise(c * c * 27, 3));
  NoGradGuard guard;
  for (auto _ : state) benchmark::DoNotOptimize(conv3d(x, w, TensorF{}, 1));
  state.counters["GFLOP/s"] =
      benchmark::Counter(2.0 * 27 * double(c * c * n * n * n), benchmark::Counter::kIsIterationInvariantRate, benchmark::Counter::kIs1000);
}
BENCHMARK(BM_Conv3dForward)->Args({32, 4})->Args({16, 16})->Args({8, 64});

void BM_Conv3dBackward(benchmark::State& state) {
  const std::size_t n = 16, c = 8;
  auto x = TensorF::from({c, n, n, n}, noise(c * n * n * n, 4), true);
  auto w = TensorF::from({c, c, 3, 3, 3}, noise(c * c * 27, 5), true);
  for (auto _ : state) {
    x.zero_grad();
    w.zero_grad();
    backward(sum(conv3d(x, w, TensorF{}, 1)));
  }
}
BENCHMARK(BM_Conv3dBackward);

void BM_SelectiveScan(benchmark::State& state) {
  const std::size_t L = std::size_t(state.range(0)), E = std::size_t(state.range(1));
  SsmConfig cfg{.embed = E, .state = 16};
  SplitMix64 rng(6);
  const auto p = SsmParams<float>::init(cfg, rng);
  const auto seq = TensorF::from({L, E}, noise(L * E, 7));
  NoGradGuard guard;
  for (auto _ : state) benchmark::DoNotOptimize(selective_scan(seq, p.forward, cfg, Direction::forward));
  state.SetItemsProcessed(state.iterations() * std::int64_t(L));
}
BENCHMARK(BM_SelectiveScan)->Args({8, 128})->Args({64, 64})->Args({900, 32});

void BM_Quantize(benchmark::State& state) {
  const std::size_t M = std::size_t(state.range(0)), K = 512, D = 128;
  Codebook<float> cb({.codes = K, .dim = D});
  cb.set_embeddings(noise(K * D, 8));
  const auto y = TensorF::from({M, D}, noise(M * D, 9));
  NoGradGuard guard;
  for (auto _ : state) benchmark::DoNotOptimize(quantize(y, cb));
}
BENCHMARK(BM_Quantize)->Arg(8)->Arg(900);

void BM_Hd95(benchmark::State& state) {
  const std::size_t n = std::size_t(state.range(0));
  const auto c = generate_phantom(1, {n, n, n}, 0.3 * double(max_et_volume(1, {n, n, n})));
  const auto gt = region_mask(c.labels, kRegions[0]);
  const auto pred = region_mask(degrade_labels(c.labels, c.dims, 2), kRegions[0]);
  for (auto _ : state) benchmark::DoNotOptimize(hd95(pred, gt, c.dims));
}
BENCHMARK(BM_Hd95)->Arg(32)->Arg(64);

void BM_DeskForward(benchmark::State& state) {
  Network<float> net(NetConfig::desk(), 1);
  const auto x = TensorF::from({4, 32, 32, 32}, noise(4 * 32768, 10));
  SplitMix64 rng(11);
  net.init_codebooks({x}, rng);
  for (auto _ : state) benchmark::DoNotOptimize(net.predict(x));
}
BENCHMARK(BM_DeskForward)->Unit(benchmark::kMillisecond);

}  // namespace

BENCHMARK_MAIN();

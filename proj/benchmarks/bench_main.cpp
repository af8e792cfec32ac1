#include <cmath>
#include <random>

#include <benchmark/benchmark.h>

#include "crynet/cells/lmu.hpp"
#include "crynet/features.hpp"
#include "crynet/fusion.hpp"
#include "crynet/model.hpp"
#include "crynet/nn/ops.hpp"

using namespace crynet;

namespace {

AudioClip tone(double seconds) {
  AudioClip clip;
  clip.sample_rate = kTargetSampleRate;
  const auto n = static_cast<std::size_t>(seconds * clip.sample_rate);
  clip.samples.resize(n);
  std::mt19937_64 rng(1);
  std::normal_distribution<double> noise(0.0, 0.01);
  for (std::size_t i = 0; i < n; ++i) {
    const double t = static_cast<double>(i) / clip.sample_rate;
    clip.samples[i] = (0.5 * std::sin(2 * M_PI * 350.0 * t) + noise(rng));
  }
  return clip;
}

void BM_StftLogPower(benchmark::State& state) {
  const auto clip = tone(static_cast<double>(state.range(0)));
  for (auto _ : state) benchmark::DoNotOptimize(stft_logpower(clip));
}
BENCHMARK(BM_StftLogPower)->Arg(3)->Arg(30)->Unit(benchmark::kMillisecond);

void BM_FuseFeatures(benchmark::State& state) {
  const auto clip = tone(static_cast<double>(state.range(0)));
  for (auto _ : state) benchmark::DoNotOptimize(fuse_features(clip));
}
BENCHMARK(BM_FuseFeatures)->Arg(3)->Arg(30)->Unit(benchmark::kMillisecond);

// Forward and backward through the full model on a batch of two default-sized inputs.
void BM_EncoderStep(benchmark::State& state) {
  ModelConfig cfg;
  const auto width = static_cast<std::size_t>(state.range(0));
  cfg.filters = {width, width / 2, width / 4};
  const CryModel<float> model(cfg, 3);
  nn::ParamStore<float> store;
  std::mt19937_64 rng(0);
  model.init_params(store, rng);
  nn::Array<float> x({2, 1, 273, 233});
  std::normal_distribution<float> n01;
  for (auto& v : x.values()) v = n01(rng);
  const std::vector<int> y{1, 2};
  for (auto _ : state) {
    nn::Graph<float> g;
    const auto z = model.forward(g, store, g.constant(x), nn::Mode::Train, rng, false);
    g.backward(nn::softmax_cross_entropy(z, std::span<const int>(y)));
    store.zero_grad();
  }
}
BENCHMARK(BM_EncoderStep)->Arg(32)->Arg(128)->Unit(benchmark::kMillisecond);

void BM_LmuScan(benchmark::State& state) {
  cells::LmuConfig cfg;
  const cells::LmuCell<float> cell(cfg);
  nn::ParamStore<float> store;
  std::mt19937_64 rng(0);
  cell.init_params(store, rng);
  nn::Array<float> x({static_cast<std::size_t>(state.range(0)), 233, 32});
  std::normal_distribution<float> n01;
  for (auto& v : x.values()) v = n01(rng);
  for (auto _ : state) {
    nn::Graph<float> g;
    benchmark::DoNotOptimize(cell.forward(g, store, g.constant(x)).h_last.value().data());
  }
}
BENCHMARK(BM_LmuScan)->Arg(1)->Arg(8)->Unit(benchmark::kMillisecond);

void BM_FuseUnion(benchmark::State& state) {
  const auto space = LabelSpace::cry_default();
  const std::vector<std::vector<double>> logits{{2.0, 0.1, -1.0}, {0.3, 1.2, 0.4}};
  const std::vector<double> temps{1.6, 0.8};
  const FusionConfig cfg;
  for (auto _ : state) benchmark::DoNotOptimize(fuse_union(logits, temps, space, cfg));
}
BENCHMARK(BM_FuseUnion);

}  // namespace

BENCHMARK_MAIN();

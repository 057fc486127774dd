#include <benchmark/benchmark.h>

#include <vector>

#include "pssc/data.hpp"
#include "pssc/distance.hpp"
#include "pssc/gating.hpp"
#include "pssc/metrics.hpp"
#include "pssc/netcore.hpp"
#include "pssc/rng.hpp"
#include "pssc/train.hpp"

namespace {

using namespace pssc;

Tensor<float> random_codes(int batch, int dim, std::uint64_t seed) {
  RngStream rng(seed);
  Tensor<float> codes({batch, dim});
  for (auto& v : codes.storage()) v = static_cast<float>(rng.normal());
  return codes;
}

void BM_Cumax(benchmark::State& state) {
  const auto n = static_cast<std::size_t>(state.range(0));
  std::vector<double> logits(n);
  RngStream rng(1);
  for (auto& v : logits) v = rng.normal();
  for (auto _ : state) benchmark::DoNotOptimize(gating::cumax(logits));
}
BENCHMARK(BM_Cumax)->Arg(8)->Arg(64);

void BM_GeneratorForward(benchmark::State& state) {
  ArchConfig arch;
  RngStream rng(2);
  const auto bundle = init_bundle(arch, rng);
  const auto codes = random_codes(static_cast<int>(state.range(0)), arch.latent_dim, 3);
  for (auto _ : state) benchmark::DoNotOptimize(generate(bundle, codes));
  state.SetItemsProcessed(state.iterations() * state.range(0));
}
BENCHMARK(BM_GeneratorForward)->Arg(1)->Arg(32)->Unit(benchmark::kMillisecond);

void BM_Discriminate(benchmark::State& state) {
  ArchConfig arch;
  RngStream rng(4);
  const auto bundle = init_bundle(arch, rng);
  const auto images = generate(bundle, random_codes(32, arch.latent_dim, 5));
  for (auto _ : state) benchmark::DoNotOptimize(discriminate(bundle, images));
}
BENCHMARK(BM_Discriminate)->Unit(benchmark::kMillisecond);

void BM_TrainStep(benchmark::State& state) {
  ProceduralSpec spec;
  spec.factors = {{"x_position", 8}, {"y_position", 8}, {"scale", 4}};
  const auto data = make_procedural_dataset(spec);
  TrainConfig config;
  config.seed = 6;
  config.ps_mode = state.range(0) ? PsMode::ps : PsMode::off;
  auto train = init_train_state(config);
  RngStream rng(7);
  const auto batch = sample_batch(data, config.batch_size, rng);
  for (auto _ : state) benchmark::DoNotOptimize(train_step(train, batch));
}
BENCHMARK(BM_TrainStep)->Arg(0)->Arg(1)->Unit(benchmark::kMillisecond);

void BM_Distance(benchmark::State& state) {
  DistanceConfig cfg;
  cfg.kind = static_cast<DistanceKind>(state.range(0));
  const PerceptualDistance dist(cfg);
  RngStream rng(8);
  Tensor<double> a({16, 1, 64, 64}), b({16, 1, 64, 64});
  for (auto& v : a.storage()) v = rng.uniform();
  for (auto& v : b.storage()) v = rng.uniform();
  for (auto _ : state) benchmark::DoNotOptimize(dist.batch(a, b));
}
BENCHMARK(BM_Distance)
    ->Arg(static_cast<int>(DistanceKind::pixel_l1))
    ->Arg(static_cast<int>(DistanceKind::random_features));

void BM_TplDim(benchmark::State& state) {
  ArchConfig arch;
  RngStream init(9);
  const auto bundle = init_bundle(arch, init);
  const auto gen = bundle_generator(bundle);
  const PerceptualDistance dist;
  TplOptions opts;
  opts.num_base = 4;
  for (auto _ : state) {
    RngStream rng(10);
    benchmark::DoNotOptimize(tpl_dim(gen, arch.latent_dim, 0, dist, opts, rng));
  }
}
BENCHMARK(BM_TplDim)->Unit(benchmark::kMillisecond);

}  // namespace

BENCHMARK_MAIN();

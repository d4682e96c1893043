#include <benchmark/benchmark.h>

#include "clel/data.hpp"
#include "clel/energy_model.hpp"
#include "clel/evaluation.hpp"
#include "clel/sgld.hpp"
#include "clel/trainer.hpp"

using namespace clel;

namespace {

EnergyModel default_model() {
  Rng rng(1);
  return EnergyModel(EnergyModelConfig{}, rng);
}

void BM_MarginalEnergy(benchmark::State& state) {
  const EnergyModel ebm = default_model();
  Rng rng(2);
  const Matrix x = rng.gaussian_matrix(state.range(0), 2);
  for (auto _ : state) benchmark::DoNotOptimize(ebm.marginal_energy(x));
  state.SetItemsProcessed(state.iterations() * state.range(0));
}
BENCHMARK(BM_MarginalEnergy)->Arg(64)->Arg(1024);

void BM_JointEnergyGrad(benchmark::State& state) {
  const EnergyModel ebm = default_model();
  Rng rng(3);
  const Matrix x = rng.gaussian_matrix(state.range(0), 2);
  const Matrix z = normalize_rows(rng.gaussian_matrix(state.range(0), ebm.d_z()));
  for (auto _ : state) benchmark::DoNotOptimize(ebm.joint_energy_grad(x, z));
  state.SetItemsProcessed(state.iterations() * state.range(0));
}
BENCHMARK(BM_JointEnergyGrad)->Arg(64)->Arg(1024);

void BM_SgldStep(benchmark::State& state) {
  const EnergyModel ebm = default_model();
  Rng rng(4);
  Matrix x = rng.gaussian_matrix(state.range(0), 2);
  SgldConfig cfg;
  cfg.clamp_lo = -3;
  cfg.clamp_hi = 3;
  const GradFn grad = [&ebm](const Matrix& m) { return ebm.marginal_energy_grad(m); };
  for (auto _ : state) x = sgld_step(grad, x, cfg, rng);
  state.SetItemsProcessed(state.iterations() * state.range(0));
}
BENCHMARK(BM_SgldStep)->Arg(64)->Arg(1024);

void BM_TrainStep(benchmark::State& state) {
  const RunConfig cfg = RunConfig::from_config(Config::defaults());
  const RunContext ctx = make_context(cfg);
  TrainState s = initial_state(cfg, ctx);
  for (auto _ : state) {
    const Matrix batch = generate(ctx.dataset, cfg.batch_size, s.data_rng);
    benchmark::DoNotOptimize(train_step(s, batch, cfg, ctx));
  }
}
BENCHMARK(BM_TrainStep)->Unit(benchmark::kMillisecond);

void BM_Mmd(benchmark::State& state) {
  const DatasetSpec spec = dataset_spec("gauss8");
  Rng rng(5);
  const Matrix a = generate(spec, state.range(0), rng);
  const Matrix b = generate(spec, state.range(0), rng);
  const auto bw = default_bandwidths(a, b);
  for (auto _ : state) benchmark::DoNotOptimize(mmd(a, b, bw));
}
BENCHMARK(BM_Mmd)->Arg(1000)->Arg(5000)->Unit(benchmark::kMillisecond);

void BM_PermutationNull(benchmark::State& state) {
  const DatasetSpec spec = dataset_spec("gauss8");
  Rng rng(6);
  const Matrix a = generate(spec, 1000, rng);
  const Matrix b = generate(spec, 1000, rng);
  const auto bw = default_bandwidths(a, b);
  for (auto _ : state) benchmark::DoNotOptimize(mmd_permutation_null(a, b, bw, 20, rng));
}
BENCHMARK(BM_PermutationNull)->Unit(benchmark::kMillisecond);

}  // namespace

BENCHMARK_MAIN();

#include <cmath>

#include <benchmark/benchmark.h>

#include "rpinn/grid.hpp"
#include "rpinn/loss.hpp"
#include "rpinn/samplers.hpp"

using namespace rpinn;

namespace {

struct PoissonFixture {
  Dataset data = make_poisson_dataset(ProblemId::nonlinear_poisson, 32, 0.1, 1);
  std::unique_ptr<InverseProblem> problem = make_poisson_problem(data, poisson_network());
  LikelihoodSigmas sigmas =
      sigmas_from_weights(default_weights(*problem), 0.1, problem->terms(), SigmaMode::weighted_additive, "f");
  std::vector<double> params = init_params(poisson_network(), 3);
};

// Batched tape: loss and gradient for the 1-50-50-1 network.
void BM_EnergyGradTape(benchmark::State& st) {
  PoissonFixture f;
  const auto obj = QuadraticObjective::energy(*f.problem, f.sigmas);
  std::vector<double> g(f.params.size());
  for (auto _ : st) benchmark::DoNotOptimize(obj(f.params, g));
}
BENCHMARK(BM_EnergyGradTape)->Unit(benchmark::kMicrosecond);

// Same quantity through the scalar graph.
void BM_EnergyGradGraph(benchmark::State& st) {
  PoissonFixture f;
  const auto fn = QuadraticObjective::energy(*f.problem, f.sigmas).as_scalar_fn();
  for (auto _ : st) benchmark::DoNotOptimize(ad::grad(fn, f.params));
}
BENCHMARK(BM_EnergyGradGraph)->Unit(benchmark::kMillisecond);

void BM_DiffusionSolve(benchmark::State& st) {
  const auto n = static_cast<std::size_t>(st.range(0));
  GridField k = sample_grf({}, {n, n / 2, 1.0, 0.5}, 1);
  k.values = k.values.array().exp().matrix();
  for (auto _ : st) benchmark::DoNotOptimize(solve_diffusion_fd(k, 0.0, 1.0));
}
BENCHMARK(BM_DiffusionSolve)->Arg(32)->Arg(64)->Arg(128)->Unit(benchmark::kMillisecond);

// NUTS transitions on the nonlinear Poisson posterior, 20 draws per iteration.
void BM_NutsDraws(benchmark::State& st) {
  PoissonFixture f;
  const LogDensityFn fn = posterior_log_density(*f.problem, f.sigmas);
  HmcConfig cfg;
  cfg.n_chains = 1;
  cfg.burn_in = 0;
  cfg.n_samples = 20;
  cfg.initial_step = 1e-3;
  cfg.max_tree_depth = 6;
  for (auto _ : st) benchmark::DoNotOptimize(nuts_sample(fn, {f.params}, cfg, 1));
}
BENCHMARK(BM_NutsDraws)->Unit(benchmark::kMillisecond);

}  // namespace
BENCHMARK_MAIN();

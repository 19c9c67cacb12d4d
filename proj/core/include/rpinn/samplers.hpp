#pragma once

// Posterior approximation engines sharing one Adam minimizer: randomized
// PINN (randomize-then-minimize), deep ensembles, NUTS and SVGD.
//
// Parallel execution never changes results: every job derives its random
// numbers from (base seed, index) and results are merged in index order.

#include <cstddef>
#include <cstdint>
#include <functional>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "rpinn/errors.hpp"
#include "rpinn/loss.hpp"
#include "rpinn/mlp.hpp"
#include "rpinn/problems.hpp"

namespace rpinn {

// Runs fn(0) .. fn(n - 1) on up to `workers` threads. The first exception (by
// index) is rethrown after all jobs finish.
void parallel_for(std::size_t n, std::size_t workers, const std::function<void(std::size_t)>& fn);

// Value and (when grad is non-empty) gradient written into grad.
using ObjectiveFn = std::function<double(std::span<const double> x, std::span<double> grad)>;

struct OptimizerConfig {
  double learning_rate = 1e-3;
  std::size_t max_iterations = 20000;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  double grad_tolerance = 1e-6;

  void validate() const;
  friend bool operator==(const OptimizerConfig&, const OptimizerConfig&) = default;
};

struct OptimizeResult {
  std::vector<double> x;
  double loss = 0.0;
  std::size_t iterations = 0;
  bool converged = false;  // gradient-norm stop reached
};

class OptimizationError : public NumericError {
 public:
  OptimizationError(const std::string& what, std::vector<double> last_finite, std::size_t iteration)
      : NumericError(what), last_finite_(std::move(last_finite)), iteration_(iteration) {}

  const std::vector<double>& last_finite() const noexcept { return last_finite_; }
  std::size_t iteration() const noexcept { return iteration_; }

 private:
  std::vector<double> last_finite_;
  std::size_t iteration_;
};

OptimizeResult adam_minimize(const ObjectiveFn& fn, std::vector<double> init, const OptimizerConfig& cfg);

enum class Method : std::uint8_t { rpinn, deep_ensemble, hmc, svgd, map };

std::string to_string(Method m);
Method parse_method(const std::string& name);  // rpinn, de, hmc, svgd, map

struct SampleInfo {
  std::uint64_t seed = 0;
  double loss = 0.0;
  std::size_t iterations = 0;
  bool accepted = true;
  std::size_t chain = 0;

  friend bool operator==(const SampleInfo&, const SampleInfo&) = default;
};

struct PosteriorEnsemble {
  Method method = Method::rpinn;
  ProblemId problem = ProblemId::linear_poisson;
  ParameterLayout layout;
  LikelihoodSigmas sigmas;
  std::vector<std::vector<double>> samples;
  std::vector<SampleInfo> info;
  std::size_t n_failed = 0;
  std::map<std::string, double> diagnostics;  // e.g. divergences, step sizes

  std::size_t size() const noexcept { return samples.size(); }
  ParameterVector sample(std::size_t i) const { return {layout, samples.at(i)}; }
  void validate() const;
};

enum class InitPolicy : std::uint8_t { fresh, map };

std::string to_string(InitPolicy p);
InitPolicy parse_init_policy(const std::string& name);

inline constexpr double kMaxFailureFraction = 0.1;

struct EnsembleOptions {
  std::size_t n_ens = 1;
  std::uint64_t base_seed = 0;
  OptimizerConfig optimizer;
  InitPolicy init = InitPolicy::fresh;
  std::optional<std::vector<double>> map_estimate;  // required for InitPolicy::map
  std::size_t workers = 1;
  // Called after each finished sample (from worker threads).
  std::function<void(std::size_t index, const SampleInfo&)> progress;
};

// Sample k minimizes the randomized loss with noise seed base_seed + k (and a
// fresh Glorot init with the same seed, or the MAP estimate). All samples are
// accepted. Optimizer failures are excluded and counted; more than 10%
// failures raise NumericError.
PosteriorEnsemble rpinn_sample(const InverseProblem& problem, const LikelihoodSigmas& sigmas,
                               const EnsembleOptions& opts);

// Member k minimizes the deterministic PINN loss from init seed base_seed + k.
PosteriorEnsemble deep_ensemble(const InverseProblem& problem, const LossWeights& weights,
                                const EnsembleOptions& opts);

// Single deterministic PINN fit from init seed `seed`.
OptimizeResult map_estimate(const InverseProblem& problem, const LossWeights& weights, std::uint64_t seed,
                            const OptimizerConfig& cfg);

// ---- Hamiltonian Monte Carlo ----------------------------------------------

// log density and (when grad is non-empty) its gradient.
using LogDensityFn = ObjectiveFn;

// log p = -energy for a problem and its likelihood sigmas.
LogDensityFn posterior_log_density(const InverseProblem& problem, const LikelihoodSigmas& sigmas);

struct HmcConfig {
  std::size_t n_chains = 4;
  std::size_t burn_in = 2000;
  std::size_t n_samples = 1000;
  double target_accept = 0.75;
  int max_tree_depth = 10;
  double initial_step = 0.0;  // 0: heuristic search
  double max_energy_error = 1000.0;

  void validate() const;
  friend bool operator==(const HmcConfig&, const HmcConfig&) = default;
};

struct PhaseState {
  std::vector<double> q;
  std::vector<double> p;
  std::vector<double> grad;  // grad log p at q
  double log_p = 0.0;
};

// One leapfrog step of size eps with identity mass. Non-finite log densities
// are reported through log_p = -inf rather than thrown.
void leapfrog(const LogDensityFn& fn, PhaseState& s, double eps);

struct ChainResult {
  std::vector<std::vector<double>> samples;
  std::vector<double> log_density;  // per post-burn-in sample
  std::vector<double> burn_in_log_density;
  double step_size = 0.0;
  std::size_t divergences = 0;
  double mean_accept = 0.0;  // post-burn-in mean acceptance statistic
  std::size_t gradient_evaluations = 0;
};

// NUTS (doubling tree, slice variable) with dual-averaging step adaptation
// during burn-in. inits.size() chains; chain c uses seed (seed, c).
std::vector<ChainResult> nuts_sample(const LogDensityFn& fn, const std::vector<std::vector<double>>& inits,
                                     const HmcConfig& cfg, std::uint64_t seed, std::size_t workers = 1);

PosteriorEnsemble chains_to_ensemble(const std::vector<ChainResult>& chains, const InverseProblem& problem,
                                     const LikelihoodSigmas& sigmas, std::uint64_t seed);

// ---- Stein variational gradient descent -----------------------------------

struct SvgdConfig {
  std::size_t n_particles = 100;
  std::size_t n_steps = 3000;
  double learning_rate = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;

  void validate() const;
  friend bool operator==(const SvgdConfig&, const SvgdConfig&) = default;
};

// RBF kernel k(a, b) = exp(-|a - b|^2 / h) with h = med^2 / log(n), med the
// median pairwise distance; particles move along
// phi(x_i) = 1/n sum_j [k(x_j, x_i) grad log p(x_j) + grad_{x_j} k(x_j, x_i)]
// with Adam ascent steps. All particles advance synchronously.
std::vector<std::vector<double>> svgd_sample(const LogDensityFn& fn, std::vector<std::vector<double>> particles,
                                             const SvgdConfig& cfg, std::size_t workers = 1,
                                             const std::function<void(std::size_t step)>& progress = {});

}  // namespace rpinn

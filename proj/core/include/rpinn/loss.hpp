#pragma once

// PINN loss, Bayesian energy and the noise-perturbed (randomized) loss.
//
// All three are quadratic in the problem residuals:
//
//   sum_t c_t sum_i (r_ti - w_ti)^2 + c_p sum_j (theta_j - w_pj)^2
//
// with c_t = lambda_t / N_t, c_p = 1 for the PINN loss, c_t = 1 / (2 sigma_t^2),
// c_p = 1 / (2 sigma_p^2) for the energy, and the noise w = 0 unless
// randomized.

#include <cstdint>
#include <map>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "rpinn/autodiff.hpp"
#include "rpinn/problems.hpp"

namespace rpinn {

struct LossWeights {
  std::map<std::string, double> lambda;  // per term name

  // Throws ArgumentError unless every term has a positive weight.
  void validate(const std::vector<TermInfo>& terms) const;
};

// lambda_f = 27000, lambda_b = 2700 for the Poisson problems; every weight
// equal to the h-network parameter count for the diffusion problem; 1 for the
// linear model.
LossWeights default_weights(const InverseProblem& problem);

struct LikelihoodSigmas {
  std::map<std::string, double> term;
  double prior = 1.0;

  friend bool operator==(const LikelihoodSigmas&, const LikelihoodSigmas&) = default;
};

enum class SigmaMode : std::uint8_t { weighted, weighted_additive, uniform, regularized };

std::string to_string(SigmaMode mode);
SigmaMode parse_sigma_mode(const std::string& name);

inline constexpr double kSigmaFloor = 1e-12;

// weighted:          sigma_p^2 = sigma^2 lambda_a / N_a (a = anchor term),
//                    sigma_t^2 = N_t sigma_p^2 / lambda_t
// weighted_additive: as weighted with the anchor forced to "f"
// uniform:           sigma_t = sigma, sigma_p = 1
// regularized:       as weighted with sigma replaced by sigma + epsilon
// Values below kSigmaFloor are clamped with a warning.
LikelihoodSigmas sigmas_from_weights(const LossWeights& weights, double sigma, const std::vector<TermInfo>& terms,
                                     SigmaMode mode, const std::string& anchor, double epsilon = 0.0);

struct NoiseDraw {
  std::map<std::string, Eigen::VectorXd> term;
  Eigen::VectorXd prior;
};

// omega_t ~ N(0, sigma_t^2 I) per term, omega_p ~ N(0, sigma_p^2 I) with
// n_params entries. Deterministic per seed.
NoiseDraw draw_noise(const LikelihoodSigmas& sigmas, const std::vector<TermInfo>& terms, std::size_t n_params,
                     std::uint64_t seed);

class QuadraticObjective {
 public:
  static QuadraticObjective pinn(const InverseProblem& problem, const LossWeights& weights);
  static QuadraticObjective energy(const InverseProblem& problem, const LikelihoodSigmas& sigmas);
  static QuadraticObjective randomized(const InverseProblem& problem, const LikelihoodSigmas& sigmas,
                                       const NoiseDraw& noise);

  const InverseProblem& problem() const noexcept { return *problem_; }

  // Value; when grad is non-empty it is overwritten with the gradient.
  double operator()(std::span<const double> params, std::span<double> grad = {}) const;

  // The same objective recorded on a scalar graph.
  ad::Var graph(ad::Graph& g, std::span<const ad::Var> params) const;
  ad::ScalarFn as_scalar_fn() const;

 private:
  QuadraticObjective(const InverseProblem& problem, std::vector<double> coef, double prior_coef);

  const InverseProblem* problem_;
  std::vector<double> coef_;
  double prior_coef_;
  std::vector<Eigen::VectorXd> shift_;  // empty: no noise
  Eigen::VectorXd prior_shift_;
};

double pinn_loss(const InverseProblem& problem, std::span<const double> params, const LossWeights& weights);
double energy(const InverseProblem& problem, std::span<const double> params, const LikelihoodSigmas& sigmas);
double randomized_loss(const InverseProblem& problem, std::span<const double> params, const LikelihoodSigmas& sigmas,
                       const NoiseDraw& noise);

}  // namespace rpinn

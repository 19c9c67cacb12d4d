#pragma once

// Posterior summaries and convergence diagnostics.

#include <cstddef>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "rpinn/autodiff.hpp"
#include "rpinn/problems.hpp"
#include "rpinn/samplers.hpp"

namespace rpinn {

struct PredictiveField {
  std::vector<Point> points;
  Eigen::VectorXd mean;
  Eigen::VectorXd std;         // unbiased (1 / (N - 1)); zero for N = 1
  Eigen::MatrixXd predictions;  // points x members, only when requested
};

// predictions: one column per ensemble member.
PredictiveField predictive_moments(const Eigen::MatrixXd& predictions, bool keep = false);

PredictiveField predictive_moments(const PosteriorEnsemble& ensemble, const InverseProblem& problem,
                                   const std::string& field, const std::vector<Point>& points, bool keep = false);

inline constexpr double kStdFloor = 1e-12;

// -sum[(mu - u)^2 / (2 s^2) + log(2 pi s^2) / 2], s floored at kStdFloor.
// `floored` (optional) receives the number of floored entries.
double lpp(const PredictiveField& field, const Eigen::VectorXd& reference, std::size_t* floored = nullptr);

struct RelErrors {
  std::optional<double> rl2;  // empty when the reference is identically zero
  double linf = 0.0;          // absolute max |mu - u|
};

RelErrors rel_errors(const Eigen::VectorXd& mean, const Eigen::VectorXd& reference);

// Fraction of points with |mu - u| <= k sigma.
double coverage(const PredictiveField& field, const Eigen::VectorXd& reference, double k = 2.0);

struct SummaryRow {
  std::string method;
  std::string field;
  double rl2 = 0.0;
  double linf = 0.0;
  double avg_std = 0.0;
  double lpp = 0.0;
  double coverage = 0.0;
  double seconds = 0.0;

  friend bool operator==(const SummaryRow&, const SummaryRow&) = default;
};

SummaryRow summarize(const std::string& method, const std::string& field, const PredictiveField& pred,
                     const Eigen::VectorXd& reference, double seconds);

// chains[c][i] is the parameter vector of draw i in chain c. Plain
// Gelman-Rubin by default; split halves each chain first. W = 0 yields +inf.
Eigen::VectorXd rhat(const std::vector<std::vector<std::vector<double>>>& chains, bool split = false);

struct SubspaceGrid {
  std::vector<double> a;
  std::vector<double> b;
  Eigen::MatrixXd log_density;  // a.size() x b.size()
  Eigen::MatrixXd basis;        // 2 x dim, orthonormal rows
  // In-plane coordinates (relative to theta3) of every lattice point, for axis
  // scaling: coord_u(i, j), coord_v(i, j).
  Eigen::MatrixXd coord_u;
  Eigen::MatrixXd coord_v;
};

// log density at theta = a theta1 + b theta2 + (1 - a - b) theta3.
SubspaceGrid subspace_grid(std::span<const double> theta1, std::span<const double> theta2,
                           std::span<const double> theta3, const std::vector<double>& a, const std::vector<double>& b,
                           const std::function<double(std::span<const double>)>& log_density, std::size_t workers = 1);

// Top-k eigenvalues (descending) of the Hessian of -log density.
Eigen::VectorXd hessian_eigenspectrum(const ad::ScalarFn& neg_log_density, std::span<const double> at,
                                      std::size_t top_k, std::size_t max_dim = ad::kDefaultHessianLimit);

}  // namespace rpinn

#pragma once

// Benchmark inverse problems. Each problem turns a parameter vector into a
// list of residual vectors, one per loss term, where every residual is
// (model prediction - observed target). The loss module squares, weights and
// perturbs these; the problem only knows how to compute and differentiate
// them.

#include <array>
#include <cstddef>
#include <cstdint>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "rpinn/autodiff.hpp"
#include "rpinn/grid.hpp"
#include "rpinn/mlp.hpp"

namespace rpinn {

using Point = std::array<double, 2>;  // 1D problems use x[0] only

struct Observation {
  Point x{};
  double value = 0.0;

  friend bool operator==(const Observation&, const Observation&) = default;
};

enum class ProblemId : std::uint8_t { linear_poisson, nonlinear_poisson, diffusion_2d, linear_model };

std::string to_string(ProblemId id);
ProblemId parse_problem_id(const std::string& name);  // throws ArgumentError

// Measurements and collocation points. For the 1D problems y_obs holds the
// source measurements f~ and dirichlet_obs the two boundary values u~_l, u~_r.
// For the 2D problem y_obs holds y~ = ln k~, u_obs holds h~, dirichlet_obs the
// heads H~ on x1 = L1 and neumann_obs the fluxes q~ on x1 = 0.
struct Dataset {
  ProblemId problem = ProblemId::linear_poisson;
  double noise_sigma = 0.0;
  std::uint64_t seed = 0;
  std::vector<Observation> y_obs;
  std::vector<Observation> u_obs;
  std::vector<Observation> dirichlet_obs;
  std::vector<Observation> neumann_obs;
  std::vector<Point> residual_points;
  std::vector<Point> neumann_top_points;
  std::vector<Point> neumann_bottom_points;

  friend bool operator==(const Dataset&, const Dataset&) = default;
};

struct TermInfo {
  std::string name;
  std::size_t count = 0;
};

// Residuals recorded at one parameter vector, plus their vector-Jacobian
// product.
class ResidualTape {
 public:
  virtual ~ResidualTape() = default;

  // One vector per term, in InverseProblem::terms() order.
  const std::vector<Eigen::VectorXd>& residuals() const noexcept { return residuals_; }

  // grad += J^T adjoint, with one adjoint vector per term.
  virtual void pullback(const std::vector<Eigen::VectorXd>& adjoints, std::span<double> grad) const = 0;

 protected:
  std::vector<Eigen::VectorXd> residuals_;
};

class InverseProblem {
 public:
  virtual ~InverseProblem() = default;

  virtual ProblemId id() const = 0;
  virtual const ParameterLayout& layout() const = 0;
  virtual std::vector<TermInfo> terms() const = 0;
  // Data term whose weight fixes the prior variance (f in 1D, y in 2D).
  virtual std::string anchor_term() const = 0;

  // Fast batched path used by the optimizers and samplers.
  virtual std::unique_ptr<ResidualTape> record(std::span<const double> params) const = 0;

  // Same residuals recorded on a scalar graph; used for cross-checks and the
  // Hessian diagnostics. Slow.
  virtual std::vector<std::vector<ad::Var>> residuals_graph(ad::Graph& g, std::span<const ad::Var> params) const = 0;

  // Predicted fields ("u", "f" in 1D; "y", "h" in 2D) and their references.
  virtual std::vector<std::string> fields() const = 0;
  virtual std::vector<Point> eval_points() const = 0;
  virtual Eigen::VectorXd predict(const std::string& field, std::span<const double> params,
                                  const std::vector<Point>& points) const = 0;
  virtual Eigen::VectorXd reference(const std::string& field, const std::vector<Point>& points) const = 0;
};

// ---- reference solutions --------------------------------------------------

struct PoissonValue {
  double u = 0.0;
  double f = 0.0;
};

inline constexpr double kLinearPoissonK = -0.10132118364233778;  // -1 / pi^2
inline constexpr double kNonlinearLambda = 0.01;
inline constexpr double kNonlinearK = 0.7;
inline constexpr double kNonlinearHalfWidth = 0.7;

PoissonValue ref_linear_poisson(double x);
PoissonValue ref_nonlinear_poisson(double x);

// ---- pointwise residual operators (Taylor-jet evaluation) -----------------

// k u''
double residual_linear_poisson(const MlpSpec& spec, std::span<const double> params, double x);
// lambda u'' + k tanh(u)
double residual_nonlinear_poisson(const MlpSpec& spec, std::span<const double> params, double x);
// div(e^y grad h) = e^y (lap h + grad y . grad h)
double residual_diffusion(const MlpSpec& h_spec, std::span<const double> h_params, const MlpSpec& y_spec,
                          std::span<const double> y_params, const Point& x);
// -e^y dh/dx_axis
double residual_neumann(const MlpSpec& h_spec, std::span<const double> h_params, const MlpSpec& y_spec,
                        std::span<const double> y_params, const Point& x, std::size_t axis);

// ---- measurement generation -----------------------------------------------

// reference + N(0, sigma^2) noise, deterministic per seed.
std::vector<double> generate_measurements(std::span<const double> reference, double sigma, std::uint64_t seed);

Dataset make_poisson_dataset(ProblemId problem, std::size_t n_f, double sigma, std::uint64_t seed);

struct DiffusionSetup {
  GridShape grid;
  GrfPrior prior;
  double head = 0.0;
  double flux = 1.0;
  std::size_t n_obs = 40;  // shared by y and h
  std::size_t n_r = 500;
  std::size_t n_dbr = 54;
  std::size_t n_nbl = 54;
  std::size_t n_nbt = 128;
  std::size_t n_nbb = 128;
  double sigma = 0.1;
  std::uint64_t seed = 0;

  void validate() const;
  friend bool operator==(const DiffusionSetup&, const DiffusionSetup&) = default;
};

struct DiffusionData {
  Dataset data;
  GridField y_ref;
  GridField h_ref;
};

DiffusionData make_diffusion_dataset(const DiffusionSetup& setup);

// ---- problem instances ----------------------------------------------------

inline MlpSpec poisson_network() { return {1, {50, 50}, 1, Activation::tanh}; }
inline MlpSpec diffusion_network() { return {2, {60, 60, 60, 60}, 1, Activation::tanh}; }

// 1D linear or nonlinear Poisson. Terms: "f" (source data), "b" (boundary data).
std::unique_ptr<InverseProblem> make_poisson_problem(const Dataset& data, const MlpSpec& spec);

// 2D diffusion with networks h (theta) and y (phi) stored in that order.
// Terms: r, dbr, nbl, nbt, nbb, y, h. Reference fields are optional; without
// them reference() throws.
std::unique_ptr<InverseProblem> make_diffusion_problem(const Dataset& data, const MlpSpec& h_spec,
                                                       const MlpSpec& y_spec,
                                                       std::optional<GridField> y_ref = std::nullopt,
                                                       std::optional<GridField> h_ref = std::nullopt,
                                                       std::optional<GridShape> eval_grid = std::nullopt);

// y = X a with a flat parameter vector; a single data term "y". Used to check
// samplers against closed-form Gaussian posteriors.
std::unique_ptr<InverseProblem> make_linear_model(const Eigen::MatrixXd& design, const Eigen::VectorXd& observed);

}  // namespace rpinn

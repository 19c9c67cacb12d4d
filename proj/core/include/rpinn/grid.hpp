#pragma once

// Cell-centred rectangular grids, Gaussian random field sampling and the
// finite-difference reference solver for div(k grad h) = 0.
//
// Cell (i, j) has centre ((i + 1/2) L1 / nx, (j + 1/2) L2 / ny); i runs
// along x1 and j along x2. GridField::values is nx x ny.

#include <array>
#include <cstddef>
#include <cstdint>
#include <iosfwd>
#include <random>

#include <Eigen/Core>

namespace rpinn {

struct GridShape {
  std::size_t nx = 64;
  std::size_t ny = 32;
  double length_x = 1.0;
  double length_y = 0.5;

  double dx() const { return length_x / static_cast<double>(nx); }
  double dy() const { return length_y / static_cast<double>(ny); }
  std::size_t cells() const { return nx * ny; }
  std::array<double, 2> center(std::size_t i, std::size_t j) const {
    return {(static_cast<double>(i) + 0.5) * dx(), (static_cast<double>(j) + 0.5) * dy()};
  }
  // Linear cell index used by the covariance and the FD system: i + nx * j.
  std::size_t index(std::size_t i, std::size_t j) const { return i + nx * j; }

  friend bool operator==(const GridShape&, const GridShape&) = default;
};

struct GridField {
  GridShape shape;
  Eigen::MatrixXd values;  // nx x ny

  double operator()(std::size_t i, std::size_t j) const {
    return values(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j));
  }
  // Value of the cell containing x (clamped to the domain).
  double at(const std::array<double, 2>& x) const;
};

// CSV with a two-line header ("nx,ny,L1,L2" then the numbers) followed by ny
// rows of nx comma-separated values, row j = 0 first.
void write_csv(std::ostream& out, const GridField& field);
GridField read_csv(std::istream& in);

struct GrfPrior {
  double mean = -3.0;
  double variance = 0.81;
  double correlation_length = 0.5;

  void validate() const;
  friend bool operator==(const GrfPrior&, const GrfPrior&) = default;
};

inline constexpr std::size_t kMaxGrfCells = 16384;

// Squared-exponential covariance  variance * exp(-|x - x'|^2 / length^2)
// over cell centres, factorized once by a lower-triangular Cholesky
// decomposition. Diagonal jitter starts at 1e-10 (relative to the variance)
// and escalates by 10x up to 1e-6 before giving up.
class GrfSampler {
 public:
  GrfSampler(const GrfPrior& prior, const GridShape& shape);

  GridField sample(std::mt19937_64& rng) const;
  GridField sample(std::uint64_t seed) const;
  double jitter() const noexcept { return jitter_; }

 private:
  GrfPrior prior_;
  GridShape shape_;
  Eigen::MatrixXd lower_;
  double jitter_ = 0.0;
};

GridField sample_grf(const GrfPrior& prior, const GridShape& shape, std::uint64_t seed);

// Cell-centred five-point scheme: h = head at x1 = L1 (ghost cell at half a
// cell distance), inflow flux q through x1 = 0 (-k dh/dx1 = q), no flow
// through x2 = 0 and x2 = L2. Face conductivities are harmonic means.
GridField solve_diffusion_fd(const GridField& k_field, double head, double flux);

struct BoundaryFluxes {
  double left = 0.0;    // volumetric inflow through x1 = 0
  double right = 0.0;   // volumetric outflow through x1 = L1
  double top = 0.0;     // outflow through x2 = L2 (zero by construction)
  double bottom = 0.0;  // outflow through x2 = 0 (zero by construction)
  double imbalance() const { return left - right - top - bottom; }
};

BoundaryFluxes boundary_fluxes(const GridField& k_field, const GridField& h, double head, double flux);

// Head on the x1 = 0 face of row j, extrapolated from the cell centre using
// the prescribed flux.
double left_face_head(const GridField& k_field, const GridField& h, double flux, std::size_t j);

}  // namespace rpinn

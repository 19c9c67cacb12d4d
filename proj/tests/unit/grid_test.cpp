#include <cmath>
#include <sstream>

#include <gtest/gtest.h>

#include "rpinn/errors.hpp"
#include "rpinn/grid.hpp"
#include "rpinn/random.hpp"

using namespace rpinn;

namespace {

GridField constant_field(const GridShape& s, double v) {
  return {s, Eigen::MatrixXd::Constant(static_cast<Eigen::Index>(s.nx), static_cast<Eigen::Index>(s.ny), v)};
}

}  // namespace

TEST(Grid, CellCentres) {
  const GridShape s{64, 32, 1.0, 0.5};
  EXPECT_DOUBLE_EQ(s.dx(), 1.0 / 64);
  EXPECT_DOUBLE_EQ(s.center(0, 0)[0], 0.5 / 64);
  EXPECT_DOUBLE_EQ(s.center(63, 31)[1], 0.5 - 0.25 / 32);
  EXPECT_EQ(s.index(2, 1), 66u);
}

TEST(Grid, AtClampsToContainingCell) {
  GridField f = constant_field({4, 2, 1.0, 0.5}, 0.0);
  f.values(3, 1) = 5.0;
  EXPECT_EQ(f.at({0.99, 0.49}), 5.0);
  EXPECT_EQ(f.at({1.5, 2.0}), 5.0);
  EXPECT_EQ(f.at({-1.0, -1.0}), 0.0);
}

TEST(Grid, CsvRoundTripIsExact) {
  GridField f = sample_grf({}, {8, 4, 1.0, 0.5}, 3);
  std::stringstream ss;
  write_csv(ss, f);
  const GridField g = read_csv(ss);
  EXPECT_EQ(g.shape, f.shape);
  EXPECT_EQ(g.values, f.values);
}

TEST(Grid, ConstantConductivityGivesLinearHead) {
  const GridShape s{64, 32, 1.0, 0.5};
  const double k = std::exp(-3.0);
  const GridField h = solve_diffusion_fd(constant_field(s, k), 0.0, 1.0);
  for (std::size_t j = 0; j < s.ny; ++j) {
    for (std::size_t i = 0; i < s.nx; ++i) {
      EXPECT_NEAR(h(i, j), std::exp(3.0) * (1.0 - s.center(i, j)[0]), 1e-8);
    }
  }
}

TEST(Grid, SeriesConductivityHeadDrop) {
  const GridShape s{32, 8, 1.0, 0.5};
  const double k1 = 0.5, k2 = 3.0, q = 1.0;
  GridField k = constant_field(s, k2);
  for (std::size_t i = 0; i < s.nx / 2; ++i) k.values.row(static_cast<Eigen::Index>(i)).setConstant(k1);
  const GridField h = solve_diffusion_fd(k, 0.0, q);
  for (std::size_t j = 0; j < s.ny; ++j) {
    EXPECT_NEAR(left_face_head(k, h, q, j), q * (0.5 / k1 + 0.5 / k2), 1e-6);
  }
}

TEST(Grid, FluxBalanceOnRandomField) {
  const GridShape s{32, 16, 1.0, 0.5};
  GridField k = sample_grf({}, s, 5);
  k.values = k.values.array().exp().matrix();
  const GridField h = solve_diffusion_fd(k, 0.0, 1.0);
  const BoundaryFluxes f = boundary_fluxes(k, h, 0.0, 1.0);
  EXPECT_NEAR(f.left, 0.5, 1e-12);
  EXPECT_LT(std::abs(f.imbalance()), 1e-9);
}

TEST(Grid, SolverRejectsNonPositiveConductivity) {
  GridField k = constant_field({4, 2, 1.0, 0.5}, 1.0);
  k.values(1, 1) = 0.0;
  EXPECT_THROW(solve_diffusion_fd(k, 0.0, 1.0), ArgumentError);
}

TEST(Grid, GrfMomentsMatchPrior) {
  // 3 x 2 cells, many draws: mean, variance and one covariance entry.
  const GridShape s{3, 2, 1.0, 0.5};
  const GrfPrior prior{-3.0, 0.81, 0.5};
  const GrfSampler sampler(prior, s);
  auto rng = make_rng(17, Stream::field);
  const int n = 20000;
  double m0 = 0, v0 = 0, c01 = 0;
  for (int t = 0; t < n; ++t) {
    const GridField f = sampler.sample(rng);
    const double a = f(0, 0) + 3.0, b = f(2, 1) + 3.0;
    m0 += a;
    v0 += a * a;
    c01 += a * b;
  }
  m0 /= n;
  v0 /= n;
  c01 /= n;
  const auto x0 = s.center(0, 0), x1 = s.center(2, 1);
  const double d2 = std::pow(x0[0] - x1[0], 2) + std::pow(x0[1] - x1[1], 2);
  EXPECT_NEAR(m0, 0.0, 4 * std::sqrt(0.81 / n));
  EXPECT_NEAR(v0, 0.81, 0.05);
  EXPECT_NEAR(c01, 0.81 * std::exp(-d2 / 0.25), 0.05);
}

TEST(Grid, GrfIsDeterministicPerSeed) {
  const GridShape s{8, 4, 1.0, 0.5};
  EXPECT_EQ(sample_grf({}, s, 1).values, sample_grf({}, s, 1).values);
  EXPECT_NE(sample_grf({}, s, 1).values, sample_grf({}, s, 2).values);
}

TEST(Grid, GrfGuardsAndValidation) {
  EXPECT_THROW(GrfSampler({-3, -1, 0.5}, {4, 4, 1, 1}), ArgumentError);
  EXPECT_THROW(GrfSampler({-3, 1, 0.5}, {256, 128, 1, 0.5}), ArgumentError);
}

#include <cmath>
#include <numbers>

#include <gtest/gtest.h>

#include "rpinn/stats.hpp"

using namespace rpinn;

namespace {

PredictiveField field(std::initializer_list<double> mean, std::initializer_list<double> sd) {
  PredictiveField f;
  f.mean = Eigen::Map<const Eigen::VectorXd>(mean.begin(), static_cast<Eigen::Index>(mean.size()));
  f.std = Eigen::Map<const Eigen::VectorXd>(sd.begin(), static_cast<Eigen::Index>(sd.size()));
  return f;
}

std::vector<std::vector<double>> scalar_chain(std::initializer_list<double> xs) {
  std::vector<std::vector<double>> c;
  for (double x : xs) c.push_back({x});
  return c;
}

}  // namespace

TEST(Stats, PredictiveMomentsUseUnbiasedStd) {
  Eigen::MatrixXd p(2, 3);
  p << 1, 2, 3, 5, 5, 5;
  const PredictiveField f = predictive_moments(p, true);
  EXPECT_DOUBLE_EQ(f.mean(0), 2.0);
  EXPECT_DOUBLE_EQ(f.std(0), 1.0);
  EXPECT_DOUBLE_EQ(f.std(1), 0.0);
  EXPECT_EQ(f.predictions, p);
  EXPECT_EQ(predictive_moments(Eigen::MatrixXd::Ones(2, 1)).std, Eigen::VectorXd::Zero(2));
}

TEST(Stats, LppOfStandardNormalAtMean) {
  const std::size_t n = 7;
  PredictiveField f;
  f.mean = Eigen::VectorXd::LinSpaced(n, -1, 1);
  f.std = Eigen::VectorXd::Ones(n);
  EXPECT_NEAR(lpp(f, f.mean), -0.9189385332046727 * n, 1e-6);
}

TEST(Stats, LppFloorsZeroStd) {
  const PredictiveField f = field({0.0, 1.0}, {0.0, 1.0});
  std::size_t floored = 0;
  const double v = lpp(f, Eigen::Vector2d(0.0, 1.0), &floored);
  EXPECT_EQ(floored, 1u);
  EXPECT_NEAR(v, -std::log(2 * std::numbers::pi) / 2 * 2 - std::log(kStdFloor), 1e-9);
}

TEST(Stats, RelativeErrors) {
  const auto e = rel_errors(Eigen::Vector2d(1.0, 1.0), Eigen::Vector2d(1.0, 1.0));
  EXPECT_EQ(*e.rl2, 0.0);
  EXPECT_EQ(e.linf, 0.0);
  const auto z = rel_errors(Eigen::Vector2d(1.0, 0.0), Eigen::Vector2d(0.0, 0.0));
  EXPECT_FALSE(z.rl2.has_value());
  EXPECT_EQ(z.linf, 1.0);
  const auto h = rel_errors(Eigen::Vector2d(3.0, 4.0), Eigen::Vector2d(0.0, 4.0));
  EXPECT_DOUBLE_EQ(*h.rl2, 3.0 / 4.0);
}

TEST(Stats, CoverageCountsTwoSigmaBand) {
  const PredictiveField f = field({0, 0, 0, 0}, {1, 1, 1, 1});
  EXPECT_EQ(coverage(f, Eigen::Vector4d(0, 0, 0, 0)), 1.0);
  EXPECT_EQ(coverage(f, Eigen::Vector4d(0, 1.9, 2.1, -5)), 0.5);
  EXPECT_EQ(coverage(field({0}, {0}), Eigen::VectorXd::Constant(1, 1.0)), 0.0);
}

TEST(Stats, SummaryRow) {
  const PredictiveField f = field({1, 2}, {0.5, 0.5});
  const SummaryRow r = summarize("rpinn", "u", f, Eigen::Vector2d(1, 2), 3.5);
  EXPECT_EQ(r.rl2, 0.0);
  EXPECT_EQ(r.avg_std, 0.5);
  EXPECT_EQ(r.coverage, 1.0);
  EXPECT_EQ(r.seconds, 3.5);
}

TEST(Stats, GelmanRubinHandCase) {
  // n = 2, W = 2, B = n var(1, 11) = 100, var+ = W / 2 + B / 2 = 51.
  const std::vector<std::vector<std::vector<double>>> chains{scalar_chain({0, 2}), scalar_chain({10, 12})};
  EXPECT_NEAR(rhat(chains)(0), 5.0498, 1e-3);
}

TEST(Stats, GelmanRubinNearOneForIdenticalChains) {
  std::vector<std::vector<std::vector<double>>> chains(3);
  for (auto& c : chains) {
    for (int i = 0; i < 200; ++i) c.push_back({std::sin(0.37 * i)});
  }
  EXPECT_LT(rhat(chains)(0), 1.01);
  EXPECT_LT(rhat(chains, true)(0), 1.1);
}

TEST(Stats, GelmanRubinZeroVarianceIsInfinite) {
  const std::vector<std::vector<std::vector<double>>> chains{scalar_chain({1, 1}), scalar_chain({2, 2})};
  EXPECT_TRUE(std::isinf(rhat(chains)(0)));
}

TEST(Stats, SubspaceCornersAreTheAnchors) {
  const std::vector<double> t1{1, 0, 0}, t2{0, 2, 0}, t3{0, 0, -1};
  auto lp = [](std::span<const double> x) { return -(x[0] * x[0] + 2 * x[1] * x[1] + 3 * x[2] * x[2]) + x[0]; };
  const std::vector<double> a{0.0, 0.5, 1.0}, b{0.0, 0.5, 1.0};
  const SubspaceGrid g = subspace_grid(t1, t2, t3, a, b, lp, 2);
  EXPECT_EQ(g.log_density(2, 0), lp(t1));
  EXPECT_EQ(g.log_density(0, 2), lp(t2));
  EXPECT_EQ(g.log_density(0, 0), lp(t3));
  EXPECT_NEAR((g.basis * g.basis.transpose() - Eigen::Matrix2d::Identity()).norm(), 0.0, 1e-12);
  EXPECT_NEAR(g.coord_u(0, 0), 0.0, 1e-15);
  EXPECT_NEAR(g.coord_v(0, 0), 0.0, 1e-15);
}

TEST(Stats, HessianSpectrumOfQuadratic) {
  ad::ScalarFn f = [](ad::Graph&, std::span<const ad::Var> x) {
    return 0.5 * (4.0 * x[0] * x[0] + x[1] * x[1] + 9.0 * x[2] * x[2]);
  };
  const std::vector<double> at{0.1, 0.2, 0.3};
  const Eigen::VectorXd ev = hessian_eigenspectrum(f, at, 2);
  ASSERT_EQ(ev.size(), 2);
  EXPECT_NEAR(ev(0), 9.0, 1e-10);
  EXPECT_NEAR(ev(1), 4.0, 1e-10);
}

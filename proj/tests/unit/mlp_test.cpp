#include <cmath>
#include <random>
#include <sstream>

#include <gtest/gtest.h>

#include "rpinn/mlp.hpp"

using namespace rpinn;

namespace {

MlpSpec net(std::size_t in, std::vector<std::size_t> hidden) { return {in, std::move(hidden), 1, Activation::tanh}; }

Eigen::MatrixXd points_1d(std::initializer_list<double> xs) {
  Eigen::MatrixXd p(1, static_cast<Eigen::Index>(xs.size()));
  Eigen::Index i = 0;
  for (double x : xs) p(0, i++) = x;
  return p;
}

}  // namespace

TEST(Mlp, ParameterCounts) {
  EXPECT_EQ(count_params(net(1, {50, 50})), 2701u);
  EXPECT_EQ(count_params(net(2, {60, 60, 60, 60})), 11221u);
  EXPECT_EQ(count_params(net(3, {})), 4u);
}

TEST(Mlp, DescribeAndParseAreInverse) {
  const MlpSpec s = net(2, {60, 60, 60, 60});
  EXPECT_EQ(describe(s), "2-60-60-60-60-1");
  EXPECT_EQ(parse_spec(describe(s)), s);
  EXPECT_THROW(parse_spec("1"), IoError);
  EXPECT_THROW(parse_spec("1-x-1"), IoError);
}

TEST(Mlp, ValidateRejectsZeroWidth) {
  EXPECT_THROW(net(1, {0}).validate(), ArgumentError);
  EXPECT_THROW(net(0, {3}).validate(), ArgumentError);
}

TEST(Mlp, ForwardMatchesHandComputation) {
  // 1-2-1: weights row-major per layer, biases after weights.
  const MlpSpec s = net(1, {2});
  const std::vector<double> p{0.5, -1.0, 0.1, 0.2, 2.0, 3.0, -0.3};
  const double x = 0.7;
  const double want = 2.0 * std::tanh(0.5 * x + 0.1) + 3.0 * std::tanh(-1.0 * x + 0.2) - 0.3;
  const std::vector<double> in{x};
  EXPECT_NEAR(forward(s, p, in), want, 1e-15);
}

TEST(Mlp, FlattenDeflattenRoundTrip) {
  const MlpSpec s = net(2, {3, 4});
  const auto p = init_params(s, 7);
  const auto layers = deflatten(s, p);
  ASSERT_EQ(layers.size(), 3u);
  EXPECT_EQ(layers[1].weights.rows(), 4);
  EXPECT_EQ(layers[1].weights.cols(), 3);
  EXPECT_EQ(flatten(s, layers), p);
}

TEST(Mlp, GlorotInitBoundsAndZeroBiases) {
  const MlpSpec s = net(1, {50, 50});
  const auto p = init_params(s, 3);
  const auto layers = deflatten(s, p);
  const double bound = std::sqrt(6.0 / 100.0);
  EXPECT_LE(layers[1].weights.cwiseAbs().maxCoeff(), bound);
  EXPECT_EQ(layers[1].biases.cwiseAbs().maxCoeff(), 0.0);
  // Uniform(-b, b) has variance b^2 / 3.
  const double var = layers[1].weights.squaredNorm() / 2500.0;
  EXPECT_NEAR(var, bound * bound / 3.0, 0.1 * bound * bound / 3.0);
  EXPECT_EQ(init_params(s, 3), p);
  EXPECT_NE(init_params(s, 4), p);
}

TEST(Mlp, LayoutOffsetsAndFlat) {
  const ParameterLayout l({net(2, {3}), net(2, {4})});
  EXPECT_EQ(l.size(0), 13u);
  EXPECT_EQ(l.offset(1), 13u);
  EXPECT_EQ(l.total(), 13u + 17u);
  const ParameterLayout f = ParameterLayout::flat(5);
  EXPECT_TRUE(f.is_flat());
  EXPECT_EQ(f.total(), 5u);
  EXPECT_FALSE(f == ParameterLayout::flat(6));
}

TEST(Mlp, TapeDerivativesMatchFiniteDifferences) {
  const MlpSpec s = net(1, {5, 4});
  const auto p = init_params(s, 11);
  const Eigen::MatrixXd pts = points_1d({-0.8, 0.1, 0.6});
  const NetworkTape tape(s, p, pts, 2);
  const double h = 1e-4;
  for (Eigen::Index i = 0; i < pts.cols(); ++i) {
    const double x = pts(0, i);
    auto u = [&](double z) {
      const std::vector<double> in{z};
      return forward(s, p, in);
    };
    EXPECT_NEAR(tape.value()(i), u(x), 1e-14);
    EXPECT_NEAR(tape.first(0)(i), (u(x + h) - u(x - h)) / (2 * h), 1e-8);
    EXPECT_NEAR(tape.second(0)(i), (u(x + h) - 2 * u(x) + u(x - h)) / (h * h), 1e-5);
  }
}

TEST(Mlp, TapeBackwardMatchesFiniteDifferences) {
  // L = sum(a0 u + a1 u' + a2 u'') at three points.
  const MlpSpec s = net(1, {4, 3});
  auto p = init_params(s, 5);
  const Eigen::MatrixXd pts = points_1d({-0.5, 0.2, 0.9});
  const Eigen::RowVectorXd a0 = Eigen::RowVector3d(0.3, -1.1, 0.7);
  const Eigen::RowVectorXd a1 = Eigen::RowVector3d(1.0, 0.4, -0.2);
  const Eigen::RowVectorXd a2 = Eigen::RowVector3d(-0.6, 0.5, 0.9);
  auto loss = [&](const std::vector<double>& q) {
    const NetworkTape t(s, q, pts, 2);
    return t.value().dot(a0) + t.first(0).dot(a1) + t.second(0).dot(a2);
  };
  const NetworkTape tape(s, p, pts, 2);
  std::vector<double> g(p.size(), 0.0);
  tape.backward({a0, {a1}, {a2}}, g);
  const double h = 1e-6;
  for (std::size_t k = 0; k < p.size(); ++k) {
    const double old = p[k];
    p[k] = old + h;
    const double fp = loss(p);
    p[k] = old - h;
    const double fm = loss(p);
    p[k] = old;
    EXPECT_NEAR(g[k], (fp - fm) / (2 * h), 1e-6 * std::max(1.0, std::abs(g[k]))) << "parameter " << k;
  }
}

TEST(Mlp, TapeOnTwoInputs) {
  const MlpSpec s = net(2, {6});
  const auto p = init_params(s, 9);
  Eigen::MatrixXd pts(2, 2);
  pts << 0.1, 0.4, 0.3, -0.2;
  const NetworkTape tape(s, p, pts, 2);
  const double h = 1e-4;
  for (Eigen::Index i = 0; i < 2; ++i) {
    for (std::size_t ax = 0; ax < 2; ++ax) {
      auto u = [&](double d) {
        std::vector<double> in{pts(0, i), pts(1, i)};
        in[ax] += d;
        return forward(s, p, in);
      };
      EXPECT_NEAR(tape.first(ax)(i), (u(h) - u(-h)) / (2 * h), 1e-8);
      EXPECT_NEAR(tape.second(ax)(i), (u(h) - 2 * u(0) + u(-h)) / (h * h), 1e-5);
    }
  }
}

TEST(Mlp, BinaryRoundTripIsBitwise) {
  const ParameterLayout l({net(1, {3}), net(2, {2, 2})});
  const ParameterVector pv = init_params(l, 2);
  std::stringstream ss;
  write_binary(ss, pv);
  EXPECT_EQ(read_binary(ss), pv);

  std::stringstream flat;
  const ParameterVector fv{ParameterLayout::flat(3), {1.0 / 3.0, -2.5e-300, 7.0}};
  write_binary(flat, fv);
  EXPECT_EQ(read_binary(flat), fv);
}

TEST(Mlp, BinaryRejectsGarbage) {
  std::stringstream ss("not a parameter file");
  EXPECT_THROW(read_binary(ss), IoError);
}

TEST(Mlp, TextRoundTripIsExact) {
  const ParameterLayout l({net(1, {4})});
  const ParameterVector pv = init_params(l, 8);
  std::stringstream ss;
  write_text(ss, pv);
  EXPECT_EQ(read_text(ss), pv);
}

TEST(Mlp, ParameterVectorValidates) {
  ParameterVector pv{ParameterLayout({net(1, {2})}), {1.0}};
  EXPECT_THROW(pv.validate(), ArgumentError);
}

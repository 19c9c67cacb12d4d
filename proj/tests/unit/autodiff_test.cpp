#include <cmath>
#include <vector>

#include <gtest/gtest.h>

#include "rpinn/autodiff.hpp"

using namespace rpinn;
using namespace rpinn::ad;

namespace {

std::vector<double> v(std::initializer_list<double> x) { return x; }

}  // namespace

TEST(Autodiff, ProductPlusSine) {
  ScalarFn f = [](Graph&, std::span<const Var> a) { return a[0] * a[1] + sin(a[0]); };
  const auto at = v({0.7, -1.3});
  const auto g = grad(f, at);
  EXPECT_NEAR(g[0], -1.3 + std::cos(0.7), 1e-14);
  EXPECT_NEAR(g[1], 0.7, 1e-14);
}

TEST(Autodiff, ValueAndGradientOfMixedExpression) {
  // exp(a) / b + log(b) - a^3 + tanh(a b)
  ScalarFn f = [](Graph&, std::span<const Var> x) {
    return exp(x[0]) / x[1] + log(x[1]) - pow(x[0], 3.0) + tanh(x[0] * x[1]);
  };
  const double a = 0.4, b = 1.7;
  std::vector<double> g(2);
  const double val = value_and_grad(f, v({a, b}), g);
  const double t = std::tanh(a * b);
  EXPECT_NEAR(val, std::exp(a) / b + std::log(b) - a * a * a + t, 1e-14);
  EXPECT_NEAR(g[0], std::exp(a) / b - 3 * a * a + (1 - t * t) * b, 1e-13);
  EXPECT_NEAR(g[1], -std::exp(a) / (b * b) + 1 / b + (1 - t * t) * a, 1e-13);
}

TEST(Autodiff, PowerWithVariableExponent) {
  ScalarFn f = [](Graph&, std::span<const Var> x) { return pow(x[0], x[1]); };
  const auto g = grad(f, v({2.0, 3.0}));
  EXPECT_NEAR(g[0], 3 * 4.0, 1e-12);
  EXPECT_NEAR(g[1], 8.0 * std::log(2.0), 1e-12);
}

TEST(Autodiff, ConstantsAndScalars) {
  ScalarFn f = [](Graph& gr, std::span<const Var> x) { return 2.0 * x[0] - 1.0 / x[0] + gr.constant(5.0) * x[0]; };
  EXPECT_NEAR(grad(f, v({0.5}))[0], 2.0 + 4.0 + 5.0, 1e-13);
}

TEST(Autodiff, NonFiniteIntermediateIsReported) {
  ScalarFn f = [](Graph&, std::span<const Var> x) { return log(x[0]); };
  EXPECT_THROW(grad(f, v({-1.0})), NumericError);
}

TEST(Autodiff, InputDerivativesOfClosedForm) {
  // u(x) = x sin(2x)
  ScalarFn u = [](Graph&, std::span<const Var> x) { return x[0] * sin(2.0 * x[0]); };
  const double x = 0.3;
  const auto at = v({x});
  EXPECT_NEAR(input_derivative(u, at, 0, 1), std::sin(2 * x) + 2 * x * std::cos(2 * x), 1e-13);
  EXPECT_NEAR(input_derivative(u, at, 0, 2), 4 * std::cos(2 * x) - 4 * x * std::sin(2 * x), 1e-12);
  EXPECT_THROW(input_derivative(u, at, 0, 3), ArgumentError);
  EXPECT_THROW(input_derivative(u, at, 1, 1), ArgumentError);
}

TEST(Autodiff, MixedInputGradient) {
  ScalarFn u = [](Graph&, std::span<const Var> x) { return x[0] * x[0] * x[1] + exp(x[1]); };
  const auto g = mixed_input_gradient(u, v({1.5, 0.2}));
  EXPECT_NEAR(g[0], 2 * 1.5 * 0.2, 1e-13);
  EXPECT_NEAR(g[1], 1.5 * 1.5 + std::exp(0.2), 1e-13);
}

TEST(Autodiff, HessianOfPolynomial) {
  // a^2 b + b^3
  ScalarFn f = [](Graph&, std::span<const Var> x) { return x[0] * x[0] * x[1] + pow(x[1], 3.0); };
  const Eigen::MatrixXd h = hessian(f, v({1.2, -0.5}));
  EXPECT_NEAR(h(0, 0), 2 * -0.5, 1e-12);
  EXPECT_NEAR(h(0, 1), 2 * 1.2, 1e-12);
  EXPECT_NEAR(h(1, 0), 2 * 1.2, 1e-12);
  EXPECT_NEAR(h(1, 1), 6 * -0.5, 1e-12);
  EXPECT_THROW(hessian(f, v({1.0, 1.0}), 1), ArgumentError);
}

TEST(Autodiff, DualNumbersCarryTangents) {
  Dual<double> x(0.8);
  x.tangent = 1.0;
  const Dual<double> y = tanh(x) * exp(x);
  const double t = std::tanh(0.8);
  EXPECT_NEAR(y.primal, t * std::exp(0.8), 1e-15);
  EXPECT_NEAR(y.tangent, ((1 - t * t) + t) * std::exp(0.8), 1e-14);
}

TEST(Autodiff, TaylorJetOfTanh) {
  // g(x) = tanh(2x + 1): g' = 2 s, g'' = -8 t s with s = 1 - t^2.
  using J = Taylor2<double, 1>;
  const double x = 0.15;
  const J j = tanh(shift(scale(J::variable(x, 0, 1.0), 2.0), 1.0));
  const double t = std::tanh(2 * x + 1), s = 1 - t * t;
  EXPECT_NEAR(j.value, t, 1e-15);
  EXPECT_NEAR(j.first[0], 2 * s, 1e-14);
  EXPECT_NEAR(j.second[0], -8 * t * s, 1e-13);
}

TEST(Autodiff, TaylorJetProductAndExp) {
  // h(x, y) = exp(x) * y along both axes.
  using J = Taylor2<double, 2>;
  const J x = J::variable(0.3, 0, 1.0), y = J::variable(-0.7, 1, 1.0);
  const J h = exp(x) * y;
  EXPECT_NEAR(h.first[0], std::exp(0.3) * -0.7, 1e-15);
  EXPECT_NEAR(h.first[1], std::exp(0.3), 1e-15);
  EXPECT_NEAR(h.second[0], std::exp(0.3) * -0.7, 1e-15);
  EXPECT_NEAR(h.second[1], 0.0, 1e-15);
}

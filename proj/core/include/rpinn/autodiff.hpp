#pragma once

// Scalar computational-graph engine.
//
// A Graph records every arithmetic operation applied to Var handles. The
// recorded structure can be replayed with any scalar type that provides the
// supported primitives: double for plain values and reverse-mode gradients,
// DualValue for forward-over-reverse second derivatives.
//
// Graphs are cheap to build and are rebuilt for every evaluation point. A
// Graph is not thread-safe; independent graphs may be used concurrently.

#include <array>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "rpinn/errors.hpp"

namespace rpinn::ad {

enum class NodeKind : std::uint8_t { constant, input, parameter, unary, binary };

enum class Op : std::uint8_t {
  none,
  add,
  sub,
  mul,
  div,
  pow,   // binary power a^b, requires a > 0 when b is differentiated
  powc,  // a^c with c a recorded constant
  neg,
  exp,
  log,
  sin,
  cos,
  tanh,
};

std::string to_string(NodeKind kind);
std::string to_string(Op op);

// Raised when a forward pass produces a non-finite value.
class EvaluationError : public NumericError {
 public:
  EvaluationError(std::size_t node, NodeKind kind, Op op);

  std::size_t node() const noexcept { return node_; }
  NodeKind kind() const noexcept { return kind_; }
  Op op() const noexcept { return op_; }

 private:
  std::size_t node_;
  NodeKind kind_;
  Op op_;
};

template <class T>
struct Dual {
  T primal{};
  T tangent{};

  Dual() = default;
  Dual(T p) : primal(p) {}  // NOLINT(google-explicit-constructor)
  Dual(T p, T t) : primal(p), tangent(t) {}

  Dual& operator+=(const Dual& o) {
    primal += o.primal;
    tangent += o.tangent;
    return *this;
  }
  Dual& operator-=(const Dual& o) {
    primal -= o.primal;
    tangent -= o.tangent;
    return *this;
  }
  friend Dual operator+(Dual a, const Dual& b) { return a += b; }
  friend Dual operator-(Dual a, const Dual& b) { return a -= b; }
  friend Dual operator-(const Dual& a) { return {-a.primal, -a.tangent}; }
  friend Dual operator*(const Dual& a, const Dual& b) {
    return {a.primal * b.primal, a.tangent * b.primal + a.primal * b.tangent};
  }
  friend Dual operator/(const Dual& a, const Dual& b) {
    T q = a.primal / b.primal;
    return {q, (a.tangent - q * b.tangent) / b.primal};
  }
  friend bool operator==(const Dual& a, const Dual& b) {
    return a.primal == b.primal && a.tangent == b.tangent;
  }
  friend Dual exp(const Dual& a) {
    using std::exp;
    T e = exp(a.primal);
    return {e, e * a.tangent};
  }
  friend Dual log(const Dual& a) {
    using std::log;
    return {log(a.primal), a.tangent / a.primal};
  }
  friend Dual sin(const Dual& a) {
    using std::cos;
    using std::sin;
    return {sin(a.primal), cos(a.primal) * a.tangent};
  }
  friend Dual cos(const Dual& a) {
    using std::cos;
    using std::sin;
    return {cos(a.primal), -sin(a.primal) * a.tangent};
  }
  friend Dual tanh(const Dual& a) {
    using std::tanh;
    T t = tanh(a.primal);
    return {t, (T(1) - t * t) * a.tangent};
  }
  friend Dual pow(const Dual& a, double c) {
    using std::pow;
    T p = pow(a.primal, c);
    return {p, T(c) * pow(a.primal, c - 1.0) * a.tangent};
  }
  friend Dual pow(const Dual& a, const Dual& b) {
    using std::log;
    using std::pow;
    T p = pow(a.primal, b.primal);
    T da = b.primal == T(0) ? T(0) : b.primal * pow(a.primal, b.primal - T(1)) * a.tangent;
    T db = b.tangent == T(0) ? T(0) : p * log(a.primal) * b.tangent;
    return {p, da + db};
  }
};

using DualValue = Dual<double>;

inline bool is_finite(double v) { return std::isfinite(v); }
template <class T>
bool is_finite(const Dual<T>& v) {
  return is_finite(v.primal) && is_finite(v.tangent);
}

class Graph;

// Handle to a node of a Graph. A default-constructed Var is the exact
// constant zero and belongs to no graph; arithmetic folds it away.
class Var {
 public:
  Var() = default;

  bool is_zero() const noexcept { return graph_ == nullptr; }
  Graph* graph() const noexcept { return graph_; }
  std::uint32_t index() const noexcept { return index_; }

 private:
  friend class Graph;
  Var(Graph* g, std::uint32_t i) : graph_(g), index_(i) {}

  Graph* graph_ = nullptr;
  std::uint32_t index_ = 0;
};

class Graph {
 public:
  struct Node {
    NodeKind kind;
    Op op;
    std::uint32_t a;
    std::uint32_t b;
    double constant;  // constant value, powc exponent, or input/parameter slot
  };

  Var constant(double value);
  Var input(std::size_t slot);
  Var parameter(std::size_t slot);
  Var unary(Op op, Var a, double c = 0.0);
  Var binary(Op op, Var a, Var b);

  std::size_t size() const noexcept { return nodes_.size(); }
  std::size_t num_inputs() const noexcept { return num_inputs_; }
  std::size_t num_parameters() const noexcept { return num_parameters_; }
  const Node& node(std::size_t i) const { return nodes_[i]; }

  // Evaluates every node. Throws EvaluationError on the first non-finite value.
  template <class S>
  std::vector<S> forward(std::span<const S> parameters, std::span<const S> inputs) const;

  // Reverse sweep seeded with d(output)/d(output) = 1. Adjoints of parameter
  // and input nodes are accumulated into the given spans (either may be empty).
  template <class S>
  void backward(std::span<const S> values, Var output, std::span<S> parameter_adjoints,
                std::span<S> input_adjoints) const;

 private:
  std::uint32_t push(Node n);

  std::vector<Node> nodes_;
  std::size_t num_inputs_ = 0;
  std::size_t num_parameters_ = 0;
};

Var operator+(Var a, Var b);
Var operator-(Var a, Var b);
Var operator*(Var a, Var b);
Var operator/(Var a, Var b);
Var operator-(Var a);
Var operator+(Var a, double b);
Var operator+(double a, Var b);
Var operator-(Var a, double b);
Var operator-(double a, Var b);
Var operator*(Var a, double b);
Var operator*(double a, Var b);
Var operator/(Var a, double b);
Var operator/(double a, Var b);
inline Var& operator+=(Var& a, Var b) { return a = a + b; }
inline Var& operator-=(Var& a, Var b) { return a = a - b; }
inline Var& operator*=(Var& a, Var b) { return a = a * b; }

Var exp(Var a);
Var log(Var a);
Var sin(Var a);
Var cos(Var a);
Var tanh(Var a);
Var pow(Var a, double c);
Var pow(Var a, Var b);

// Second-order Taylor jet along up to D spatial axes: value, first
// derivatives and pure second derivatives. Arithmetic on jets whose
// components are graph Vars records the derivative propagation into the
// graph, so reverse mode through the result differentiates the spatial
// derivatives with respect to parameters.
template <class T, std::size_t D>
struct Taylor2 {
  T value{};
  std::array<T, D> first{};
  std::array<T, D> second{};

  static Taylor2 constant(T v) {
    Taylor2 j;
    j.value = v;
    return j;
  }
  // `one` is the unit seed in T (a graph constant when T is Var).
  static Taylor2 variable(T v, std::size_t axis, T one) {
    Taylor2 j;
    j.value = v;
    j.first[axis] = one;
    return j;
  }

  friend Taylor2 operator+(const Taylor2& a, const Taylor2& b) {
    Taylor2 r;
    r.value = a.value + b.value;
    for (std::size_t k = 0; k < D; ++k) {
      r.first[k] = a.first[k] + b.first[k];
      r.second[k] = a.second[k] + b.second[k];
    }
    return r;
  }
  friend Taylor2 operator-(const Taylor2& a, const Taylor2& b) {
    Taylor2 r;
    r.value = a.value - b.value;
    for (std::size_t k = 0; k < D; ++k) {
      r.first[k] = a.first[k] - b.first[k];
      r.second[k] = a.second[k] - b.second[k];
    }
    return r;
  }
  friend Taylor2 operator*(const Taylor2& a, const Taylor2& b) {
    Taylor2 r;
    r.value = a.value * b.value;
    for (std::size_t k = 0; k < D; ++k) {
      r.first[k] = a.first[k] * b.value + a.value * b.first[k];
      r.second[k] = a.second[k] * b.value + 2.0 * (a.first[k] * b.first[k]) + a.value * b.second[k];
    }
    return r;
  }
  // Scaling by a coefficient that does not depend on the spatial variables.
  template <class C>
  friend Taylor2 scale(const Taylor2& a, const C& c) {
    Taylor2 r;
    r.value = a.value * c;
    for (std::size_t k = 0; k < D; ++k) {
      r.first[k] = a.first[k] * c;
      r.second[k] = a.second[k] * c;
    }
    return r;
  }
  template <class C>
  friend Taylor2 shift(const Taylor2& a, const C& c) {
    Taylor2 r = a;
    r.value = a.value + c;
    return r;
  }
  friend Taylor2 tanh(const Taylor2& a) {
    using std::tanh;
    Taylor2 r;
    r.value = tanh(a.value);
    T d1 = 1.0 - r.value * r.value;
    T d2 = -2.0 * (r.value * d1);
    for (std::size_t k = 0; k < D; ++k) {
      r.first[k] = d1 * a.first[k];
      r.second[k] = d1 * a.second[k] + d2 * (a.first[k] * a.first[k]);
    }
    return r;
  }
  friend Taylor2 exp(const Taylor2& a) {
    using std::exp;
    Taylor2 r;
    r.value = exp(a.value);
    for (std::size_t k = 0; k < D; ++k) {
      r.first[k] = r.value * a.first[k];
      r.second[k] = r.value * (a.second[k] + a.first[k] * a.first[k]);
    }
    return r;
  }
};

// A differentiable scalar function: receives the graph and the Var handles of
// its arguments and returns the output Var.
using ScalarFn = std::function<Var(Graph&, std::span<const Var>)>;

// Gradient of fn with respect to its arguments at `at`.
std::vector<double> grad(const ScalarFn& fn, std::span<const double> at);

// Value and gradient in one sweep.
double value_and_grad(const ScalarFn& fn, std::span<const double> at, std::span<double> gradient);

// d u / d x_axis (order 1) or d^2 u / d x_axis^2 (order 2) of a function of
// spatial inputs. Order 2 uses a DualValue forward pass seeded along the axis
// followed by a DualValue reverse sweep.
double input_derivative(const ScalarFn& net, std::span<const double> x, std::size_t axis, int order);

// Full spatial gradient of `net` at x.
std::vector<double> mixed_input_gradient(const ScalarFn& net, std::span<const double> x);

inline constexpr std::size_t kDefaultHessianLimit = 4000;

// Dense symmetric Hessian, column by column via forward-over-reverse, then
// symmetrized as (H + H^T) / 2. Refuses dimensions above `max_dim`.
Eigen::MatrixXd hessian(const ScalarFn& fn, std::span<const double> at,
                        std::size_t max_dim = kDefaultHessianLimit);

}  // namespace rpinn::ad

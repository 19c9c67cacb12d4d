#include "rpinn/autodiff.hpp"

#include <stdexcept>

namespace rpinn::ad {

std::string to_string(NodeKind kind) {
  switch (kind) {
    case NodeKind::constant: return "constant";
    case NodeKind::input: return "input";
    case NodeKind::parameter: return "parameter";
    case NodeKind::unary: return "unary";
    case NodeKind::binary: return "binary";
  }
  return "unknown";
}

std::string to_string(Op op) {
  switch (op) {
    case Op::none: return "none";
    case Op::add: return "add";
    case Op::sub: return "sub";
    case Op::mul: return "mul";
    case Op::div: return "div";
    case Op::pow: return "pow";
    case Op::powc: return "powc";
    case Op::neg: return "neg";
    case Op::exp: return "exp";
    case Op::log: return "log";
    case Op::sin: return "sin";
    case Op::cos: return "cos";
    case Op::tanh: return "tanh";
  }
  return "unknown";
}

EvaluationError::EvaluationError(std::size_t node, NodeKind kind, Op op)
    : NumericError("non-finite value at graph node " + std::to_string(node) + " (" + to_string(kind) +
                   (op == Op::none ? std::string() : " " + to_string(op)) + ")"),
      node_(node),
      kind_(kind),
      op_(op) {}

std::uint32_t Graph::push(Node n) {
  nodes_.push_back(n);
  return static_cast<std::uint32_t>(nodes_.size() - 1);
}

Var Graph::constant(double value) { return {this, push({NodeKind::constant, Op::none, 0, 0, value})}; }

Var Graph::input(std::size_t slot) {
  num_inputs_ = std::max(num_inputs_, slot + 1);
  return {this, push({NodeKind::input, Op::none, static_cast<std::uint32_t>(slot), 0, 0.0})};
}

Var Graph::parameter(std::size_t slot) {
  num_parameters_ = std::max(num_parameters_, slot + 1);
  return {this, push({NodeKind::parameter, Op::none, static_cast<std::uint32_t>(slot), 0, 0.0})};
}

Var Graph::unary(Op op, Var a, double c) {
  if (a.graph() != this) throw std::logic_error("autodiff: operand belongs to another graph");
  return {this, push({NodeKind::unary, op, a.index(), 0, c})};
}

Var Graph::binary(Op op, Var a, Var b) {
  if (a.graph() != this || b.graph() != this) throw std::logic_error("autodiff: operands belong to another graph");
  return {this, push({NodeKind::binary, op, a.index(), b.index(), 0.0})};
}

namespace {

double primal(double v) { return v; }
double primal(const DualValue& v) { return v.primal; }

Graph& owner(Var a, Var b) { return a.is_zero() ? *b.graph() : *a.graph(); }

[[noreturn]] void needs_graph(const char* what) {
  throw std::logic_error(std::string("autodiff: ") + what + " of the folded zero constant has no graph");
}

}  // namespace

template <class S>
std::vector<S> Graph::forward(std::span<const S> parameters, std::span<const S> inputs) const {
  if (parameters.size() < num_parameters_) throw ArgumentError("autodiff: too few parameter values");
  if (inputs.size() < num_inputs_) throw ArgumentError("autodiff: too few input values");
  using std::cos;
  using std::exp;
  using std::log;
  using std::pow;
  using std::sin;
  using std::tanh;
  std::vector<S> v(nodes_.size());
  for (std::size_t i = 0; i < nodes_.size(); ++i) {
    const Node& n = nodes_[i];
    switch (n.kind) {
      case NodeKind::constant: v[i] = S(n.constant); break;
      case NodeKind::input: v[i] = inputs[n.a]; break;
      case NodeKind::parameter: v[i] = parameters[n.a]; break;
      case NodeKind::unary:
        switch (n.op) {
          case Op::neg: v[i] = -v[n.a]; break;
          case Op::exp: v[i] = exp(v[n.a]); break;
          case Op::log: v[i] = log(v[n.a]); break;
          case Op::sin: v[i] = sin(v[n.a]); break;
          case Op::cos: v[i] = cos(v[n.a]); break;
          case Op::tanh: v[i] = tanh(v[n.a]); break;
          case Op::powc: v[i] = pow(v[n.a], n.constant); break;
          default: throw std::logic_error("autodiff: bad unary op");
        }
        break;
      case NodeKind::binary:
        switch (n.op) {
          case Op::add: v[i] = v[n.a] + v[n.b]; break;
          case Op::sub: v[i] = v[n.a] - v[n.b]; break;
          case Op::mul: v[i] = v[n.a] * v[n.b]; break;
          case Op::div: v[i] = v[n.a] / v[n.b]; break;
          case Op::pow: v[i] = pow(v[n.a], v[n.b]); break;
          default: throw std::logic_error("autodiff: bad binary op");
        }
        break;
    }
    if (!is_finite(v[i])) throw EvaluationError(i, n.kind, n.op);
  }
  return v;
}

template <class S>
void Graph::backward(std::span<const S> values, Var output, std::span<S> parameter_adjoints,
                     std::span<S> input_adjoints) const {
  if (output.is_zero()) return;
  if (output.graph() != this) throw std::logic_error("autodiff: output belongs to another graph");
  if (values.size() != nodes_.size()) throw ArgumentError("autodiff: value tape does not match graph");
  using std::cos;
  using std::log;
  using std::pow;
  using std::sin;
  std::vector<S> adj(output.index() + 1, S(0.0));
  adj[output.index()] = S(1.0);
  const S zero(0.0);
  for (std::size_t i = output.index() + 1; i-- > 0;) {
    const S g = adj[i];
    if (g == zero) continue;
    const Node& n = nodes_[i];
    switch (n.kind) {
      case NodeKind::constant: break;
      case NodeKind::input:
        if (n.a < input_adjoints.size()) input_adjoints[n.a] += g;
        break;
      case NodeKind::parameter:
        if (n.a < parameter_adjoints.size()) parameter_adjoints[n.a] += g;
        break;
      case NodeKind::unary: {
        const S& x = values[n.a];
        switch (n.op) {
          case Op::neg: adj[n.a] -= g; break;
          case Op::exp: adj[n.a] += g * values[i]; break;
          case Op::log: adj[n.a] += g / x; break;
          case Op::sin: adj[n.a] += g * cos(x); break;
          case Op::cos: adj[n.a] -= g * sin(x); break;
          case Op::tanh: adj[n.a] += g * (S(1.0) - values[i] * values[i]); break;
          case Op::powc: adj[n.a] += g * S(n.constant) * pow(x, n.constant - 1.0); break;
          default: throw std::logic_error("autodiff: bad unary op");
        }
        break;
      }
      case NodeKind::binary: {
        const S& x = values[n.a];
        const S& y = values[n.b];
        switch (n.op) {
          case Op::add:
            adj[n.a] += g;
            adj[n.b] += g;
            break;
          case Op::sub:
            adj[n.a] += g;
            adj[n.b] -= g;
            break;
          case Op::mul:
            adj[n.a] += g * y;
            adj[n.b] += g * x;
            break;
          case Op::div:
            adj[n.a] += g / y;
            adj[n.b] -= g * values[i] / y;
            break;
          case Op::pow:
            adj[n.a] += g * y * pow(x, y - S(1.0));
            if (primal(x) > 0.0) adj[n.b] += g * values[i] * log(x);
            break;
          default: throw std::logic_error("autodiff: bad binary op");
        }
        break;
      }
    }
  }
}

template std::vector<double> Graph::forward<double>(std::span<const double>, std::span<const double>) const;
template std::vector<DualValue> Graph::forward<DualValue>(std::span<const DualValue>,
                                                          std::span<const DualValue>) const;
template void Graph::backward<double>(std::span<const double>, Var, std::span<double>, std::span<double>) const;
template void Graph::backward<DualValue>(std::span<const DualValue>, Var, std::span<DualValue>,
                                         std::span<DualValue>) const;

Var operator+(Var a, Var b) {
  if (a.is_zero()) return b;
  if (b.is_zero()) return a;
  return owner(a, b).binary(Op::add, a, b);
}

Var operator-(Var a, Var b) {
  if (b.is_zero()) return a;
  if (a.is_zero()) return -b;
  return owner(a, b).binary(Op::sub, a, b);
}

Var operator*(Var a, Var b) {
  if (a.is_zero() || b.is_zero()) return {};
  return owner(a, b).binary(Op::mul, a, b);
}

Var operator/(Var a, Var b) {
  if (b.is_zero()) throw ArgumentError("autodiff: division by the folded zero constant");
  if (a.is_zero()) return {};
  return owner(a, b).binary(Op::div, a, b);
}

Var operator-(Var a) {
  if (a.is_zero()) return {};
  return a.graph()->unary(Op::neg, a);
}

Var operator+(Var a, double b) {
  if (b == 0.0) return a;
  if (a.is_zero()) needs_graph("shift");
  return a + a.graph()->constant(b);
}
Var operator+(double a, Var b) { return b + a; }

Var operator-(Var a, double b) { return a + (-b); }

Var operator-(double a, Var b) {
  if (a == 0.0) return -b;
  if (b.is_zero()) needs_graph("shift");
  return b.graph()->constant(a) - b;
}

Var operator*(Var a, double b) {
  if (a.is_zero() || b == 0.0) return {};
  if (b == 1.0) return a;
  return a * a.graph()->constant(b);
}
Var operator*(double a, Var b) { return b * a; }

Var operator/(Var a, double b) {
  if (b == 0.0) throw ArgumentError("autodiff: division by zero constant");
  return a * (1.0 / b);
}

Var operator/(double a, Var b) {
  if (b.is_zero()) throw ArgumentError("autodiff: division by the folded zero constant");
  if (a == 0.0) return {};
  return b.graph()->constant(a) / b;
}

Var exp(Var a) {
  if (a.is_zero()) needs_graph("exp");
  return a.graph()->unary(Op::exp, a);
}

Var log(Var a) {
  if (a.is_zero()) needs_graph("log");
  return a.graph()->unary(Op::log, a);
}

Var sin(Var a) {
  if (a.is_zero()) return {};
  return a.graph()->unary(Op::sin, a);
}

Var cos(Var a) {
  if (a.is_zero()) needs_graph("cos");
  return a.graph()->unary(Op::cos, a);
}

Var tanh(Var a) {
  if (a.is_zero()) return {};
  return a.graph()->unary(Op::tanh, a);
}

Var pow(Var a, double c) {
  if (a.is_zero()) {
    if (c > 0.0) return {};
    needs_graph("pow");
  }
  return a.graph()->unary(Op::powc, a, c);
}

Var pow(Var a, Var b) {
  if (a.is_zero() || b.is_zero()) needs_graph("pow");
  return owner(a, b).binary(Op::pow, a, b);
}

namespace {

struct Recorded {
  Graph graph;
  Var output;
};

Recorded record_parameters(const ScalarFn& fn, std::size_t n) {
  Recorded r;
  std::vector<Var> args;
  args.reserve(n);
  for (std::size_t i = 0; i < n; ++i) args.push_back(r.graph.parameter(i));
  r.output = fn(r.graph, args);
  return r;
}

Recorded record_inputs(const ScalarFn& fn, std::size_t n) {
  Recorded r;
  std::vector<Var> args;
  args.reserve(n);
  for (std::size_t i = 0; i < n; ++i) args.push_back(r.graph.input(i));
  r.output = fn(r.graph, args);
  return r;
}

}  // namespace

double value_and_grad(const ScalarFn& fn, std::span<const double> at, std::span<double> gradient) {
  if (gradient.size() != at.size()) throw ArgumentError("autodiff: gradient buffer size mismatch");
  std::fill(gradient.begin(), gradient.end(), 0.0);
  Recorded r = record_parameters(fn, at.size());
  if (r.output.is_zero()) return 0.0;
  std::vector<double> values = r.graph.forward<double>(at, {});
  r.graph.backward<double>(values, r.output, gradient, {});
  return values[r.output.index()];
}

std::vector<double> grad(const ScalarFn& fn, std::span<const double> at) {
  std::vector<double> g(at.size(), 0.0);
  value_and_grad(fn, at, g);
  return g;
}

double input_derivative(const ScalarFn& net, std::span<const double> x, std::size_t axis, int order) {
  if (order != 1 && order != 2) throw ArgumentError("input_derivative: order must be 1 or 2");
  if (axis >= x.size()) throw ArgumentError("input_derivative: axis out of range");
  Recorded r = record_inputs(net, x.size());
  if (r.output.is_zero()) return 0.0;
  if (order == 1) {
    std::vector<double> values = r.graph.forward<double>({}, x);
    std::vector<double> adj(x.size(), 0.0);
    r.graph.backward<double>(values, r.output, {}, adj);
    return adj[axis];
  }
  std::vector<DualValue> seeded(x.size());
  for (std::size_t k = 0; k < x.size(); ++k) seeded[k] = DualValue(x[k], k == axis ? 1.0 : 0.0);
  std::vector<DualValue> values = r.graph.forward<DualValue>({}, seeded);
  std::vector<DualValue> adj(x.size(), DualValue(0.0));
  r.graph.backward<DualValue>(values, r.output, {}, adj);
  return adj[axis].tangent;
}

std::vector<double> mixed_input_gradient(const ScalarFn& net, std::span<const double> x) {
  if (x.empty()) throw ArgumentError("mixed_input_gradient: need at least one input");
  Recorded r = record_inputs(net, x.size());
  std::vector<double> adj(x.size(), 0.0);
  if (r.output.is_zero()) return adj;
  std::vector<double> values = r.graph.forward<double>({}, x);
  r.graph.backward<double>(values, r.output, {}, adj);
  return adj;
}

Eigen::MatrixXd hessian(const ScalarFn& fn, std::span<const double> at, std::size_t max_dim) {
  const std::size_t n = at.size();
  if (n > max_dim) {
    throw ArgumentError("hessian: dimension " + std::to_string(n) + " exceeds the dense limit of " +
                        std::to_string(max_dim) + "; restrict the function to a parameter subspace");
  }
  Eigen::MatrixXd h = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(n));
  Recorded r = record_parameters(fn, n);
  if (r.output.is_zero()) return h;
  std::vector<DualValue> seeded(n);
  for (std::size_t i = 0; i < n; ++i) seeded[i] = DualValue(at[i]);
  std::vector<DualValue> adj(n);
  for (std::size_t j = 0; j < n; ++j) {
    seeded[j].tangent = 1.0;
    std::vector<DualValue> values = r.graph.forward<DualValue>(seeded, {});
    std::fill(adj.begin(), adj.end(), DualValue(0.0));
    r.graph.backward<DualValue>(values, r.output, adj, {});
    for (std::size_t i = 0; i < n; ++i) h(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = adj[i].tangent;
    seeded[j].tangent = 0.0;
  }
  return 0.5 * (h + h.transpose());
}

}  // namespace rpinn::ad

#pragma once

// Fully connected tanh networks with flat parameter vectors.
//
// Parameter layout per layer: weights row-major (fan_out x fan_in) followed by
// the fan_out biases; layers are stored input to output. Networks used by
// two-network problems are concatenated in a ParameterLayout.

#include <cstddef>
#include <cstdint>
#include <iosfwd>
#include <span>
#include <string>
#include <type_traits>
#include <vector>

#include <Eigen/Core>

#include "rpinn/autodiff.hpp"
#include "rpinn/errors.hpp"

namespace rpinn {

enum class Activation : std::uint8_t { tanh };

struct MlpSpec {
  std::size_t input_dim = 1;
  std::vector<std::size_t> hidden_widths;
  std::size_t output_dim = 1;
  Activation activation = Activation::tanh;

  std::size_t num_layers() const noexcept { return hidden_widths.size() + 1; }
  std::size_t fan_in(std::size_t layer) const;
  std::size_t fan_out(std::size_t layer) const;

  // Throws ArgumentError unless every width is >= 1.
  void validate() const;

  friend bool operator==(const MlpSpec&, const MlpSpec&) = default;
};

std::string describe(const MlpSpec& spec);  // e.g. "1-50-50-1"
MlpSpec parse_spec(const std::string& text);  // inverse of describe; throws IoError

std::size_t count_params(const MlpSpec& spec);

// One or more networks sharing a flat parameter vector (theta || phi).
class ParameterLayout {
 public:
  ParameterLayout() = default;
  explicit ParameterLayout(std::vector<MlpSpec> nets);
  // n free parameters without network structure (linear-in-parameter models).
  static ParameterLayout flat(std::size_t n);

  bool is_flat() const noexcept { return nets_.empty() && total() > 0; }

  const std::vector<MlpSpec>& nets() const noexcept { return nets_; }
  std::size_t num_nets() const noexcept { return nets_.size(); }
  std::size_t offset(std::size_t net) const { return offsets_.at(net); }
  std::size_t size(std::size_t net) const { return offsets_.at(net + 1) - offsets_.at(net); }
  std::size_t total() const noexcept { return offsets_.empty() ? 0 : offsets_.back(); }

  friend bool operator==(const ParameterLayout& a, const ParameterLayout& b) {
    return a.nets_ == b.nets_ && a.offsets_ == b.offsets_;
  }

 private:
  std::vector<MlpSpec> nets_;
  std::vector<std::size_t> offsets_{0};
};

struct ParameterVector {
  ParameterLayout layout;
  std::vector<double> values;

  // Throws ArgumentError if values.size() != layout.total().
  void validate() const;
  std::span<const double> net(std::size_t i) const { return std::span(values).subspan(layout.offset(i), layout.size(i)); }

  friend bool operator==(const ParameterVector&, const ParameterVector&) = default;
};

struct DenseLayer {
  Eigen::MatrixXd weights;  // fan_out x fan_in
  Eigen::VectorXd biases;
};

std::vector<DenseLayer> deflatten(const MlpSpec& spec, std::span<const double> params);
std::vector<double> flatten(const MlpSpec& spec, const std::vector<DenseLayer>& layers);

// Glorot-uniform weights in +-sqrt(6 / (fan_in + fan_out)), zero biases.
// Flat layouts are initialized from N(0, 1).
std::vector<double> init_params(const MlpSpec& spec, std::uint64_t seed);
ParameterVector init_params(const ParameterLayout& layout, std::uint64_t seed);

namespace detail {

template <class T>
struct is_taylor : std::false_type {};
template <class T, std::size_t D>
struct is_taylor<ad::Taylor2<T, D>> : std::true_type {};

template <class T, class P>
T affine_start(const P& bias) {
  if constexpr (is_taylor<T>::value) {
    return T::constant(bias);
  } else {
    return T(bias);
  }
}

template <class T, class P>
T multiply_add(const T& acc, const P& w, const T& a) {
  if constexpr (is_taylor<T>::value) {
    return acc + scale(a, w);
  } else {
    return acc + a * w;
  }
}

template <class T>
T activate(const T& z) {
  using std::tanh;
  return tanh(z);
}

}  // namespace detail

// Scalar network output. T is the activation type (double, ad::Var,
// ad::Taylor2<...>) and P the parameter type (double or ad::Var).
template <class T, class P>
T forward(const MlpSpec& spec, std::span<const P> params, std::span<const T> x) {
  if (x.size() != spec.input_dim) {
    throw ArgumentError("mlp forward: input has " + std::to_string(x.size()) + " components, network expects " +
                        std::to_string(spec.input_dim));
  }
  if (params.size() != count_params(spec)) throw ArgumentError("mlp forward: parameter count mismatch");
  std::vector<T> a(x.begin(), x.end());
  std::size_t pos = 0;
  for (std::size_t l = 0; l < spec.num_layers(); ++l) {
    const std::size_t in = spec.fan_in(l);
    const std::size_t out = spec.fan_out(l);
    const std::size_t bias_pos = pos + in * out;
    std::vector<T> z;
    z.reserve(out);
    for (std::size_t o = 0; o < out; ++o) {
      T acc = detail::affine_start<T>(params[bias_pos + o]);
      for (std::size_t i = 0; i < in; ++i) acc = detail::multiply_add(acc, params[pos + o * in + i], a[i]);
      z.push_back(l + 1 < spec.num_layers() ? detail::activate(acc) : acc);
    }
    a = std::move(z);
    pos = bias_pos + out;
  }
  return a.front();
}

inline double forward(const MlpSpec& spec, std::span<const double> params, std::span<const double> x) {
  return forward<double, double>(spec, params, x);
}

// Batched evaluation of a network and its input derivatives at many points.
//
// order 0: values; order 1: + first derivatives along every input axis;
// order 2: + pure second derivatives along every input axis. backward()
// accumulates the parameter gradient of sum(adjoint * output) over all
// returned quantities.
class NetworkTape {
 public:
  NetworkTape(const MlpSpec& spec, std::span<const double> params, const Eigen::MatrixXd& points, int order);

  Eigen::Index num_points() const noexcept { return value_.size(); }
  int order() const noexcept { return order_; }
  const Eigen::RowVectorXd& value() const noexcept { return value_; }
  const Eigen::RowVectorXd& first(std::size_t axis) const { return first_.at(axis); }
  const Eigen::RowVectorXd& second(std::size_t axis) const { return second_.at(axis); }

  struct Adjoint {
    Eigen::RowVectorXd value;                // empty means zero
    std::vector<Eigen::RowVectorXd> first;   // per axis; empty vector/entries mean zero
    std::vector<Eigen::RowVectorXd> second;
  };

  // grad has count_params(spec) entries; contributions are added.
  void backward(const Adjoint& adjoint, std::span<double> grad) const;

 private:
  struct Jet {
    Eigen::MatrixXd value;
    std::vector<Eigen::MatrixXd> first;
    std::vector<Eigen::MatrixXd> second;
  };
  struct HiddenCache {
    std::vector<Eigen::MatrixXd> dz;  // W * first of previous layer
    std::vector<Eigen::MatrixXd> sz;  // W * second of previous layer
    Eigen::MatrixXd t1;               // tanh'
    Eigen::MatrixXd t2;               // tanh''
  };

  MlpSpec spec_;
  int order_;
  std::vector<DenseLayer> layers_;
  std::vector<Jet> acts_;  // acts_[0] = inputs, acts_[l] = output of layer l-1
  std::vector<HiddenCache> hidden_;
  Eigen::RowVectorXd value_;
  std::vector<Eigen::RowVectorXd> first_;
  std::vector<Eigen::RowVectorXd> second_;
};

// Binary form: magic "RPNNPV01", u32 net count, per net (u32 input_dim,
// u32 hidden count, u32 widths..., u32 output_dim), u64 value count, then the
// values as little-endian IEEE-754 doubles. A net count of 0 means a flat
// layout of `value count` parameters.
void write_binary(std::ostream& out, const ParameterVector& pv);
ParameterVector read_binary(std::istream& in);

// Text form: "layout 1-50-50-1[;2-60-60-1]" (or "layout flat") line, "count N" line, then one
// value per line in shortest round-trip form.
void write_text(std::ostream& out, const ParameterVector& pv);
ParameterVector read_text(std::istream& in);

}  // namespace rpinn

#include "rpinn/mlp.hpp"

#include <bit>
#include <charconv>
#include <cmath>
#include <istream>
#include <ostream>
#include <random>
#include <sstream>

namespace rpinn {

std::size_t MlpSpec::fan_in(std::size_t layer) const {
  if (layer >= num_layers()) throw ArgumentError("mlp: layer index out of range");
  return layer == 0 ? input_dim : hidden_widths[layer - 1];
}

std::size_t MlpSpec::fan_out(std::size_t layer) const {
  if (layer >= num_layers()) throw ArgumentError("mlp: layer index out of range");
  return layer + 1 == num_layers() ? output_dim : hidden_widths[layer];
}

void MlpSpec::validate() const {
  if (input_dim < 1) throw ArgumentError("mlp: input_dim must be >= 1");
  if (output_dim != 1) throw ArgumentError("mlp: only scalar-output networks are supported");
  for (std::size_t w : hidden_widths) {
    if (w < 1) throw ArgumentError("mlp: hidden widths must be >= 1");
  }
}

std::string describe(const MlpSpec& spec) {
  std::string s = std::to_string(spec.input_dim);
  for (std::size_t w : spec.hidden_widths) s += "-" + std::to_string(w);
  s += "-" + std::to_string(spec.output_dim);
  return s;
}

std::size_t count_params(const MlpSpec& spec) {
  std::size_t n = 0;
  for (std::size_t l = 0; l < spec.num_layers(); ++l) n += spec.fan_in(l) * spec.fan_out(l) + spec.fan_out(l);
  return n;
}

ParameterLayout::ParameterLayout(std::vector<MlpSpec> nets) : nets_(std::move(nets)) {
  for (const MlpSpec& s : nets_) {
    s.validate();
    offsets_.push_back(offsets_.back() + count_params(s));
  }
}

ParameterLayout ParameterLayout::flat(std::size_t n) {
  if (n == 0) throw ArgumentError("flat layout needs at least one parameter");
  ParameterLayout l;
  l.offsets_.push_back(n);
  return l;
}

void ParameterVector::validate() const {
  if (values.size() != layout.total()) {
    throw ArgumentError("parameter vector has " + std::to_string(values.size()) + " values, layout expects " +
                        std::to_string(layout.total()));
  }
}

std::vector<DenseLayer> deflatten(const MlpSpec& spec, std::span<const double> params) {
  if (params.size() != count_params(spec)) throw ArgumentError("deflatten: parameter count mismatch");
  std::vector<DenseLayer> layers;
  layers.reserve(spec.num_layers());
  std::size_t pos = 0;
  for (std::size_t l = 0; l < spec.num_layers(); ++l) {
    const auto in = static_cast<Eigen::Index>(spec.fan_in(l));
    const auto out = static_cast<Eigen::Index>(spec.fan_out(l));
    DenseLayer layer;
    layer.weights = Eigen::Map<const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>(
        params.data() + pos, out, in);
    pos += static_cast<std::size_t>(in * out);
    layer.biases = Eigen::Map<const Eigen::VectorXd>(params.data() + pos, out);
    pos += static_cast<std::size_t>(out);
    layers.push_back(std::move(layer));
  }
  return layers;
}

std::vector<double> flatten(const MlpSpec& spec, const std::vector<DenseLayer>& layers) {
  if (layers.size() != spec.num_layers()) throw ArgumentError("flatten: layer count mismatch");
  std::vector<double> params;
  params.reserve(count_params(spec));
  for (std::size_t l = 0; l < layers.size(); ++l) {
    const DenseLayer& layer = layers[l];
    if (static_cast<std::size_t>(layer.weights.rows()) != spec.fan_out(l) ||
        static_cast<std::size_t>(layer.weights.cols()) != spec.fan_in(l) ||
        static_cast<std::size_t>(layer.biases.size()) != spec.fan_out(l)) {
      throw ArgumentError("flatten: layer " + std::to_string(l) + " has the wrong shape");
    }
    for (Eigen::Index o = 0; o < layer.weights.rows(); ++o) {
      for (Eigen::Index i = 0; i < layer.weights.cols(); ++i) params.push_back(layer.weights(o, i));
    }
    for (Eigen::Index o = 0; o < layer.biases.size(); ++o) params.push_back(layer.biases(o));
  }
  return params;
}

namespace {

void glorot_fill(const MlpSpec& spec, std::mt19937_64& rng, std::vector<double>& out) {
  for (std::size_t l = 0; l < spec.num_layers(); ++l) {
    const std::size_t in = spec.fan_in(l);
    const std::size_t fo = spec.fan_out(l);
    const double bound = std::sqrt(6.0 / static_cast<double>(in + fo));
    std::uniform_real_distribution<double> dist(-bound, bound);
    for (std::size_t k = 0; k < in * fo; ++k) out.push_back(dist(rng));
    out.insert(out.end(), fo, 0.0);
  }
}

}  // namespace

std::vector<double> init_params(const MlpSpec& spec, std::uint64_t seed) {
  spec.validate();
  std::mt19937_64 rng(seed);
  std::vector<double> out;
  out.reserve(count_params(spec));
  glorot_fill(spec, rng, out);
  return out;
}

ParameterVector init_params(const ParameterLayout& layout, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  ParameterVector pv{layout, {}};
  pv.values.reserve(layout.total());
  for (const MlpSpec& s : layout.nets()) glorot_fill(s, rng, pv.values);
  if (layout.is_flat()) {
    std::normal_distribution<double> normal(0.0, 1.0);
    for (std::size_t i = 0; i < layout.total(); ++i) pv.values.push_back(normal(rng));
  }
  return pv;
}

NetworkTape::NetworkTape(const MlpSpec& spec, std::span<const double> params, const Eigen::MatrixXd& points,
                         int order)
    : spec_(spec), order_(order), layers_(deflatten(spec, params)) {
  if (order < 0 || order > 2) throw ArgumentError("network tape: order must be 0, 1 or 2");
  if (static_cast<std::size_t>(points.rows()) != spec.input_dim) {
    throw ArgumentError("network tape: points have " + std::to_string(points.rows()) + " rows, network expects " +
                        std::to_string(spec.input_dim));
  }
  const std::size_t dims = spec.input_dim;
  const Eigen::Index n = points.cols();

  Jet input;
  input.value = points;
  if (order >= 1) {
    for (std::size_t k = 0; k < dims; ++k) {
      Eigen::MatrixXd e = Eigen::MatrixXd::Zero(points.rows(), n);
      e.row(static_cast<Eigen::Index>(k)).setOnes();
      input.first.push_back(std::move(e));
    }
  }
  if (order >= 2) input.second.assign(dims, Eigen::MatrixXd::Zero(points.rows(), n));
  acts_.push_back(std::move(input));

  const std::size_t hidden = spec.hidden_widths.size();
  hidden_.resize(hidden);
  for (std::size_t l = 0; l < layers_.size(); ++l) {
    const DenseLayer& layer = layers_[l];
    const Jet& prev = acts_.back();
    Jet next;
    Eigen::MatrixXd z = layer.weights * prev.value;
    z.colwise() += layer.biases;
    if (l < hidden) {
      HiddenCache& c = hidden_[l];
      next.value = z.array().tanh().matrix();
      c.t1 = (1.0 - next.value.array().square()).matrix();
      c.t2 = (-2.0 * next.value.array() * c.t1.array()).matrix();
      for (std::size_t k = 0; k < prev.first.size(); ++k) {
        c.dz.push_back(layer.weights * prev.first[k]);
        next.first.push_back((c.t1.array() * c.dz[k].array()).matrix());
      }
      for (std::size_t k = 0; k < prev.second.size(); ++k) {
        c.sz.push_back(layer.weights * prev.second[k]);
        next.second.push_back(
            (c.t1.array() * c.sz[k].array() + c.t2.array() * c.dz[k].array().square()).matrix());
      }
    } else {
      next.value = std::move(z);
      for (const auto& d : prev.first) next.first.push_back(layer.weights * d);
      for (const auto& s : prev.second) next.second.push_back(layer.weights * s);
    }
    acts_.push_back(std::move(next));
  }

  const Jet& out = acts_.back();
  value_ = out.value.row(0);
  for (const auto& d : out.first) first_.push_back(d.row(0));
  for (const auto& s : out.second) second_.push_back(s.row(0));
}

void NetworkTape::backward(const Adjoint& adjoint, std::span<double> grad) const {
  if (grad.size() != count_params(spec_)) throw ArgumentError("network tape: gradient buffer size mismatch");
  const Eigen::Index n = num_points();
  const std::size_t dims = first_.size();
  auto valid = [n](const Eigen::RowVectorXd& v) {
    if (v.size() != 0 && v.size() != n) throw ArgumentError("network tape: adjoint length mismatch");
    return v.size() == n;
  };

  // Adjoints of the current layer's outputs, 1 x n at the top.
  Eigen::MatrixXd g_value = Eigen::MatrixXd::Zero(1, n);
  std::vector<Eigen::MatrixXd> g_first(dims, Eigen::MatrixXd::Zero(1, n));
  std::vector<Eigen::MatrixXd> g_second(second_.size(), Eigen::MatrixXd::Zero(1, n));
  if (valid(adjoint.value)) g_value.row(0) = adjoint.value;
  for (std::size_t k = 0; k < adjoint.first.size() && k < dims; ++k) {
    if (valid(adjoint.first[k])) g_first[k].row(0) = adjoint.first[k];
  }
  for (std::size_t k = 0; k < adjoint.second.size() && k < second_.size(); ++k) {
    if (valid(adjoint.second[k])) g_second[k].row(0) = adjoint.second[k];
  }

  // Gradient offsets of each layer in the flat vector.
  std::vector<std::size_t> offsets;
  std::size_t pos = 0;
  for (std::size_t l = 0; l < layers_.size(); ++l) {
    offsets.push_back(pos);
    pos += spec_.fan_in(l) * spec_.fan_out(l) + spec_.fan_out(l);
  }

  const std::size_t hidden = spec_.hidden_widths.size();
  for (std::size_t l = layers_.size(); l-- > 0;) {
    const DenseLayer& layer = layers_[l];
    const Jet& prev = acts_[l];
    Eigen::MatrixXd gz;
    std::vector<Eigen::MatrixXd> gdz(g_first.size());
    std::vector<Eigen::MatrixXd> gsz(g_second.size());
    if (l < hidden) {
      const HiddenCache& c = hidden_[l];
      const Eigen::ArrayXXd& a = acts_[l + 1].value.array();
      gz = (g_value.array() * c.t1.array()).matrix();
      Eigen::ArrayXXd t3;
      if (!g_second.empty()) t3 = -2.0 * (c.t1.array().square() + a * c.t2.array());
      for (std::size_t k = 0; k < g_first.size(); ++k) {
        gz.array() += g_first[k].array() * c.dz[k].array() * c.t2.array();
        gdz[k] = (g_first[k].array() * c.t1.array()).matrix();
      }
      for (std::size_t k = 0; k < g_second.size(); ++k) {
        gz.array() += g_second[k].array() * (c.sz[k].array() * c.t2.array() + c.dz[k].array().square() * t3);
        gdz[k].array() += 2.0 * g_second[k].array() * c.t2.array() * c.dz[k].array();
        gsz[k] = (g_second[k].array() * c.t1.array()).matrix();
      }
    } else {
      gz = g_value;
      gdz = g_first;
      gsz = g_second;
    }

    Eigen::MatrixXd gw = gz * prev.value.transpose();
    for (std::size_t k = 0; k < gdz.size(); ++k) gw.noalias() += gdz[k] * prev.first[k].transpose();
    for (std::size_t k = 0; k < gsz.size(); ++k) gw.noalias() += gsz[k] * prev.second[k].transpose();
    Eigen::VectorXd gb = gz.rowwise().sum();

    double* dst = grad.data() + offsets[l];
    for (Eigen::Index o = 0; o < gw.rows(); ++o) {
      for (Eigen::Index i = 0; i < gw.cols(); ++i) *dst++ += gw(o, i);
    }
    for (Eigen::Index o = 0; o < gb.size(); ++o) *dst++ += gb(o);

    if (l == 0) break;
    g_value = layer.weights.transpose() * gz;
    for (std::size_t k = 0; k < g_first.size(); ++k) g_first[k] = layer.weights.transpose() * gdz[k];
    for (std::size_t k = 0; k < g_second.size(); ++k) g_second[k] = layer.weights.transpose() * gsz[k];
  }
}

namespace {

constexpr char kMagic[8] = {'R', 'P', 'N', 'N', 'P', 'V', '0', '1'};

void put_u32(std::ostream& out, std::uint32_t v) {
  char b[4];
  for (int i = 0; i < 4; ++i) b[i] = static_cast<char>((v >> (8 * i)) & 0xffu);
  out.write(b, 4);
}

void put_u64(std::ostream& out, std::uint64_t v) {
  char b[8];
  for (int i = 0; i < 8; ++i) b[i] = static_cast<char>((v >> (8 * i)) & 0xffu);
  out.write(b, 8);
}

std::uint32_t get_u32(std::istream& in) {
  unsigned char b[4];
  if (!in.read(reinterpret_cast<char*>(b), 4)) throw IoError("parameter file truncated");
  std::uint32_t v = 0;
  for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(b[i]) << (8 * i);
  return v;
}

std::uint64_t get_u64(std::istream& in) {
  unsigned char b[8];
  if (!in.read(reinterpret_cast<char*>(b), 8)) throw IoError("parameter file truncated");
  std::uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(b[i]) << (8 * i);
  return v;
}

}  // namespace

MlpSpec parse_spec(const std::string& text) {
  MlpSpec spec;
  std::vector<std::size_t> dims;
  std::stringstream ss(text);
  std::string tok;
  while (std::getline(ss, tok, '-')) {
    if (tok.empty() || tok.find_first_not_of("0123456789") != std::string::npos) {
      throw IoError("bad network description '" + text + "'");
    }
    dims.push_back(std::stoul(tok));
  }
  if (dims.size() < 2) throw IoError("bad network description '" + text + "'");
  spec.input_dim = dims.front();
  spec.output_dim = dims.back();
  spec.hidden_widths.assign(dims.begin() + 1, dims.end() - 1);
  return spec;
}

void write_binary(std::ostream& out, const ParameterVector& pv) {
  pv.validate();
  out.write(kMagic, sizeof kMagic);
  put_u32(out, static_cast<std::uint32_t>(pv.layout.num_nets()));
  for (const MlpSpec& s : pv.layout.nets()) {
    put_u32(out, static_cast<std::uint32_t>(s.input_dim));
    put_u32(out, static_cast<std::uint32_t>(s.hidden_widths.size()));
    for (std::size_t w : s.hidden_widths) put_u32(out, static_cast<std::uint32_t>(w));
    put_u32(out, static_cast<std::uint32_t>(s.output_dim));
  }
  put_u64(out, pv.values.size());
  for (double v : pv.values) put_u64(out, std::bit_cast<std::uint64_t>(v));
  if (!out) throw IoError("failed to write parameter vector");
}

ParameterVector read_binary(std::istream& in) {
  char magic[8];
  if (!in.read(magic, sizeof magic) || !std::equal(magic, magic + 8, kMagic)) {
    throw IoError("not a parameter vector file (bad magic)");
  }
  const std::uint32_t nets = get_u32(in);
  std::vector<MlpSpec> specs(nets);
  for (MlpSpec& s : specs) {
    s.input_dim = get_u32(in);
    const std::uint32_t hidden = get_u32(in);
    for (std::uint32_t i = 0; i < hidden; ++i) s.hidden_widths.push_back(get_u32(in));
    s.output_dim = get_u32(in);
  }
  const std::uint64_t count = get_u64(in);
  if (!in) throw IoError("parameter vector file truncated");
  ParameterVector pv{nets == 0 ? ParameterLayout::flat(count) : ParameterLayout(std::move(specs)), {}};
  if (count != pv.layout.total()) throw IoError("parameter count does not match the recorded layout");
  pv.values.resize(count);
  for (double& v : pv.values) v = std::bit_cast<double>(get_u64(in));
  return pv;
}

void write_text(std::ostream& out, const ParameterVector& pv) {
  pv.validate();
  out << "layout ";
  if (pv.layout.is_flat()) out << "flat";
  for (std::size_t i = 0; i < pv.layout.num_nets(); ++i) out << (i ? ";" : "") << describe(pv.layout.nets()[i]);
  out << "\ncount " << pv.values.size() << "\n";
  char buf[32];
  for (double v : pv.values) {
    auto [end, ec] = std::to_chars(buf, buf + sizeof buf, v);
    out.write(buf, end - buf);
    out.put('\n');
  }
  if (!out) throw IoError("failed to write parameter vector text");
}

ParameterVector read_text(std::istream& in) {
  std::string key, layout_text;
  if (!(in >> key >> layout_text) || key != "layout") throw IoError("parameter text: missing layout line");
  std::vector<MlpSpec> specs;
  const bool flat = layout_text == "flat";
  std::stringstream ls(flat ? std::string() : layout_text);
  std::string part;
  while (std::getline(ls, part, ';')) specs.push_back(parse_spec(part));
  std::size_t count = 0;
  if (!(in >> key >> count) || key != "count") throw IoError("parameter text: missing count line");
  ParameterVector pv{flat ? ParameterLayout::flat(count) : ParameterLayout(std::move(specs)), {}};
  if (count != pv.layout.total()) throw IoError("parameter text: count does not match layout");
  pv.values.resize(count);
  std::string tok;
  for (double& v : pv.values) {
    if (!(in >> tok)) throw IoError("parameter text truncated");
    auto [ptr, ec] = std::from_chars(tok.data(), tok.data() + tok.size(), v);
    if (ec != std::errc()) throw IoError("parameter text: bad number '" + tok + "'");
  }
  return pv;
}

}  // namespace rpinn

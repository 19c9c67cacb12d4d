#include "rpinn/problems.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <numeric>
#include <random>
#include <utility>

#include "rpinn/errors.hpp"
#include "rpinn/random.hpp"

namespace rpinn {

std::string to_string(ProblemId id) {
  switch (id) {
    case ProblemId::linear_poisson: return "linear_poisson";
    case ProblemId::nonlinear_poisson: return "nonlinear_poisson";
    case ProblemId::diffusion_2d: return "diffusion_2d";
    case ProblemId::linear_model: return "linear_model";
  }
  return "unknown";
}

ProblemId parse_problem_id(const std::string& name) {
  for (ProblemId id : {ProblemId::linear_poisson, ProblemId::nonlinear_poisson, ProblemId::diffusion_2d,
                       ProblemId::linear_model}) {
    if (to_string(id) == name) return id;
  }
  throw ArgumentError("unknown problem '" + name + "' (expected linear_poisson, nonlinear_poisson or diffusion_2d)");
}

PoissonValue ref_linear_poisson(double x) {
  const double s = std::sin(std::numbers::pi * x);
  return {s, s};
}

PoissonValue ref_nonlinear_poisson(double x) {
  const double s = std::sin(6.0 * x);
  const double c = std::cos(6.0 * x);
  const double u = s * s * s;
  return {u, kNonlinearLambda * (-108.0 * s * s * s + 216.0 * s * c * c) + kNonlinearK * std::tanh(u)};
}

namespace {

using Jet1 = ad::Taylor2<double, 1>;
using Jet2 = ad::Taylor2<double, 2>;

Jet1 jet_1d(const MlpSpec& spec, std::span<const double> params, double x) {
  if (spec.input_dim != 1) throw ArgumentError("1D residual needs a single-input network");
  const Jet1 in = Jet1::variable(x, 0, 1.0);
  return forward<Jet1, double>(spec, params, std::span(&in, 1));
}

Jet2 jet_2d(const MlpSpec& spec, std::span<const double> params, const Point& x) {
  if (spec.input_dim != 2) throw ArgumentError("2D residual needs a two-input network");
  const std::array<Jet2, 2> in{Jet2::variable(x[0], 0, 1.0), Jet2::variable(x[1], 1, 1.0)};
  return forward<Jet2, double>(spec, params, std::span<const Jet2>(in));
}

}  // namespace

double residual_linear_poisson(const MlpSpec& spec, std::span<const double> params, double x) {
  return kLinearPoissonK * jet_1d(spec, params, x).second[0];
}

double residual_nonlinear_poisson(const MlpSpec& spec, std::span<const double> params, double x) {
  const Jet1 u = jet_1d(spec, params, x);
  return kNonlinearLambda * u.second[0] + kNonlinearK * std::tanh(u.value);
}

double residual_diffusion(const MlpSpec& h_spec, std::span<const double> h_params, const MlpSpec& y_spec,
                          std::span<const double> y_params, const Point& x) {
  const Jet2 h = jet_2d(h_spec, h_params, x);
  const Jet2 y = jet_2d(y_spec, y_params, x);
  return std::exp(y.value) *
         (h.second[0] + h.second[1] + y.first[0] * h.first[0] + y.first[1] * h.first[1]);
}

double residual_neumann(const MlpSpec& h_spec, std::span<const double> h_params, const MlpSpec& y_spec,
                        std::span<const double> y_params, const Point& x, std::size_t axis) {
  if (axis > 1) throw ArgumentError("residual_neumann: axis must be 0 or 1");
  const Jet2 h = jet_2d(h_spec, h_params, x);
  const double y = forward(y_spec, y_params, std::span<const double>(x.data(), 2));
  return -std::exp(y) * h.first[axis];
}

std::vector<double> generate_measurements(std::span<const double> reference, double sigma, std::uint64_t seed) {
  if (!(sigma >= 0.0)) throw ArgumentError("measurement noise sigma must be >= 0");
  auto rng = make_rng(seed, Stream::measurement);
  std::normal_distribution<double> normal(0.0, 1.0);
  std::vector<double> out(reference.begin(), reference.end());
  for (double& v : out) v += sigma * normal(rng);
  return out;
}

namespace {

std::vector<double> values_of(const std::vector<Observation>& obs) {
  std::vector<double> v;
  v.reserve(obs.size());
  for (const auto& o : obs) v.push_back(o.value);
  return v;
}

// Adds noise to every observation class in a fixed order from one stream.
void add_noise(std::initializer_list<std::vector<Observation>*> classes, double sigma, std::uint64_t seed) {
  std::vector<double> all;
  for (auto* c : classes) {
    auto v = values_of(*c);
    all.insert(all.end(), v.begin(), v.end());
  }
  const auto noisy = generate_measurements(all, sigma, seed);
  std::size_t k = 0;
  for (auto* c : classes) {
    for (auto& o : *c) o.value = noisy[k++];
  }
}

std::vector<double> linspace(double a, double b, std::size_t n) {
  std::vector<double> out(n);
  if (n == 1) {
    out[0] = 0.5 * (a + b);
    return out;
  }
  for (std::size_t i = 0; i < n; ++i) out[i] = a + (b - a) * static_cast<double>(i) / static_cast<double>(n - 1);
  return out;
}

std::pair<double, double> poisson_domain(ProblemId id) {
  if (id == ProblemId::linear_poisson) return {-1.0, 1.0};
  if (id == ProblemId::nonlinear_poisson) return {-kNonlinearHalfWidth, kNonlinearHalfWidth};
  throw ArgumentError("not a Poisson problem: " + to_string(id));
}

PoissonValue poisson_reference(ProblemId id, double x) {
  return id == ProblemId::linear_poisson ? ref_linear_poisson(x) : ref_nonlinear_poisson(x);
}

}  // namespace

Dataset make_poisson_dataset(ProblemId problem, std::size_t n_f, double sigma, std::uint64_t seed) {
  const auto [a, b] = poisson_domain(problem);
  if (n_f == 0) throw ArgumentError("n_f must be >= 1");
  if (!(sigma >= 0.0)) throw ArgumentError("sigma must be >= 0");
  Dataset d;
  d.problem = problem;
  d.noise_sigma = sigma;
  d.seed = seed;
  for (double x : linspace(a, b, n_f)) d.y_obs.push_back({{x, 0.0}, poisson_reference(problem, x).f});
  for (double x : {a, b}) d.dirichlet_obs.push_back({{x, 0.0}, poisson_reference(problem, x).u});
  add_noise({&d.y_obs, &d.dirichlet_obs}, sigma, seed);
  return d;
}

void DiffusionSetup::validate() const {
  if (grid.nx == 0 || grid.ny == 0) throw ArgumentError("grid must have at least one cell per axis");
  if (!(grid.length_x > 0.0 && grid.length_y > 0.0)) throw ArgumentError("domain lengths must be > 0");
  if (n_obs == 0 || n_obs > grid.cells()) throw ArgumentError("n_obs must be in [1, number of grid cells]");
  if (n_r == 0 || n_dbr == 0 || n_nbl == 0 || n_nbt == 0 || n_nbb == 0) {
    throw ArgumentError("residual and boundary point counts must be >= 1");
  }
  if (!(sigma >= 0.0)) throw ArgumentError("sigma must be >= 0");
  prior.validate();
}

DiffusionData make_diffusion_dataset(const DiffusionSetup& s) {
  s.validate();
  DiffusionData out;
  out.y_ref = sample_grf(s.prior, s.grid, s.seed);
  GridField k = out.y_ref;
  k.values = k.values.array().exp().matrix();
  out.h_ref = solve_diffusion_fd(k, s.head, s.flux);

  Dataset& d = out.data;
  d.problem = ProblemId::diffusion_2d;
  d.noise_sigma = s.sigma;
  d.seed = s.seed;
  const double lx = s.grid.length_x;
  const double ly = s.grid.length_y;

  // Observation cells drawn without replacement, shared by y and h.
  auto rng = make_rng(s.seed, Stream::locations);
  std::vector<std::size_t> cells(s.grid.cells());
  std::iota(cells.begin(), cells.end(), std::size_t{0});
  for (std::size_t i = 0; i < s.n_obs; ++i) {
    std::uniform_int_distribution<std::size_t> pick(i, cells.size() - 1);
    std::swap(cells[i], cells[pick(rng)]);
  }
  for (std::size_t n = 0; n < s.n_obs; ++n) {
    const std::size_t i = cells[n] % s.grid.nx;
    const std::size_t j = cells[n] / s.grid.nx;
    const Point x = s.grid.center(i, j);
    d.y_obs.push_back({x, out.y_ref(i, j)});
    d.u_obs.push_back({x, out.h_ref(i, j)});
  }
  for (double x2 : linspace(0.0, ly, s.n_dbr)) d.dirichlet_obs.push_back({{lx, x2}, s.head});
  for (double x2 : linspace(0.0, ly, s.n_nbl)) d.neumann_obs.push_back({{0.0, x2}, s.flux});
  std::uniform_real_distribution<double> ux(0.0, lx), uy(0.0, ly);
  for (std::size_t n = 0; n < s.n_r; ++n) {
    const double a = ux(rng);
    d.residual_points.push_back({a, uy(rng)});
  }
  for (double x1 : linspace(0.0, lx, s.n_nbt)) d.neumann_top_points.push_back({x1, ly});
  for (double x1 : linspace(0.0, lx, s.n_nbb)) d.neumann_bottom_points.push_back({x1, 0.0});

  add_noise({&d.y_obs, &d.u_obs, &d.dirichlet_obs, &d.neumann_obs}, s.sigma, s.seed);
  return out;
}

namespace {

Eigen::MatrixXd points_matrix(const std::vector<Point>& pts, std::size_t dims) {
  Eigen::MatrixXd m(static_cast<Eigen::Index>(dims), static_cast<Eigen::Index>(pts.size()));
  for (std::size_t i = 0; i < pts.size(); ++i) {
    for (std::size_t k = 0; k < dims; ++k) m(static_cast<Eigen::Index>(k), static_cast<Eigen::Index>(i)) = pts[i][k];
  }
  return m;
}

std::vector<Point> locations(const std::vector<Observation>& obs) {
  std::vector<Point> p;
  p.reserve(obs.size());
  for (const auto& o : obs) p.push_back(o.x);
  return p;
}

Eigen::RowVectorXd targets(const std::vector<Observation>& obs) {
  Eigen::RowVectorXd v(static_cast<Eigen::Index>(obs.size()));
  for (std::size_t i = 0; i < obs.size(); ++i) v(static_cast<Eigen::Index>(i)) = obs[i].value;
  return v;
}

void check_adjoints(const std::vector<Eigen::VectorXd>& adj, const std::vector<Eigen::VectorXd>& res) {
  if (adj.size() != res.size()) throw ArgumentError("pullback: expected one adjoint per term");
  for (std::size_t t = 0; t < adj.size(); ++t) {
    if (adj[t].size() != res[t].size()) throw ArgumentError("pullback: adjoint length mismatch in term " + std::to_string(t));
  }
}

template <std::size_t D>
std::array<ad::Taylor2<ad::Var, D>, D> graph_inputs(ad::Graph& g, const Point& x) {
  std::array<ad::Taylor2<ad::Var, D>, D> in;
  for (std::size_t k = 0; k < D; ++k) in[k] = ad::Taylor2<ad::Var, D>::variable(g.constant(x[k]), k, g.constant(1.0));
  return in;
}

template <std::size_t D>
ad::Taylor2<ad::Var, D> graph_jet(ad::Graph& g, const MlpSpec& spec, std::span<const ad::Var> params, const Point& x) {
  const auto in = graph_inputs<D>(g, x);
  return forward<ad::Taylor2<ad::Var, D>, ad::Var>(spec, params, std::span<const ad::Taylor2<ad::Var, D>>(in));
}

ad::Var graph_value(ad::Graph& g, const MlpSpec& spec, std::span<const ad::Var> params, const Point& x) {
  std::vector<ad::Var> in;
  for (std::size_t k = 0; k < spec.input_dim; ++k) in.push_back(g.constant(x[k]));
  return forward<ad::Var, ad::Var>(spec, params, std::span<const ad::Var>(in));
}

std::vector<Point> uniform_1d(double a, double b, std::size_t n) {
  std::vector<Point> p;
  for (double x : linspace(a, b, n)) p.push_back({x, 0.0});
  return p;
}

// ---- 1D Poisson -------------------------------------------------------------

class PoissonProblem final : public InverseProblem {
 public:
  PoissonProblem(const Dataset& data, const MlpSpec& spec)
      : id_(data.problem), spec_(spec), layout_({spec}) {
    if (spec.input_dim != 1) throw ArgumentError("Poisson problems need a single-input network");
    poisson_domain(id_);
    if (data.y_obs.empty() || data.dirichlet_obs.empty()) throw ArgumentError("Poisson dataset needs f and boundary data");
    f_points_ = points_matrix(locations(data.y_obs), 1);
    b_points_ = points_matrix(locations(data.dirichlet_obs), 1);
    f_target_ = targets(data.y_obs);
    b_target_ = targets(data.dirichlet_obs);
  }

  ProblemId id() const override { return id_; }
  const ParameterLayout& layout() const override { return layout_; }
  std::vector<TermInfo> terms() const override {
    return {{"f", static_cast<std::size_t>(f_target_.size())}, {"b", static_cast<std::size_t>(b_target_.size())}};
  }
  std::string anchor_term() const override { return "f"; }

  class Tape final : public ResidualTape {
   public:
    Tape(const PoissonProblem& p, std::span<const double> params)
        : p_(p), f_(p.spec_, params, p.f_points_, 2), b_(p.spec_, params, p.b_points_, 0) {
      Eigen::RowVectorXd fhat;
      if (p.id_ == ProblemId::linear_poisson) {
        fhat = kLinearPoissonK * f_.second(0);
      } else {
        tanh_u_ = f_.value().array().tanh();
        fhat = kNonlinearLambda * f_.second(0).array() + kNonlinearK * tanh_u_.array();
      }
      residuals_.push_back((fhat - p.f_target_).transpose());
      residuals_.push_back((b_.value() - p.b_target_).transpose());
    }

    void pullback(const std::vector<Eigen::VectorXd>& adj, std::span<double> grad) const override {
      check_adjoints(adj, residuals_);
      NetworkTape::Adjoint fa;
      fa.second.resize(1);
      if (p_.id_ == ProblemId::linear_poisson) {
        fa.second[0] = kLinearPoissonK * adj[0].transpose();
      } else {
        fa.second[0] = kNonlinearLambda * adj[0].transpose();
        fa.value = (kNonlinearK * adj[0].transpose().array() * (1.0 - tanh_u_.array().square())).matrix();
      }
      f_.backward(fa, grad);
      NetworkTape::Adjoint ba;
      ba.value = adj[1].transpose();
      b_.backward(ba, grad);
    }

   private:
    const PoissonProblem& p_;
    NetworkTape f_;
    NetworkTape b_;
    Eigen::RowVectorXd tanh_u_;
  };

  std::unique_ptr<ResidualTape> record(std::span<const double> params) const override {
    if (params.size() != layout_.total()) throw ArgumentError("parameter vector does not match the problem layout");
    return std::make_unique<Tape>(*this, params);
  }

  std::vector<std::vector<ad::Var>> residuals_graph(ad::Graph& g, std::span<const ad::Var> params) const override {
    std::vector<std::vector<ad::Var>> out(2);
    for (Eigen::Index i = 0; i < f_points_.cols(); ++i) {
      const auto u = graph_jet<1>(g, spec_, params, {f_points_(0, i), 0.0});
      ad::Var fhat = id_ == ProblemId::linear_poisson ? kLinearPoissonK * u.second[0]
                                                      : kNonlinearLambda * u.second[0] + kNonlinearK * tanh(u.value);
      out[0].push_back(fhat - f_target_(i));
    }
    for (Eigen::Index i = 0; i < b_points_.cols(); ++i) {
      out[1].push_back(graph_value(g, spec_, params, {b_points_(0, i), 0.0}) - b_target_(i));
    }
    return out;
  }

  std::vector<std::string> fields() const override { return {"u", "f"}; }
  std::vector<Point> eval_points() const override {
    const auto [a, b] = poisson_domain(id_);
    return uniform_1d(a, b, 101);
  }

  Eigen::VectorXd predict(const std::string& field, std::span<const double> params,
                          const std::vector<Point>& points) const override {
    if (field == "u") return NetworkTape(spec_, params, points_matrix(points, 1), 0).value().transpose();
    if (field == "f") {
      NetworkTape t(spec_, params, points_matrix(points, 1), 2);
      if (id_ == ProblemId::linear_poisson) return (kLinearPoissonK * t.second(0)).transpose();
      return (kNonlinearLambda * t.second(0).array() + kNonlinearK * t.value().array().tanh()).matrix().transpose();
    }
    throw ArgumentError("unknown field '" + field + "' (expected u or f)");
  }

  Eigen::VectorXd reference(const std::string& field, const std::vector<Point>& points) const override {
    if (field != "u" && field != "f") throw ArgumentError("unknown field '" + field + "' (expected u or f)");
    Eigen::VectorXd v(static_cast<Eigen::Index>(points.size()));
    for (std::size_t i = 0; i < points.size(); ++i) {
      const PoissonValue r = poisson_reference(id_, points[i][0]);
      v(static_cast<Eigen::Index>(i)) = field == "u" ? r.u : r.f;
    }
    return v;
  }

 private:
  ProblemId id_;
  MlpSpec spec_;
  ParameterLayout layout_;
  Eigen::MatrixXd f_points_, b_points_;
  Eigen::RowVectorXd f_target_, b_target_;
};

// ---- 2D diffusion -----------------------------------------------------------

class DiffusionProblem final : public InverseProblem {
 public:
  DiffusionProblem(const Dataset& d, const MlpSpec& h_spec, const MlpSpec& y_spec, std::optional<GridField> y_ref,
                   std::optional<GridField> h_ref, std::optional<GridShape> eval_grid)
      : h_spec_(h_spec), y_spec_(y_spec), layout_({h_spec, y_spec}), y_ref_(std::move(y_ref)), h_ref_(std::move(h_ref)) {
    if (h_spec.input_dim != 2 || y_spec.input_dim != 2) throw ArgumentError("diffusion problem needs two-input networks");
    if (d.problem != ProblemId::diffusion_2d) throw ArgumentError("dataset is not a diffusion_2d dataset");
    if (d.residual_points.empty() || d.dirichlet_obs.empty() || d.neumann_obs.empty() ||
        d.neumann_top_points.empty() || d.neumann_bottom_points.empty() || d.y_obs.empty() || d.u_obs.empty()) {
      throw ArgumentError("diffusion dataset is missing a term");
    }
    r_ = points_matrix(d.residual_points, 2);
    dbr_ = points_matrix(locations(d.dirichlet_obs), 2);
    nbl_ = points_matrix(locations(d.neumann_obs), 2);
    nbt_ = points_matrix(d.neumann_top_points, 2);
    nbb_ = points_matrix(d.neumann_bottom_points, 2);
    yo_ = points_matrix(locations(d.y_obs), 2);
    ho_ = points_matrix(locations(d.u_obs), 2);
    dbr_target_ = targets(d.dirichlet_obs);
    nbl_target_ = targets(d.neumann_obs);
    y_target_ = targets(d.y_obs);
    h_target_ = targets(d.u_obs);
    if (eval_grid) {
      grid_ = *eval_grid;
    } else if (y_ref_) {
      grid_ = y_ref_->shape;
    }
  }

  ProblemId id() const override { return ProblemId::diffusion_2d; }
  const ParameterLayout& layout() const override { return layout_; }
  std::vector<TermInfo> terms() const override {
    auto n = [](const auto& m) { return static_cast<std::size_t>(m.cols()); };
    return {{"r", n(r_)}, {"dbr", n(dbr_)}, {"nbl", n(nbl_)}, {"nbt", n(nbt_)},
            {"nbb", n(nbb_)}, {"y", n(yo_)}, {"h", n(ho_)}};
  }
  std::string anchor_term() const override { return "y"; }

  class Tape final : public ResidualTape {
   public:
    Tape(const DiffusionProblem& p, std::span<const double> params)
        : hp_(params.subspan(p.layout_.offset(0), p.layout_.size(0))),
          yp_(params.subspan(p.layout_.offset(1), p.layout_.size(1))),
          p_(p),
          h_r_(p.h_spec_, hp_, p.r_, 2),
          y_r_(p.y_spec_, yp_, p.r_, 1),
          h_dbr_(p.h_spec_, hp_, p.dbr_, 0),
          h_nbl_(p.h_spec_, hp_, p.nbl_, 1),
          y_nbl_(p.y_spec_, yp_, p.nbl_, 0),
          h_nbt_(p.h_spec_, hp_, p.nbt_, 1),
          y_nbt_(p.y_spec_, yp_, p.nbt_, 0),
          h_nbb_(p.h_spec_, hp_, p.nbb_, 1),
          y_nbb_(p.y_spec_, yp_, p.nbb_, 0),
          y_obs_(p.y_spec_, yp_, p.yo_, 0),
          h_obs_(p.h_spec_, hp_, p.ho_, 0) {
      e_r_ = y_r_.value().array().exp();
      const Eigen::ArrayXXd inner = h_r_.second(0).array() + h_r_.second(1).array() +
                                    y_r_.first(0).array() * h_r_.first(0).array() +
                                    y_r_.first(1).array() * h_r_.first(1).array();
      const Eigen::RowVectorXd r = (e_r_.array() * inner).matrix();
      residuals_.push_back(r.transpose());
      residuals_.push_back((h_dbr_.value() - p.dbr_target_).transpose());
      const auto flux = [](const NetworkTape& h, const NetworkTape& y, std::size_t axis) {
        return Eigen::RowVectorXd(-(y.value().array().exp() * h.first(axis).array()).matrix());
      };
      residuals_.push_back((flux(h_nbl_, y_nbl_, 0) - p.nbl_target_).transpose());
      residuals_.push_back(flux(h_nbt_, y_nbt_, 1).transpose());
      residuals_.push_back(flux(h_nbb_, y_nbb_, 1).transpose());
      residuals_.push_back((y_obs_.value() - p.y_target_).transpose());
      residuals_.push_back((h_obs_.value() - p.h_target_).transpose());
    }

    void pullback(const std::vector<Eigen::VectorXd>& adj, std::span<double> grad) const override {
      check_adjoints(adj, residuals_);
      std::span<double> gh = grad.subspan(p_.layout_.offset(0), p_.layout_.size(0));
      std::span<double> gy = grad.subspan(p_.layout_.offset(1), p_.layout_.size(1));
      {
        const Eigen::ArrayXXd g = adj[0].transpose().array();
        const Eigen::ArrayXXd ge = g * e_r_.array();
        NetworkTape::Adjoint ha;
        ha.first = {(ge * y_r_.first(0).array()).matrix(), (ge * y_r_.first(1).array()).matrix()};
        ha.second = {ge.matrix(), ge.matrix()};
        h_r_.backward(ha, gh);
        NetworkTape::Adjoint ya;
        ya.value = (g * residuals_[0].transpose().array()).matrix();
        ya.first = {(ge * h_r_.first(0).array()).matrix(), (ge * h_r_.first(1).array()).matrix()};
        y_r_.backward(ya, gy);
      }
      {
        NetworkTape::Adjoint a;
        a.value = adj[1].transpose();
        h_dbr_.backward(a, gh);
      }
      const auto neumann = [&](const Eigen::VectorXd& g_col, const NetworkTape& h, const NetworkTape& y,
                               std::size_t axis) {
        const Eigen::ArrayXXd g = g_col.transpose().array();
        const Eigen::ArrayXXd e = y.value().array().exp();
        NetworkTape::Adjoint ha;
        ha.first.resize(2);
        ha.first[axis] = (-g * e).matrix();
        h.backward(ha, gh);
        NetworkTape::Adjoint ya;
        ya.value = (-g * e * h.first(axis).array()).matrix();
        y.backward(ya, gy);
      };
      neumann(adj[2], h_nbl_, y_nbl_, 0);
      neumann(adj[3], h_nbt_, y_nbt_, 1);
      neumann(adj[4], h_nbb_, y_nbb_, 1);
      {
        NetworkTape::Adjoint a;
        a.value = adj[5].transpose();
        y_obs_.backward(a, gy);
      }
      {
        NetworkTape::Adjoint a;
        a.value = adj[6].transpose();
        h_obs_.backward(a, gh);
      }
    }

   private:
    std::span<const double> hp_, yp_;
    const DiffusionProblem& p_;
    NetworkTape h_r_, y_r_, h_dbr_, h_nbl_, y_nbl_, h_nbt_, y_nbt_, h_nbb_, y_nbb_, y_obs_, h_obs_;
    Eigen::RowVectorXd e_r_;
  };

  std::unique_ptr<ResidualTape> record(std::span<const double> params) const override {
    if (params.size() != layout_.total()) throw ArgumentError("parameter vector does not match the problem layout");
    return std::make_unique<Tape>(*this, params);
  }

  std::vector<std::vector<ad::Var>> residuals_graph(ad::Graph& g, std::span<const ad::Var> params) const override {
    const auto hp = params.subspan(layout_.offset(0), layout_.size(0));
    const auto yp = params.subspan(layout_.offset(1), layout_.size(1));
    auto pt = [](const Eigen::MatrixXd& m, Eigen::Index i) { return Point{m(0, i), m(1, i)}; };
    std::vector<std::vector<ad::Var>> out(7);
    for (Eigen::Index i = 0; i < r_.cols(); ++i) {
      const auto h = graph_jet<2>(g, h_spec_, hp, pt(r_, i));
      const auto y = graph_jet<2>(g, y_spec_, yp, pt(r_, i));
      out[0].push_back(exp(y.value) * (h.second[0] + h.second[1] + y.first[0] * h.first[0] + y.first[1] * h.first[1]));
    }
    for (Eigen::Index i = 0; i < dbr_.cols(); ++i) {
      out[1].push_back(graph_value(g, h_spec_, hp, pt(dbr_, i)) - dbr_target_(i));
    }
    auto flux = [&](const Point& x, std::size_t axis) {
      const auto h = graph_jet<2>(g, h_spec_, hp, x);
      return -exp(graph_value(g, y_spec_, yp, x)) * h.first[axis];
    };
    for (Eigen::Index i = 0; i < nbl_.cols(); ++i) out[2].push_back(flux(pt(nbl_, i), 0) - nbl_target_(i));
    for (Eigen::Index i = 0; i < nbt_.cols(); ++i) out[3].push_back(flux(pt(nbt_, i), 1));
    for (Eigen::Index i = 0; i < nbb_.cols(); ++i) out[4].push_back(flux(pt(nbb_, i), 1));
    for (Eigen::Index i = 0; i < yo_.cols(); ++i) out[5].push_back(graph_value(g, y_spec_, yp, pt(yo_, i)) - y_target_(i));
    for (Eigen::Index i = 0; i < ho_.cols(); ++i) out[6].push_back(graph_value(g, h_spec_, hp, pt(ho_, i)) - h_target_(i));
    return out;
  }

  std::vector<std::string> fields() const override { return {"y", "h"}; }
  std::vector<Point> eval_points() const override {
    std::vector<Point> p;
    p.reserve(grid_.cells());
    for (std::size_t j = 0; j < grid_.ny; ++j) {
      for (std::size_t i = 0; i < grid_.nx; ++i) p.push_back(grid_.center(i, j));
    }
    return p;
  }

  Eigen::VectorXd predict(const std::string& field, std::span<const double> params,
                          const std::vector<Point>& points) const override {
    const std::size_t net = field == "h" ? 0 : field == "y" ? 1 : 2;
    if (net == 2) throw ArgumentError("unknown field '" + field + "' (expected y or h)");
    const MlpSpec& spec = net == 0 ? h_spec_ : y_spec_;
    return NetworkTape(spec, params.subspan(layout_.offset(net), layout_.size(net)), points_matrix(points, 2), 0)
        .value()
        .transpose();
  }

  Eigen::VectorXd reference(const std::string& field, const std::vector<Point>& points) const override {
    const std::optional<GridField>& ref = field == "y" ? y_ref_ : h_ref_;
    if (field != "y" && field != "h") throw ArgumentError("unknown field '" + field + "' (expected y or h)");
    if (!ref) throw ArgumentError("no reference field loaded for '" + field + "'");
    Eigen::VectorXd v(static_cast<Eigen::Index>(points.size()));
    for (std::size_t i = 0; i < points.size(); ++i) v(static_cast<Eigen::Index>(i)) = ref->at(points[i]);
    return v;
  }

 private:
  MlpSpec h_spec_, y_spec_;
  ParameterLayout layout_;
  std::optional<GridField> y_ref_, h_ref_;
  GridShape grid_;
  Eigen::MatrixXd r_, dbr_, nbl_, nbt_, nbb_, yo_, ho_;
  Eigen::RowVectorXd dbr_target_, nbl_target_, y_target_, h_target_;
};

// ---- linear-in-parameter model ----------------------------------------------

class LinearModel final : public InverseProblem {
 public:
  LinearModel(const Eigen::MatrixXd& x, const Eigen::VectorXd& y)
      : x_(x), y_(y), layout_(ParameterLayout::flat(static_cast<std::size_t>(x.cols()))) {
    if (x.rows() != y.size() || x.rows() == 0) throw ArgumentError("linear model: design rows must match observations");
  }

  ProblemId id() const override { return ProblemId::linear_model; }
  const ParameterLayout& layout() const override { return layout_; }
  std::vector<TermInfo> terms() const override { return {{"y", static_cast<std::size_t>(y_.size())}}; }
  std::string anchor_term() const override { return "y"; }

  class Tape final : public ResidualTape {
   public:
    Tape(const LinearModel& m, std::span<const double> params) : m_(m) {
      const Eigen::Map<const Eigen::VectorXd> a(params.data(), static_cast<Eigen::Index>(params.size()));
      residuals_.push_back(m.x_ * a - m.y_);
    }
    void pullback(const std::vector<Eigen::VectorXd>& adj, std::span<double> grad) const override {
      check_adjoints(adj, residuals_);
      Eigen::Map<Eigen::VectorXd> g(grad.data(), static_cast<Eigen::Index>(grad.size()));
      g.noalias() += m_.x_.transpose() * adj[0];
    }

   private:
    const LinearModel& m_;
  };

  std::unique_ptr<ResidualTape> record(std::span<const double> params) const override {
    if (params.size() != layout_.total()) throw ArgumentError("parameter vector does not match the problem layout");
    return std::make_unique<Tape>(*this, params);
  }

  std::vector<std::vector<ad::Var>> residuals_graph(ad::Graph& g, std::span<const ad::Var> params) const override {
    std::vector<std::vector<ad::Var>> out(1);
    for (Eigen::Index i = 0; i < x_.rows(); ++i) {
      ad::Var s = g.constant(-y_(i));
      for (Eigen::Index k = 0; k < x_.cols(); ++k) s += x_(i, k) * params[static_cast<std::size_t>(k)];
      out[0].push_back(s);
    }
    return out;
  }

  std::vector<std::string> fields() const override { return {}; }
  std::vector<Point> eval_points() const override { return {}; }
  Eigen::VectorXd predict(const std::string& field, std::span<const double>, const std::vector<Point>&) const override {
    throw ArgumentError("linear model has no field '" + field + "'");
  }
  Eigen::VectorXd reference(const std::string& field, const std::vector<Point>&) const override {
    throw ArgumentError("linear model has no field '" + field + "'");
  }

 private:
  Eigen::MatrixXd x_;
  Eigen::VectorXd y_;
  ParameterLayout layout_;
};

}  // namespace

std::unique_ptr<InverseProblem> make_poisson_problem(const Dataset& data, const MlpSpec& spec) {
  return std::make_unique<PoissonProblem>(data, spec);
}

std::unique_ptr<InverseProblem> make_diffusion_problem(const Dataset& data, const MlpSpec& h_spec,
                                                       const MlpSpec& y_spec, std::optional<GridField> y_ref,
                                                       std::optional<GridField> h_ref,
                                                       std::optional<GridShape> eval_grid) {
  return std::make_unique<DiffusionProblem>(data, h_spec, y_spec, std::move(y_ref), std::move(h_ref), eval_grid);
}

std::unique_ptr<InverseProblem> make_linear_model(const Eigen::MatrixXd& design, const Eigen::VectorXd& observed) {
  return std::make_unique<LinearModel>(design, observed);
}

}  // namespace rpinn

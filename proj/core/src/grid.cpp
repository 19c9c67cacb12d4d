#include "rpinn/grid.hpp"

#include <algorithm>
#include <cmath>
#include <istream>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

#include <Eigen/Cholesky>
#include <Eigen/Sparse>
#include <Eigen/SparseCholesky>

#include "rpinn/errors.hpp"
#include "rpinn/random.hpp"

namespace rpinn {

double GridField::at(const std::array<double, 2>& x) const {
  auto cell = [](double v, double h, std::size_t n) {
    auto i = static_cast<long>(std::floor(v / h));
    return static_cast<std::size_t>(std::clamp<long>(i, 0, static_cast<long>(n) - 1));
  };
  return (*this)(cell(x[0], shape.dx(), shape.nx), cell(x[1], shape.dy(), shape.ny));
}

void write_csv(std::ostream& out, const GridField& field) {
  const GridShape& s = field.shape;
  out.precision(17);
  out << "nx,ny,L1,L2\n" << s.nx << ',' << s.ny << ',' << s.length_x << ',' << s.length_y << '\n';
  for (std::size_t j = 0; j < s.ny; ++j) {
    for (std::size_t i = 0; i < s.nx; ++i) out << (i ? "," : "") << field(i, j);
    out << '\n';
  }
  if (!out) throw IoError("failed to write grid CSV");
}

GridField read_csv(std::istream& in) {
  std::string line;
  if (!std::getline(in, line) || line.rfind("nx,ny", 0) != 0) throw IoError("grid CSV: missing header");
  if (!std::getline(in, line)) throw IoError("grid CSV: missing dimensions");
  GridField f;
  {
    std::replace(line.begin(), line.end(), ',', ' ');
    std::istringstream ss(line);
    if (!(ss >> f.shape.nx >> f.shape.ny >> f.shape.length_x >> f.shape.length_y)) {
      throw IoError("grid CSV: bad dimensions line");
    }
  }
  f.values.resize(static_cast<Eigen::Index>(f.shape.nx), static_cast<Eigen::Index>(f.shape.ny));
  for (std::size_t j = 0; j < f.shape.ny; ++j) {
    if (!std::getline(in, line)) throw IoError("grid CSV: truncated");
    std::replace(line.begin(), line.end(), ',', ' ');
    std::istringstream ss(line);
    for (std::size_t i = 0; i < f.shape.nx; ++i) {
      double v;
      if (!(ss >> v)) throw IoError("grid CSV: short row " + std::to_string(j));
      f.values(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = v;
    }
  }
  return f;
}

void GrfPrior::validate() const {
  if (!(variance > 0.0)) throw ArgumentError("GRF prior variance must be > 0");
  if (!(correlation_length > 0.0)) throw ArgumentError("GRF correlation length must be > 0");
}

GrfSampler::GrfSampler(const GrfPrior& prior, const GridShape& shape) : prior_(prior), shape_(shape) {
  prior.validate();
  const std::size_t n = shape.cells();
  if (n == 0) throw ArgumentError("GRF grid is empty");
  if (n > kMaxGrfCells) {
    throw ArgumentError("GRF grid has " + std::to_string(n) + " cells; dense sampling supports at most " +
                        std::to_string(kMaxGrfCells));
  }
  const auto m = static_cast<Eigen::Index>(n);
  Eigen::MatrixXd cov(m, m);
  const double inv_len2 = 1.0 / (prior.correlation_length * prior.correlation_length);
  for (std::size_t b = 0; b < n; ++b) {
    const auto xb = shape.center(b % shape.nx, b / shape.nx);
    for (std::size_t a = b; a < n; ++a) {
      const auto xa = shape.center(a % shape.nx, a / shape.nx);
      const double d2 = (xa[0] - xb[0]) * (xa[0] - xb[0]) + (xa[1] - xb[1]) * (xa[1] - xb[1]);
      cov(static_cast<Eigen::Index>(a), static_cast<Eigen::Index>(b)) = prior.variance * std::exp(-d2 * inv_len2);
    }
  }
  for (double jitter = 1e-10; jitter <= 1e-6 * 1.0000001; jitter *= 10.0) {
    Eigen::MatrixXd work = cov;
    work.diagonal().array() += jitter * prior.variance;
    Eigen::LLT<Eigen::MatrixXd, Eigen::Lower> llt(work);
    if (llt.info() == Eigen::Success) {
      lower_ = llt.matrixL();
      jitter_ = jitter;
      return;
    }
  }
  throw NumericError("GRF covariance factorization failed even with diagonal jitter 1e-6");
}

GridField GrfSampler::sample(std::mt19937_64& rng) const {
  std::normal_distribution<double> normal(0.0, 1.0);
  Eigen::VectorXd z(lower_.rows());
  for (Eigen::Index i = 0; i < z.size(); ++i) z(i) = normal(rng);
  Eigen::VectorXd y = lower_.triangularView<Eigen::Lower>() * z;
  GridField f{shape_, Eigen::MatrixXd(static_cast<Eigen::Index>(shape_.nx), static_cast<Eigen::Index>(shape_.ny))};
  for (std::size_t j = 0; j < shape_.ny; ++j) {
    for (std::size_t i = 0; i < shape_.nx; ++i) {
      f.values(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) =
          prior_.mean + y(static_cast<Eigen::Index>(shape_.index(i, j)));
    }
  }
  return f;
}

GridField GrfSampler::sample(std::uint64_t seed) const {
  auto rng = make_rng(seed, Stream::field);
  return sample(rng);
}

GridField sample_grf(const GrfPrior& prior, const GridShape& shape, std::uint64_t seed) {
  return GrfSampler(prior, shape).sample(seed);
}

namespace {

double harmonic(double a, double b) { return 2.0 * a * b / (a + b); }

void check_positive(const GridField& k) {
  if (k.values.size() == 0) throw ArgumentError("conductivity field is empty");
  if (!(k.values.array() > 0.0).all() || !k.values.allFinite()) {
    throw ArgumentError("conductivity field must be finite and strictly positive");
  }
}

}  // namespace

GridField solve_diffusion_fd(const GridField& k_field, double head, double flux) {
  check_positive(k_field);
  const GridShape& s = k_field.shape;
  const double dx = s.dx();
  const double dy = s.dy();
  const auto n = static_cast<Eigen::Index>(s.cells());

  std::vector<Eigen::Triplet<double>> entries;
  entries.reserve(static_cast<std::size_t>(n) * 5);
  Eigen::VectorXd rhs = Eigen::VectorXd::Zero(n);
  auto couple = [&](std::size_t a, std::size_t b, double t) {
    const auto ia = static_cast<Eigen::Index>(a);
    const auto ib = static_cast<Eigen::Index>(b);
    entries.emplace_back(ia, ia, t);
    entries.emplace_back(ib, ib, t);
    entries.emplace_back(ia, ib, -t);
    entries.emplace_back(ib, ia, -t);
  };
  for (std::size_t j = 0; j < s.ny; ++j) {
    for (std::size_t i = 0; i < s.nx; ++i) {
      const std::size_t c = s.index(i, j);
      const double kc = k_field(i, j);
      if (i + 1 < s.nx) couple(c, s.index(i + 1, j), harmonic(kc, k_field(i + 1, j)) * dy / dx);
      if (j + 1 < s.ny) couple(c, s.index(i, j + 1), harmonic(kc, k_field(i, j + 1)) * dx / dy);
      if (i == 0) rhs(static_cast<Eigen::Index>(c)) += flux * dy;
      if (i + 1 == s.nx) {
        const double t = kc * dy / (0.5 * dx);
        entries.emplace_back(static_cast<Eigen::Index>(c), static_cast<Eigen::Index>(c), t);
        rhs(static_cast<Eigen::Index>(c)) += t * head;
      }
    }
  }
  Eigen::SparseMatrix<double> a(n, n);
  a.setFromTriplets(entries.begin(), entries.end());

  Eigen::SimplicialLLT<Eigen::SparseMatrix<double>> solver(a);
  if (solver.info() != Eigen::Success) throw NumericError("FD system factorization failed");
  Eigen::VectorXd h = solver.solve(rhs);
  Eigen::VectorXd r = rhs - a * h;
  for (int refine = 0; refine < 3 && r.norm() > 1e-12; ++refine) {
    h += solver.solve(r);
    r = rhs - a * h;
  }
  if (!h.allFinite() || r.norm() > 1e-10) {
    throw NumericError("FD solve did not reach residual 1e-10 (residual " + std::to_string(r.norm()) + ")");
  }

  GridField out{s, Eigen::MatrixXd(static_cast<Eigen::Index>(s.nx), static_cast<Eigen::Index>(s.ny))};
  for (std::size_t j = 0; j < s.ny; ++j) {
    for (std::size_t i = 0; i < s.nx; ++i) {
      out.values(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = h(static_cast<Eigen::Index>(s.index(i, j)));
    }
  }
  return out;
}

BoundaryFluxes boundary_fluxes(const GridField& k_field, const GridField& h, double head, double flux) {
  check_positive(k_field);
  if (!(k_field.shape == h.shape)) throw ArgumentError("boundary_fluxes: grid shapes differ");
  const GridShape& s = k_field.shape;
  BoundaryFluxes f;
  for (std::size_t j = 0; j < s.ny; ++j) {
    f.left += flux * s.dy();
    const std::size_t i = s.nx - 1;
    f.right += k_field(i, j) * (h(i, j) - head) / (0.5 * s.dx()) * s.dy();
  }
  return f;
}

double left_face_head(const GridField& k_field, const GridField& h, double flux, std::size_t j) {
  return h(0, j) + flux * 0.5 * k_field.shape.dx() / k_field(0, j);
}

}  // namespace rpinn

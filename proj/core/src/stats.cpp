#include "rpinn/stats.hpp"

#include <cmath>
#include <limits>
#include <numbers>

#include <Eigen/Eigenvalues>
#include <spdlog/spdlog.h>

#include "rpinn/errors.hpp"

namespace rpinn {

PredictiveField predictive_moments(const Eigen::MatrixXd& predictions, bool keep) {
  if (predictions.cols() == 0) throw ArgumentError("predictive moments of an empty ensemble");
  PredictiveField f;
  const auto n = static_cast<double>(predictions.cols());
  f.mean = predictions.rowwise().mean();
  if (predictions.cols() > 1) {
    f.std = ((predictions.colwise() - f.mean).rowwise().squaredNorm() / (n - 1.0)).cwiseSqrt();
  } else {
    f.std = Eigen::VectorXd::Zero(predictions.rows());
  }
  if (keep) f.predictions = predictions;
  return f;
}

PredictiveField predictive_moments(const PosteriorEnsemble& ensemble, const InverseProblem& problem,
                                   const std::string& field, const std::vector<Point>& points, bool keep) {
  if (ensemble.samples.empty()) throw ArgumentError("predictive moments of an empty ensemble");
  Eigen::MatrixXd pred(static_cast<Eigen::Index>(points.size()), static_cast<Eigen::Index>(ensemble.size()));
  for (std::size_t k = 0; k < ensemble.size(); ++k) {
    pred.col(static_cast<Eigen::Index>(k)) = problem.predict(field, ensemble.samples[k], points);
  }
  PredictiveField f = predictive_moments(pred, keep);
  f.points = points;
  return f;
}

namespace {

void check_lengths(const PredictiveField& f, const Eigen::VectorXd& ref) {
  if (f.mean.size() != ref.size() || f.std.size() != ref.size()) {
    throw ArgumentError("prediction and reference lengths differ (" + std::to_string(f.mean.size()) + " vs " +
                        std::to_string(ref.size()) + ")");
  }
}

}  // namespace

double lpp(const PredictiveField& field, const Eigen::VectorXd& reference, std::size_t* floored) {
  check_lengths(field, reference);
  double total = 0.0;
  std::size_t count = 0;
  for (Eigen::Index i = 0; i < reference.size(); ++i) {
    double s = field.std(i);
    if (s < kStdFloor) {
      s = kStdFloor;
      ++count;
    }
    const double d = field.mean(i) - reference(i);
    total -= d * d / (2.0 * s * s) + 0.5 * std::log(2.0 * std::numbers::pi * s * s);
  }
  if (count > 0) spdlog::warn("LPP: {} predictive std values floored at {:.0e}", count, kStdFloor);
  if (floored != nullptr) *floored = count;
  return total;
}

RelErrors rel_errors(const Eigen::VectorXd& mean, const Eigen::VectorXd& reference) {
  if (mean.size() != reference.size()) throw ArgumentError("rel_errors: length mismatch");
  RelErrors r;
  const Eigen::VectorXd d = mean - reference;
  r.linf = d.size() == 0 ? 0.0 : d.cwiseAbs().maxCoeff();
  const double norm = reference.norm();
  if (norm > 0.0) r.rl2 = d.norm() / norm;
  return r;
}

double coverage(const PredictiveField& field, const Eigen::VectorXd& reference, double k) {
  check_lengths(field, reference);
  if (reference.size() == 0) return 0.0;
  Eigen::Index inside = 0;
  for (Eigen::Index i = 0; i < reference.size(); ++i) {
    if (std::abs(field.mean(i) - reference(i)) <= k * field.std(i)) ++inside;
  }
  return static_cast<double>(inside) / static_cast<double>(reference.size());
}

SummaryRow summarize(const std::string& method, const std::string& field, const PredictiveField& pred,
                     const Eigen::VectorXd& reference, double seconds) {
  SummaryRow row;
  row.method = method;
  row.field = field;
  const RelErrors e = rel_errors(pred.mean, reference);
  row.rl2 = e.rl2.value_or(std::numeric_limits<double>::quiet_NaN());
  row.linf = e.linf;
  row.avg_std = pred.std.size() ? pred.std.mean() : 0.0;
  row.lpp = lpp(pred, reference);
  row.coverage = coverage(pred, reference);
  row.seconds = seconds;
  return row;
}

Eigen::VectorXd rhat(const std::vector<std::vector<std::vector<double>>>& chains_in, bool split) {
  std::vector<std::vector<std::vector<double>>> halves;
  const auto* chains = &chains_in;
  if (split) {
    for (const auto& c : chains_in) {
      const std::size_t h = c.size() / 2;
      halves.emplace_back(c.begin(), c.begin() + static_cast<std::ptrdiff_t>(h));
      halves.emplace_back(c.end() - static_cast<std::ptrdiff_t>(h), c.end());
    }
    chains = &halves;
  }
  const std::size_t m = chains->size();
  if (m < 2) throw ArgumentError("rhat needs at least two chains");
  const std::size_t n = chains->front().size();
  if (n < 2) throw ArgumentError("rhat needs at least two draws per chain");
  for (const auto& c : *chains) {
    if (c.size() != n) throw ArgumentError("rhat: chains have unequal lengths");
  }
  const std::size_t d = chains->front().front().size();
  Eigen::MatrixXd means(static_cast<Eigen::Index>(d), static_cast<Eigen::Index>(m));
  Eigen::VectorXd w = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(d));
  for (std::size_t c = 0; c < m; ++c) {
    Eigen::MatrixXd x(static_cast<Eigen::Index>(d), static_cast<Eigen::Index>(n));
    for (std::size_t i = 0; i < n; ++i) {
      const auto& s = (*chains)[c][i];
      if (s.size() != d) throw ArgumentError("rhat: draws differ in dimension");
      x.col(static_cast<Eigen::Index>(i)) = Eigen::Map<const Eigen::VectorXd>(s.data(), static_cast<Eigen::Index>(d));
    }
    const Eigen::VectorXd mu = x.rowwise().mean();
    means.col(static_cast<Eigen::Index>(c)) = mu;
    w += (x.colwise() - mu).rowwise().squaredNorm() / static_cast<double>(n - 1);
  }
  w /= static_cast<double>(m);
  const Eigen::VectorXd grand = means.rowwise().mean();
  const Eigen::VectorXd b =
      static_cast<double>(n) * (means.colwise() - grand).rowwise().squaredNorm() / static_cast<double>(m - 1);
  const double nd = static_cast<double>(n);
  Eigen::VectorXd r(static_cast<Eigen::Index>(d));
  for (Eigen::Index k = 0; k < r.size(); ++k) {
    if (w(k) <= 0.0) {
      r(k) = std::numeric_limits<double>::infinity();
    } else {
      r(k) = std::sqrt(((nd - 1.0) / nd * w(k) + b(k) / nd) / w(k));
    }
  }
  return r;
}

SubspaceGrid subspace_grid(std::span<const double> t1, std::span<const double> t2, std::span<const double> t3,
                           const std::vector<double>& a, const std::vector<double>& b,
                           const std::function<double(std::span<const double>)>& log_density, std::size_t workers) {
  const std::size_t d = t1.size();
  if (t2.size() != d || t3.size() != d) throw ArgumentError("subspace_grid: parameter vectors differ in length");
  if (a.empty() || b.empty()) throw ArgumentError("subspace_grid: empty lattice");
  const auto dim = static_cast<Eigen::Index>(d);
  const Eigen::Map<const Eigen::VectorXd> x1(t1.data(), dim), x2(t2.data(), dim), x3(t3.data(), dim);

  SubspaceGrid g;
  g.a = a;
  g.b = b;
  Eigen::VectorXd u = x1 - x3;
  Eigen::VectorXd v = x2 - x3;
  const double scale = std::max({x1.norm(), x2.norm(), x3.norm(), 1.0});
  const double un = u.norm();
  if (un <= 1e-12 * scale) throw ArgumentError("subspace_grid: theta1 and theta3 coincide (degenerate basis)");
  u /= un;
  v -= u.dot(v) * u;
  const double vn = v.norm();
  if (vn <= 1e-12 * scale) throw ArgumentError("subspace_grid: the three points are collinear (degenerate basis)");
  v /= vn;
  g.basis.resize(2, dim);
  g.basis.row(0) = u.transpose();
  g.basis.row(1) = v.transpose();

  const auto na = static_cast<Eigen::Index>(a.size());
  const auto nb = static_cast<Eigen::Index>(b.size());
  g.log_density.resize(na, nb);
  g.coord_u.resize(na, nb);
  g.coord_v.resize(na, nb);
  const Eigen::VectorXd d13 = x1 - x3, d23 = x2 - x3;
  const double u1 = u.dot(d13), v1 = v.dot(d13), u2 = u.dot(d23), v2 = v.dot(d23);
  parallel_for(a.size() * b.size(), workers, [&](std::size_t idx) {
    const std::size_t i = idx / b.size();
    const std::size_t j = idx % b.size();
    const double ai = a[i], bj = b[j], c = 1.0 - ai - bj;
    std::vector<double> theta(d);
    for (std::size_t k = 0; k < d; ++k) theta[k] = ai * t1[k] + bj * t2[k] + c * t3[k];
    const auto r = static_cast<Eigen::Index>(i), s = static_cast<Eigen::Index>(j);
    g.log_density(r, s) = log_density(theta);
    g.coord_u(r, s) = ai * u1 + bj * u2;
    g.coord_v(r, s) = ai * v1 + bj * v2;
  });
  return g;
}

Eigen::VectorXd hessian_eigenspectrum(const ad::ScalarFn& neg_log_density, std::span<const double> at,
                                      std::size_t top_k, std::size_t max_dim) {
  const Eigen::MatrixXd h = ad::hessian(neg_log_density, at, max_dim);
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(h, Eigen::EigenvaluesOnly);
  if (es.info() != Eigen::Success) throw NumericError("Hessian eigen-decomposition failed");
  const Eigen::VectorXd ev = es.eigenvalues().reverse();  // descending
  const auto k = static_cast<Eigen::Index>(std::min<std::size_t>(top_k, static_cast<std::size_t>(ev.size())));
  return ev.head(k);
}

}  // namespace rpinn

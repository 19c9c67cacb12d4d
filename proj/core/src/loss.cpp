#include "rpinn/loss.hpp"

#include <cmath>
#include <random>

#include <spdlog/spdlog.h>

#include "rpinn/errors.hpp"
#include "rpinn/random.hpp"

namespace rpinn {

void LossWeights::validate(const std::vector<TermInfo>& terms) const {
  for (const TermInfo& t : terms) {
    auto it = lambda.find(t.name);
    if (it == lambda.end()) throw ArgumentError("missing loss weight for term '" + t.name + "'");
    if (!(it->second > 0.0) || !std::isfinite(it->second)) {
      throw ArgumentError("loss weight for term '" + t.name + "' must be finite and > 0");
    }
  }
}

LossWeights default_weights(const InverseProblem& problem) {
  LossWeights w;
  switch (problem.id()) {
    case ProblemId::linear_poisson:
    case ProblemId::nonlinear_poisson:
      w.lambda = {{"f", 27000.0}, {"b", 2700.0}};
      break;
    case ProblemId::diffusion_2d: {
      const double n = static_cast<double>(problem.layout().size(0));
      for (const TermInfo& t : problem.terms()) w.lambda[t.name] = n;
      break;
    }
    case ProblemId::linear_model:
      for (const TermInfo& t : problem.terms()) w.lambda[t.name] = 1.0;
      break;
  }
  return w;
}

std::string to_string(SigmaMode mode) {
  switch (mode) {
    case SigmaMode::weighted: return "weighted";
    case SigmaMode::weighted_additive: return "weighted_additive";
    case SigmaMode::uniform: return "uniform";
    case SigmaMode::regularized: return "regularized";
  }
  return "unknown";
}

SigmaMode parse_sigma_mode(const std::string& name) {
  for (SigmaMode m : {SigmaMode::weighted, SigmaMode::weighted_additive, SigmaMode::uniform, SigmaMode::regularized}) {
    if (to_string(m) == name) return m;
  }
  throw ArgumentError("unknown sigma mode '" + name + "' (expected weighted, weighted_additive, uniform, regularized)");
}

namespace {

double clamp_sigma(const std::string& name, double s) {
  if (s < kSigmaFloor) {
    spdlog::warn("sigma for '{}' is {:.3g}; clamped to {:.0e}", name, s, kSigmaFloor);
    return kSigmaFloor;
  }
  return s;
}

}  // namespace

LikelihoodSigmas sigmas_from_weights(const LossWeights& weights, double sigma, const std::vector<TermInfo>& terms,
                                     SigmaMode mode, const std::string& anchor, double epsilon) {
  if (!(sigma > 0.0) || !std::isfinite(sigma)) throw ArgumentError("sigma must be finite and > 0");
  if (!(epsilon >= 0.0)) throw ArgumentError("epsilon must be >= 0");
  for (const TermInfo& t : terms) {
    if (t.count == 0) throw ArgumentError("term '" + t.name + "' has no points");
  }
  LikelihoodSigmas out;
  if (mode == SigmaMode::uniform) {
    for (const TermInfo& t : terms) out.term[t.name] = clamp_sigma(t.name, sigma);
    out.prior = 1.0;
    return out;
  }
  weights.validate(terms);
  const std::string a = mode == SigmaMode::weighted_additive ? std::string("f") : anchor;
  const TermInfo* at = nullptr;
  for (const TermInfo& t : terms) {
    if (t.name == a) at = &t;
  }
  if (at == nullptr) throw ArgumentError("anchor term '" + a + "' is not a term of this problem");
  const double s = mode == SigmaMode::regularized ? sigma + epsilon : sigma;
  const double prior_var = s * s * weights.lambda.at(a) / static_cast<double>(at->count);
  out.prior = clamp_sigma("prior", std::sqrt(prior_var));
  for (const TermInfo& t : terms) {
    out.term[t.name] = clamp_sigma(t.name, std::sqrt(static_cast<double>(t.count) * prior_var / weights.lambda.at(t.name)));
  }
  return out;
}

NoiseDraw draw_noise(const LikelihoodSigmas& sigmas, const std::vector<TermInfo>& terms, std::size_t n_params,
                     std::uint64_t seed) {
  auto rng = make_rng(seed, Stream::noise);
  std::normal_distribution<double> normal(0.0, 1.0);
  NoiseDraw d;
  for (const TermInfo& t : terms) {
    auto it = sigmas.term.find(t.name);
    if (it == sigmas.term.end()) throw ArgumentError("no sigma for term '" + t.name + "'");
    Eigen::VectorXd v(static_cast<Eigen::Index>(t.count));
    for (Eigen::Index i = 0; i < v.size(); ++i) v(i) = it->second * normal(rng);
    d.term[t.name] = std::move(v);
  }
  d.prior.resize(static_cast<Eigen::Index>(n_params));
  for (Eigen::Index i = 0; i < d.prior.size(); ++i) d.prior(i) = sigmas.prior * normal(rng);
  return d;
}

QuadraticObjective::QuadraticObjective(const InverseProblem& problem, std::vector<double> coef, double prior_coef)
    : problem_(&problem), coef_(std::move(coef)), prior_coef_(prior_coef) {}

QuadraticObjective QuadraticObjective::pinn(const InverseProblem& problem, const LossWeights& weights) {
  const auto terms = problem.terms();
  weights.validate(terms);
  std::vector<double> c;
  for (const TermInfo& t : terms) c.push_back(weights.lambda.at(t.name) / static_cast<double>(t.count));
  return {problem, std::move(c), 1.0};
}

QuadraticObjective QuadraticObjective::energy(const InverseProblem& problem, const LikelihoodSigmas& sigmas) {
  std::vector<double> c;
  for (const TermInfo& t : problem.terms()) {
    auto it = sigmas.term.find(t.name);
    if (it == sigmas.term.end()) throw ArgumentError("no sigma for term '" + t.name + "'");
    if (!(it->second > 0.0)) throw ArgumentError("sigma for term '" + t.name + "' must be > 0");
    c.push_back(0.5 / (it->second * it->second));
  }
  if (!(sigmas.prior > 0.0)) throw ArgumentError("prior sigma must be > 0");
  return {problem, std::move(c), 0.5 / (sigmas.prior * sigmas.prior)};
}

QuadraticObjective QuadraticObjective::randomized(const InverseProblem& problem, const LikelihoodSigmas& sigmas,
                                                  const NoiseDraw& noise) {
  QuadraticObjective q = energy(problem, sigmas);
  for (const TermInfo& t : problem.terms()) {
    auto it = noise.term.find(t.name);
    if (it == noise.term.end()) throw ArgumentError("noise draw has no vector for term '" + t.name + "'");
    if (static_cast<std::size_t>(it->second.size()) != t.count) {
      throw ArgumentError("noise for term '" + t.name + "' has " + std::to_string(it->second.size()) +
                          " entries, expected " + std::to_string(t.count));
    }
    q.shift_.push_back(it->second);
  }
  if (static_cast<std::size_t>(noise.prior.size()) != problem.layout().total()) {
    throw ArgumentError("prior noise length does not match the parameter count");
  }
  q.prior_shift_ = noise.prior;
  return q;
}

double QuadraticObjective::operator()(std::span<const double> params, std::span<double> grad) const {
  const std::size_t n = problem_->layout().total();
  if (params.size() != n) throw ArgumentError("objective: parameter count mismatch");
  if (!grad.empty() && grad.size() != n) throw ArgumentError("objective: gradient buffer size mismatch");
  const auto tape = problem_->record(params);
  const auto& res = tape->residuals();
  const bool noisy = !shift_.empty();

  double total = 0.0;
  std::vector<Eigen::VectorXd> adj;
  adj.reserve(res.size());
  for (std::size_t t = 0; t < res.size(); ++t) {
    Eigen::VectorXd d = noisy ? Eigen::VectorXd(res[t] - shift_[t]) : res[t];
    total += coef_[t] * d.squaredNorm();
    if (!grad.empty()) adj.push_back(2.0 * coef_[t] * d);
  }
  const Eigen::Map<const Eigen::VectorXd> theta(params.data(), static_cast<Eigen::Index>(n));
  Eigen::VectorXd dp = noisy ? Eigen::VectorXd(theta - prior_shift_) : Eigen::VectorXd(theta);
  total += prior_coef_ * dp.squaredNorm();
  if (!std::isfinite(total)) throw NumericError("objective evaluated to a non-finite value");
  if (!grad.empty()) {
    Eigen::Map<Eigen::VectorXd> g(grad.data(), static_cast<Eigen::Index>(n));
    g = 2.0 * prior_coef_ * dp;
    tape->pullback(adj, grad);
  }
  return total;
}

ad::Var QuadraticObjective::graph(ad::Graph& g, std::span<const ad::Var> params) const {
  const auto res = problem_->residuals_graph(g, params);
  ad::Var total;
  for (std::size_t t = 0; t < res.size(); ++t) {
    ad::Var s;
    for (std::size_t i = 0; i < res[t].size(); ++i) {
      ad::Var d = shift_.empty() ? res[t][i] : res[t][i] - shift_[t](static_cast<Eigen::Index>(i));
      s += d * d;
    }
    total += coef_[t] * s;
  }
  ad::Var p;
  for (std::size_t j = 0; j < params.size(); ++j) {
    ad::Var d = prior_shift_.size() == 0 ? params[j] : params[j] - prior_shift_(static_cast<Eigen::Index>(j));
    p += d * d;
  }
  return total + prior_coef_ * p;
}

ad::ScalarFn QuadraticObjective::as_scalar_fn() const {
  return [self = *this](ad::Graph& g, std::span<const ad::Var> params) { return self.graph(g, params); };
}

double pinn_loss(const InverseProblem& problem, std::span<const double> params, const LossWeights& weights) {
  return QuadraticObjective::pinn(problem, weights)(params);
}

double energy(const InverseProblem& problem, std::span<const double> params, const LikelihoodSigmas& sigmas) {
  return QuadraticObjective::energy(problem, sigmas)(params);
}

double randomized_loss(const InverseProblem& problem, std::span<const double> params, const LikelihoodSigmas& sigmas,
                       const NoiseDraw& noise) {
  return QuadraticObjective::randomized(problem, sigmas, noise)(params);
}

}  // namespace rpinn

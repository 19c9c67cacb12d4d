#include "rpinn/samplers.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <exception>
#include <limits>
#include <mutex>
#include <numeric>
#include <random>
#include <thread>

#include <Eigen/Core>

#include "rpinn/random.hpp"

namespace rpinn {

void parallel_for(std::size_t n, std::size_t workers, const std::function<void(std::size_t)>& fn) {
  workers = std::clamp<std::size_t>(workers, 1, std::max<std::size_t>(n, 1));
  std::vector<std::exception_ptr> errors(n);
  if (workers == 1) {
    for (std::size_t i = 0; i < n; ++i) {
      try {
        fn(i);
      } catch (...) {
        errors[i] = std::current_exception();
      }
    }
  } else {
    std::atomic<std::size_t> next{0};
    std::vector<std::thread> pool;
    for (std::size_t w = 0; w < workers; ++w) {
      pool.emplace_back([&] {
        for (std::size_t i = next++; i < n; i = next++) {
          try {
            fn(i);
          } catch (...) {
            errors[i] = std::current_exception();
          }
        }
      });
    }
    for (auto& t : pool) t.join();
  }
  for (auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }
}

void OptimizerConfig::validate() const {
  if (!(learning_rate > 0.0)) throw ArgumentError("optimizer learning rate must be > 0");
  if (!(beta1 > 0.0 && beta1 < 1.0)) throw ArgumentError("optimizer beta1 must be in (0, 1)");
  if (!(beta2 > 0.0 && beta2 < 1.0)) throw ArgumentError("optimizer beta2 must be in (0, 1)");
  if (!(epsilon > 0.0)) throw ArgumentError("optimizer epsilon must be > 0");
  if (!(grad_tolerance >= 0.0)) throw ArgumentError("optimizer gradient tolerance must be >= 0");
}

OptimizeResult adam_minimize(const ObjectiveFn& fn, std::vector<double> init, const OptimizerConfig& cfg) {
  cfg.validate();
  const auto n = static_cast<Eigen::Index>(init.size());
  Eigen::Map<Eigen::VectorXd> x(init.data(), n);
  Eigen::VectorXd g(n), m = Eigen::VectorXd::Zero(n), v = Eigen::VectorXd::Zero(n);
  std::vector<double> last_finite = init;

  auto eval = [&](std::size_t it) {
    double f;
    try {
      f = fn(init, std::span<double>(g.data(), static_cast<std::size_t>(n)));
    } catch (const NumericError& e) {
      throw OptimizationError(std::string("objective failed: ") + e.what(), last_finite, it);
    }
    if (!std::isfinite(f) || !g.allFinite()) {
      throw OptimizationError("non-finite loss or gradient at iteration " + std::to_string(it), last_finite, it);
    }
    last_finite = init;
    return f;
  };

  OptimizeResult r;
  double f = eval(0);
  double b1t = 1.0, b2t = 1.0;
  std::size_t it = 0;
  for (; it < cfg.max_iterations; ++it) {
    if (g.norm() < cfg.grad_tolerance) {
      r.converged = true;
      break;
    }
    b1t *= cfg.beta1;
    b2t *= cfg.beta2;
    m = cfg.beta1 * m + (1.0 - cfg.beta1) * g;
    v = cfg.beta2 * v + (1.0 - cfg.beta2) * g.cwiseAbs2();
    const double step = cfg.learning_rate * std::sqrt(1.0 - b2t) / (1.0 - b1t);
    x.array() -= step * m.array() / (v.array().sqrt() + cfg.epsilon * std::sqrt(1.0 - b2t));
    f = eval(it + 1);
  }
  r.iterations = it;
  r.loss = f;
  r.x = std::move(init);
  return r;
}

std::string to_string(Method m) {
  switch (m) {
    case Method::rpinn: return "rpinn";
    case Method::deep_ensemble: return "de";
    case Method::hmc: return "hmc";
    case Method::svgd: return "svgd";
    case Method::map: return "map";
  }
  return "unknown";
}

Method parse_method(const std::string& name) {
  for (Method m : {Method::rpinn, Method::deep_ensemble, Method::hmc, Method::svgd, Method::map}) {
    if (to_string(m) == name) return m;
  }
  throw ArgumentError("unknown method '" + name + "' (expected rpinn, de, hmc or svgd)");
}

std::string to_string(InitPolicy p) { return p == InitPolicy::fresh ? "fresh" : "map"; }

InitPolicy parse_init_policy(const std::string& name) {
  if (name == "fresh") return InitPolicy::fresh;
  if (name == "map") return InitPolicy::map;
  throw ArgumentError("unknown init policy '" + name + "' (expected fresh or map)");
}

void PosteriorEnsemble::validate() const {
  if (info.size() != samples.size()) throw ArgumentError("ensemble metadata count does not match sample count");
  for (const auto& s : samples) {
    if (s.size() != layout.total()) throw ArgumentError("ensemble sample does not match the layout");
  }
}

namespace {

struct Slot {
  std::vector<double> x;
  SampleInfo info;
  bool ok = false;
};

PosteriorEnsemble run_ensemble(Method method, const InverseProblem& problem, const EnsembleOptions& opts,
                               const std::function<Slot(std::size_t)>& job) {
  if (opts.n_ens == 0) throw ArgumentError("n_ens must be >= 1");
  opts.optimizer.validate();
  std::vector<Slot> slots(opts.n_ens);
  parallel_for(opts.n_ens, opts.workers, [&](std::size_t k) {
    slots[k] = job(k);
    if (opts.progress) opts.progress(k, slots[k].info);
  });
  PosteriorEnsemble e;
  e.method = method;
  e.problem = problem.id();
  e.layout = problem.layout();
  for (auto& s : slots) {
    if (!s.ok) {
      ++e.n_failed;
      continue;
    }
    e.samples.push_back(std::move(s.x));
    e.info.push_back(s.info);
  }
  if (static_cast<double>(e.n_failed) > kMaxFailureFraction * static_cast<double>(opts.n_ens)) {
    throw NumericError(std::to_string(e.n_failed) + " of " + std::to_string(opts.n_ens) +
                       " ensemble members failed to optimize (limit 10%)");
  }
  return e;
}

Slot optimize_slot(const QuadraticObjective& obj, std::vector<double> init, std::uint64_t seed,
                   const OptimizerConfig& cfg) {
  Slot s;
  s.info.seed = seed;
  try {
    OptimizeResult r = adam_minimize([&](std::span<const double> x, std::span<double> g) { return obj(x, g); },
                                     std::move(init), cfg);
    s.x = std::move(r.x);
    s.info.loss = r.loss;
    s.info.iterations = r.iterations;
    s.ok = true;
  } catch (const NumericError&) {
    s.info.accepted = false;
  }
  return s;
}

}  // namespace

PosteriorEnsemble rpinn_sample(const InverseProblem& problem, const LikelihoodSigmas& sigmas,
                               const EnsembleOptions& opts) {
  const auto terms = problem.terms();
  const std::size_t n = problem.layout().total();
  if (opts.init == InitPolicy::map && (!opts.map_estimate || opts.map_estimate->size() != n)) {
    throw ArgumentError("init policy 'map' needs a MAP estimate matching the layout");
  }
  PosteriorEnsemble e = run_ensemble(Method::rpinn, problem, opts, [&](std::size_t k) {
    const std::uint64_t seed = opts.base_seed + k;
    const NoiseDraw noise = draw_noise(sigmas, terms, n, seed);
    const auto obj = QuadraticObjective::randomized(problem, sigmas, noise);
    std::vector<double> init =
        opts.init == InitPolicy::map ? *opts.map_estimate : init_params(problem.layout(), seed).values;
    return optimize_slot(obj, std::move(init), seed, opts.optimizer);
  });
  e.sigmas = sigmas;
  return e;
}

PosteriorEnsemble deep_ensemble(const InverseProblem& problem, const LossWeights& weights,
                                const EnsembleOptions& opts) {
  const auto obj = QuadraticObjective::pinn(problem, weights);
  return run_ensemble(Method::deep_ensemble, problem, opts, [&](std::size_t k) {
    const std::uint64_t seed = opts.base_seed + k;
    return optimize_slot(obj, init_params(problem.layout(), seed).values, seed, opts.optimizer);
  });
}

OptimizeResult map_estimate(const InverseProblem& problem, const LossWeights& weights, std::uint64_t seed,
                            const OptimizerConfig& cfg) {
  const auto obj = QuadraticObjective::pinn(problem, weights);
  return adam_minimize([&](std::span<const double> x, std::span<double> g) { return obj(x, g); },
                       init_params(problem.layout(), seed).values, cfg);
}

LogDensityFn posterior_log_density(const InverseProblem& problem, const LikelihoodSigmas& sigmas) {
  auto obj = std::make_shared<QuadraticObjective>(QuadraticObjective::energy(problem, sigmas));
  return [obj](std::span<const double> x, std::span<double> grad) {
    const double e = (*obj)(x, grad);
    for (double& g : grad) g = -g;
    return -e;
  };
}

// ---- NUTS -------------------------------------------------------------------

void HmcConfig::validate() const {
  if (n_chains == 0) throw ArgumentError("hmc n_chains must be >= 1");
  if (n_samples == 0) throw ArgumentError("hmc n_samples must be >= 1");
  if (!(target_accept > 0.0 && target_accept < 1.0)) throw ArgumentError("hmc target acceptance must be in (0, 1)");
  if (max_tree_depth < 1 || max_tree_depth > 20) throw ArgumentError("hmc max tree depth must be in [1, 20]");
  if (!(initial_step >= 0.0)) throw ArgumentError("hmc initial step must be >= 0");
  if (!(max_energy_error > 0.0)) throw ArgumentError("hmc max energy error must be > 0");
}

namespace {

constexpr double kNegInf = -std::numeric_limits<double>::infinity();

double safe_log_density(const LogDensityFn& fn, std::span<const double> q, std::span<double> grad) {
  try {
    const double lp = fn(q, grad);
    if (!std::isfinite(lp)) return kNegInf;
    for (double g : grad) {
      if (!std::isfinite(g)) return kNegInf;
    }
    return lp;
  } catch (const NumericError&) {
    return kNegInf;
  }
}

double kinetic(const std::vector<double>& p) {
  double k = 0.0;
  for (double v : p) k += v * v;
  return 0.5 * k;
}

double joint(const PhaseState& s) { return s.log_p - kinetic(s.p); }

bool no_u_turn(const PhaseState& minus, const PhaseState& plus) {
  double a = 0.0, b = 0.0;
  for (std::size_t i = 0; i < minus.q.size(); ++i) {
    const double d = plus.q[i] - minus.q[i];
    a += d * minus.p[i];
    b += d * plus.p[i];
  }
  return a >= 0.0 && b >= 0.0;
}

struct Tree {
  PhaseState minus, plus, proposal;
  double n = 0.0;  // number of valid points (as a count)
  bool ok = true;
  double alpha = 0.0;
  double n_alpha = 0.0;
  bool divergent = false;
};

class Nuts {
 public:
  Nuts(const LogDensityFn& fn, const HmcConfig& cfg, std::mt19937_64& rng, std::size_t& grads)
      : fn_(fn), cfg_(cfg), rng_(rng), grads_(grads) {}

  Tree build(const PhaseState& s, double log_u, int dir, int depth, double eps, double joint0) {
    if (depth == 0) {
      Tree t;
      PhaseState next = s;
      leapfrog(fn_, next, dir * eps);
      ++grads_;
      const double j = std::isfinite(next.log_p) ? joint(next) : kNegInf;
      t.n = log_u <= j ? 1.0 : 0.0;
      t.ok = log_u < cfg_.max_energy_error + j;
      t.divergent = !t.ok;
      t.alpha = std::isfinite(j) ? std::min(1.0, std::exp(j - joint0)) : 0.0;
      t.n_alpha = 1.0;
      t.minus = next;
      t.plus = next;
      t.proposal = std::move(next);
      return t;
    }
    Tree t = build(s, log_u, dir, depth - 1, eps, joint0);
    if (!t.ok) return t;
    Tree u = build(dir < 0 ? t.minus : t.plus, log_u, dir, depth - 1, eps, joint0);
    if (dir < 0) {
      t.minus = std::move(u.minus);
    } else {
      t.plus = std::move(u.plus);
    }
    if (u.n > 0.0 && uniform_() * (t.n + u.n) < u.n) t.proposal = std::move(u.proposal);
    t.alpha += u.alpha;
    t.n_alpha += u.n_alpha;
    t.divergent = t.divergent || u.divergent;
    t.ok = u.ok && no_u_turn(t.minus, t.plus);
    t.n += u.n;
    return t;
  }

  double uniform_() { return std::uniform_real_distribution<double>(0.0, 1.0)(rng_); }

 private:
  const LogDensityFn& fn_;
  const HmcConfig& cfg_;
  std::mt19937_64& rng_;
  std::size_t& grads_;
};

double find_reasonable_step(const LogDensityFn& fn, const PhaseState& s0, std::mt19937_64& rng, std::size_t& grads) {
  std::normal_distribution<double> normal(0.0, 1.0);
  double eps = 1.0;
  PhaseState s = s0;
  for (double& v : s.p) v = normal(rng);
  const double j0 = joint(s);
  auto ratio = [&](double e) {
    PhaseState t = s;
    leapfrog(fn, t, e);
    ++grads;
    return std::isfinite(t.log_p) ? joint(t) - j0 : kNegInf;
  };
  double r = ratio(eps);
  const double a = r > std::log(0.5) ? 1.0 : -1.0;
  for (int i = 0; i < 100 && a * r > -a * std::log(2.0); ++i) {
    eps *= std::pow(2.0, a);
    r = ratio(eps);
  }
  return eps;
}

ChainResult run_chain(const LogDensityFn& fn, std::vector<double> init, const HmcConfig& cfg, std::mt19937_64& rng) {
  ChainResult out;
  PhaseState s;
  s.q = std::move(init);
  s.p.assign(s.q.size(), 0.0);
  s.grad.assign(s.q.size(), 0.0);
  s.log_p = safe_log_density(fn, s.q, s.grad);
  if (!std::isfinite(s.log_p)) throw NumericError("log density is not finite at the chain initial point");

  double eps = cfg.initial_step > 0.0 ? cfg.initial_step : find_reasonable_step(fn, s, rng, out.gradient_evaluations);
  const double mu = std::log(10.0 * eps);
  double h_bar = 0.0, log_eps_bar = 0.0;
  constexpr double gamma = 0.05, t0 = 10.0, kappa = 0.75;

  std::normal_distribution<double> normal(0.0, 1.0);
  std::uniform_real_distribution<double> unif(0.0, 1.0);
  Nuts nuts(fn, cfg, rng, out.gradient_evaluations);
  double accept_sum = 0.0;
  const std::size_t total = cfg.burn_in + cfg.n_samples;
  for (std::size_t m = 1; m <= total; ++m) {
    for (double& v : s.p) v = normal(rng);
    const double joint0 = joint(s);
    const double log_u = joint0 + std::log(unif(rng));
    PhaseState minus = s, plus = s;
    PhaseState next = s;
    double n = 1.0;
    double alpha = 0.0, n_alpha = 0.0;
    bool divergent = false;
    for (int depth = 0; depth < cfg.max_tree_depth; ++depth) {
      const int dir = unif(rng) < 0.5 ? -1 : 1;
      Tree t = nuts.build(dir < 0 ? minus : plus, log_u, dir, depth, eps, joint0);
      if (dir < 0) {
        minus = t.minus;
      } else {
        plus = t.plus;
      }
      alpha += t.alpha;
      n_alpha += t.n_alpha;
      divergent = divergent || t.divergent;
      if (t.ok && unif(rng) < t.n / n) next = t.proposal;
      n += t.n;
      if (!t.ok || !no_u_turn(minus, plus)) break;
    }
    s = std::move(next);
    const double stat = n_alpha > 0.0 ? alpha / n_alpha : 0.0;
    if (divergent) ++out.divergences;
    if (m <= cfg.burn_in) {
      const double md = static_cast<double>(m);
      h_bar = (1.0 - 1.0 / (md + t0)) * h_bar + (cfg.target_accept - stat) / (md + t0);
      const double log_eps = mu - std::sqrt(md) / gamma * h_bar;
      const double w = std::pow(md, -kappa);
      log_eps_bar = w * log_eps + (1.0 - w) * log_eps_bar;
      eps = std::exp(log_eps);
      if (m == cfg.burn_in) eps = std::exp(log_eps_bar);
      out.burn_in_log_density.push_back(s.log_p);
    } else {
      accept_sum += stat;
      out.samples.push_back(s.q);
      out.log_density.push_back(s.log_p);
    }
  }
  out.step_size = eps;
  out.mean_accept = accept_sum / static_cast<double>(cfg.n_samples);
  return out;
}

}  // namespace

void leapfrog(const LogDensityFn& fn, PhaseState& s, double eps) {
  const std::size_t n = s.q.size();
  for (std::size_t i = 0; i < n; ++i) s.p[i] += 0.5 * eps * s.grad[i];
  for (std::size_t i = 0; i < n; ++i) s.q[i] += eps * s.p[i];
  s.log_p = safe_log_density(fn, s.q, s.grad);
  if (!std::isfinite(s.log_p)) return;
  for (std::size_t i = 0; i < n; ++i) s.p[i] += 0.5 * eps * s.grad[i];
}

std::vector<ChainResult> nuts_sample(const LogDensityFn& fn, const std::vector<std::vector<double>>& inits,
                                     const HmcConfig& cfg, std::uint64_t seed, std::size_t workers) {
  cfg.validate();
  if (inits.empty()) throw ArgumentError("nuts_sample needs at least one chain");
  std::vector<ChainResult> chains(inits.size());
  parallel_for(inits.size(), workers, [&](std::size_t c) {
    std::mt19937_64 rng = make_rng(seed + c, Stream::chain);
    chains[c] = run_chain(fn, inits[c], cfg, rng);
  });
  return chains;
}

PosteriorEnsemble chains_to_ensemble(const std::vector<ChainResult>& chains, const InverseProblem& problem,
                                     const LikelihoodSigmas& sigmas, std::uint64_t seed) {
  PosteriorEnsemble e;
  e.method = Method::hmc;
  e.problem = problem.id();
  e.layout = problem.layout();
  e.sigmas = sigmas;
  std::size_t div = 0;
  for (std::size_t c = 0; c < chains.size(); ++c) {
    for (std::size_t i = 0; i < chains[c].samples.size(); ++i) {
      e.samples.push_back(chains[c].samples[i]);
      e.info.push_back({seed + c, -chains[c].log_density[i], 0, true, c});
    }
    div += chains[c].divergences;
    e.diagnostics["step_size_chain" + std::to_string(c)] = chains[c].step_size;
    e.diagnostics["accept_chain" + std::to_string(c)] = chains[c].mean_accept;
  }
  e.diagnostics["divergences"] = static_cast<double>(div);
  return e;
}

// ---- SVGD -------------------------------------------------------------------

void SvgdConfig::validate() const {
  if (n_particles == 0) throw ArgumentError("svgd needs at least one particle");
  if (!(learning_rate > 0.0)) throw ArgumentError("svgd learning rate must be > 0");
  if (!(beta1 > 0.0 && beta1 < 1.0) || !(beta2 > 0.0 && beta2 < 1.0)) {
    throw ArgumentError("svgd Adam betas must be in (0, 1)");
  }
}

std::vector<std::vector<double>> svgd_sample(const LogDensityFn& fn, std::vector<std::vector<double>> particles,
                                             const SvgdConfig& cfg, std::size_t workers,
                                             const std::function<void(std::size_t)>& progress) {
  cfg.validate();
  if (particles.empty()) throw ArgumentError("svgd needs at least one particle");
  const auto n = static_cast<Eigen::Index>(particles.size());
  const auto d = static_cast<Eigen::Index>(particles.front().size());
  Eigen::MatrixXd x(d, n);
  for (Eigen::Index i = 0; i < n; ++i) {
    if (particles[static_cast<std::size_t>(i)].size() != static_cast<std::size_t>(d)) {
      throw ArgumentError("svgd particles differ in dimension");
    }
    x.col(i) = Eigen::Map<const Eigen::VectorXd>(particles[static_cast<std::size_t>(i)].data(), d);
  }
  Eigen::MatrixXd grad(d, n), m = Eigen::MatrixXd::Zero(d, n), v = Eigen::MatrixXd::Zero(d, n);
  double b1t = 1.0, b2t = 1.0;
  for (std::size_t step = 0; step < cfg.n_steps; ++step) {
    parallel_for(static_cast<std::size_t>(n), workers, [&](std::size_t i) {
      const auto c = static_cast<Eigen::Index>(i);
      std::vector<double> xi(x.col(c).data(), x.col(c).data() + d);
      const double lp = fn(xi, std::span<double>(grad.col(c).data(), static_cast<std::size_t>(d)));
      if (!std::isfinite(lp) || !grad.col(c).allFinite()) {
        throw NumericError("svgd: non-finite log density or gradient at particle " + std::to_string(i));
      }
    });

    // Squared distances and the median bandwidth.
    const Eigen::VectorXd sq = x.colwise().squaredNorm().transpose();
    Eigen::MatrixXd d2 = (sq.replicate(1, n) + sq.transpose().replicate(n, 1) - 2.0 * x.transpose() * x).cwiseMax(0.0);
    double h = 1.0;
    if (n > 1) {
      std::vector<double> dist;
      dist.reserve(static_cast<std::size_t>(n * (n - 1) / 2));
      for (Eigen::Index j = 0; j < n; ++j) {
        for (Eigen::Index i = j + 1; i < n; ++i) dist.push_back(std::sqrt(d2(i, j)));
      }
      std::nth_element(dist.begin(), dist.begin() + static_cast<std::ptrdiff_t>(dist.size() / 2), dist.end());
      double med = dist[dist.size() / 2];
      if (dist.size() % 2 == 0) {
        med = 0.5 * (med + *std::max_element(dist.begin(), dist.begin() + static_cast<std::ptrdiff_t>(dist.size() / 2)));
      }
      h = med * med / std::log(static_cast<double>(n));
      if (!(h > 0.0)) h = 1.0;
    }
    const Eigen::MatrixXd k = (-d2 / h).array().exp().matrix();  // symmetric
    // phi_i = 1/n sum_j k_ji grad_j + 2/h sum_j k_ji (x_i - x_j)
    Eigen::MatrixXd phi = grad * k;
    const Eigen::RowVectorXd ksum = k.colwise().sum();
    phi += (2.0 / h) * (x.array().rowwise() * ksum.array()).matrix() - (2.0 / h) * (x * k);
    phi /= static_cast<double>(n);
    if (!phi.allFinite()) throw NumericError("svgd: non-finite update at step " + std::to_string(step));

    // Adam ascent along phi.
    b1t *= cfg.beta1;
    b2t *= cfg.beta2;
    m = cfg.beta1 * m - (1.0 - cfg.beta1) * phi;
    v = cfg.beta2 * v + (1.0 - cfg.beta2) * phi.cwiseAbs2();
    const double lr = cfg.learning_rate * std::sqrt(1.0 - b2t) / (1.0 - b1t);
    x.array() -= lr * m.array() / (v.array().sqrt() + cfg.epsilon * std::sqrt(1.0 - b2t));
    if (progress) progress(step);
  }
  for (Eigen::Index i = 0; i < n; ++i) {
    particles[static_cast<std::size_t>(i)].assign(x.col(i).data(), x.col(i).data() + d);
  }
  return particles;
}

}  // namespace rpinn

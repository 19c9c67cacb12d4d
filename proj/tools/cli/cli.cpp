#include "cli.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <iomanip>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <sstream>

#include <CLI11.hpp>
#include <spdlog/sinks/stdout_color_sinks.h>
#include <spdlog/spdlog.h>

#include "rpinn/errors.hpp"
#include "rpinn/io.hpp"
#include "rpinn/loss.hpp"
#include "rpinn/problems.hpp"
#include "rpinn/samplers.hpp"
#include "rpinn/stats.hpp"

namespace rpinn::cli {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

struct Common {
  std::string config;
  std::vector<std::string> sets;
  std::size_t parallel = 0;
  std::string out;
  bool quiet = false;
};

void setup_logging(bool quiet) {
  static const auto logger = [] {
    auto l = spdlog::stderr_color_mt("rpinn");
    l->set_pattern("[%H:%M:%S] %^%l%$ %v");
    return l;
  }();
  spdlog::set_default_logger(logger);
  spdlog::set_level(quiet ? spdlog::level::warn : spdlog::level::info);
}

ExperimentConfig resolve_config(const Common& c) {
  if (c.config.empty()) throw ConfigError("--config", "required: a config file or a preset name");
  json j;
  if (fs::exists(c.config)) {
    try {
      j = json::parse(read_file(c.config));
    } catch (const json::parse_error& e) {
      throw ConfigError("--config", "'" + c.config + "' is not valid JSON: " + e.what());
    }
  } else {
    const auto names = preset_names();
    if (std::find(names.begin(), names.end(), c.config) == names.end()) {
      throw ConfigError("--config", "'" + c.config + "' is neither a file nor a preset name");
    }
    j = {{"preset", c.config}};
  }
  for (const std::string& s : c.sets) apply_override(j, s);
  if (c.parallel > 0) j["sampler"]["workers"] = c.parallel;
  if (!c.out.empty()) j["output_dir"] = c.out;
  return parse_config(j);
}

bool is_1d(ProblemId p) { return p == ProblemId::linear_poisson || p == ProblemId::nonlinear_poisson; }

struct Context {
  ExperimentConfig cfg;
  fs::path out;
  Dataset data;
  std::optional<GridField> y_ref;
  std::optional<GridField> h_ref;
  std::unique_ptr<InverseProblem> problem;
  LossWeights weights;
  LikelihoodSigmas sigmas;
};

void generate(Context& ctx) {
  const ExperimentConfig& c = ctx.cfg;
  if (is_1d(c.problem)) {
    ctx.data = make_poisson_dataset(c.problem, c.n_f, c.sigma, c.data_seed);
  } else {
    DiffusionData d = make_diffusion_dataset(c.diffusion);
    ctx.data = std::move(d.data);
    ctx.y_ref = std::move(d.y_ref);
    ctx.h_ref = std::move(d.h_ref);
  }
}

// Uses <out>/dataset.json when present, otherwise regenerates the data from the
// config (generation is deterministic).
Context make_context(const ExperimentConfig& cfg, bool fresh) {
  Context ctx;
  ctx.cfg = cfg;
  ctx.out = cfg.output_dir;
  const fs::path ds = ctx.out / "dataset.json";
  if (!fresh && fs::exists(ds)) {
    ctx.data = load_dataset(ds);
    if (ctx.data.problem != cfg.problem) {
      throw ConfigError("problem", "the dataset in '" + ctx.out.string() + "' belongs to " + to_string(ctx.data.problem) +
                                       "; rerun generate-data or choose another --out");
    }
    if (ctx.data.seed != cfg.data_seed || ctx.data.noise_sigma != cfg.sigma) {
      spdlog::warn("dataset in {} was generated with seed {} / sigma {}; config says {} / {}", ctx.out.string(),
                   ctx.data.seed, ctx.data.noise_sigma, cfg.data_seed, cfg.sigma);
    }
    if (!is_1d(cfg.problem)) {
      if (fs::exists(ctx.out / "y_ref.csv") && fs::exists(ctx.out / "h_ref.csv")) {
        ctx.y_ref = load_grid(ctx.out / "y_ref.csv");
        ctx.h_ref = load_grid(ctx.out / "h_ref.csv");
      } else {
        DiffusionData d = make_diffusion_dataset(cfg.diffusion);
        ctx.y_ref = std::move(d.y_ref);
        ctx.h_ref = std::move(d.h_ref);
      }
    }
  } else {
    generate(ctx);
  }
  const auto nets = cfg.networks();
  if (is_1d(cfg.problem)) {
    ctx.problem = make_poisson_problem(ctx.data, nets[0]);
  } else {
    ctx.problem = make_diffusion_problem(ctx.data, nets[0], nets[1], ctx.y_ref, ctx.h_ref);
  }
  ctx.weights.lambda = cfg.weights;
  try {
    ctx.sigmas = sigmas_from_weights(ctx.weights, cfg.sigma, ctx.problem->terms(), cfg.sigma_mode,
                                     ctx.problem->anchor_term(), cfg.epsilon);
  } catch (const ArgumentError& e) {
    throw ConfigError("weights", e.what());
  }
  return ctx;
}

std::string fmt_g(double v) {
  if (std::isnan(v)) return "nan";
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

// ---- generate-data -----------------------------------------------------------

void cmd_generate(const Common& common) {
  const ExperimentConfig cfg = resolve_config(common);
  Context ctx;
  ctx.cfg = cfg;
  ctx.out = cfg.output_dir;
  generate(ctx);
  save_dataset(ctx.data, ctx.out / "dataset.json");
  if (ctx.y_ref) save_grid(*ctx.y_ref, ctx.out / "y_ref.csv");
  if (ctx.h_ref) save_grid(*ctx.h_ref, ctx.out / "h_ref.csv");
  save_config(cfg, ctx.out / "config.json");
  spdlog::info("wrote {} ({} source/y observations)", (ctx.out / "dataset.json").string(), ctx.data.y_obs.size());
}

// ---- map ---------------------------------------------------------------------

std::vector<double> compute_map(const Context& ctx) {
  spdlog::info("MAP fit: {} parameters, {} iterations max", ctx.problem->layout().total(),
               ctx.cfg.map_optimizer.max_iterations);
  const OptimizeResult r = map_estimate(*ctx.problem, ctx.weights, ctx.cfg.sampler_seed, ctx.cfg.map_optimizer);
  const fs::path dir = ctx.out / "map";
  std::ostringstream bin;
  write_binary(bin, ParameterVector{ctx.problem->layout(), r.x});
  write_file(dir / "params.bin", bin.str());
  const json info = {{"seed", ctx.cfg.sampler_seed},
                     {"loss", r.loss},
                     {"iterations", r.iterations},
                     {"converged", r.converged}};
  write_file(dir / "map.json", info.dump(2) + "\n");
  spdlog::info("MAP loss {:.6g} after {} iterations", r.loss, r.iterations);
  return r.x;
}

std::vector<double> map_for(const Context& ctx) {
  const fs::path p = ctx.out / "map" / "params.bin";
  if (fs::exists(p)) {
    std::istringstream in(read_file(p));
    ParameterVector pv = read_binary(in);
    if (pv.layout == ctx.problem->layout()) return pv.values;
    spdlog::warn("{} does not match the configured networks; refitting", p.string());
  }
  return compute_map(ctx);
}

void cmd_map(const Common& common) {
  const Context ctx = make_context(resolve_config(common), false);
  compute_map(ctx);
}

// ---- sample ------------------------------------------------------------------

std::function<void(std::size_t, const SampleInfo&)> progress_logger(const std::string& what, std::size_t n) {
  auto done = std::make_shared<std::atomic<std::size_t>>(0);
  const std::size_t every = std::max<std::size_t>(1, n / 10);
  return [done, every, n, what](std::size_t, const SampleInfo&) {
    const std::size_t k = ++*done;
    if (k % every == 0 || k == n) spdlog::info("{}: {}/{} samples", what, k, n);
  };
}

PosteriorEnsemble run_method(const Context& ctx, Method method, std::size_t n_ens) {
  const ExperimentConfig& c = ctx.cfg;
  const InverseProblem& problem = *ctx.problem;
  EnsembleOptions opts;
  opts.n_ens = n_ens;
  opts.base_seed = c.sampler_seed;
  opts.optimizer = c.optimizer;
  opts.workers = c.workers;
  opts.progress = progress_logger(to_string(method), n_ens);
  switch (method) {
    case Method::rpinn: {
      opts.init = c.init;
      if (c.init == InitPolicy::map) opts.map_estimate = map_for(ctx);
      spdlog::info("rpinn: {} samples, sigma_p = {:.4g}", n_ens, ctx.sigmas.prior);
      return rpinn_sample(problem, ctx.sigmas, opts);
    }
    case Method::deep_ensemble:
      spdlog::info("de: {} members", n_ens);
      return deep_ensemble(problem, ctx.weights, opts);
    case Method::hmc: {
      std::vector<std::vector<double>> inits;
      for (std::size_t k = 0; k < c.hmc.n_chains; ++k) {
        inits.push_back(init_params(problem.layout(), c.sampler_seed + k).values);
      }
      spdlog::info("hmc: {} chains x ({} burn-in + {} samples)", c.hmc.n_chains, c.hmc.burn_in, c.hmc.n_samples);
      const auto chains = nuts_sample(posterior_log_density(problem, ctx.sigmas), inits, c.hmc, c.sampler_seed, c.workers);
      for (std::size_t k = 0; k < chains.size(); ++k) {
        spdlog::info("hmc chain {}: step {:.3g}, accept {:.2f}, {} divergences", k, chains[k].step_size,
                     chains[k].mean_accept, chains[k].divergences);
      }
      return chains_to_ensemble(chains, problem, ctx.sigmas, c.sampler_seed);
    }
    case Method::svgd: {
      const LogDensityFn fn = posterior_log_density(problem, ctx.sigmas);
      std::vector<std::vector<double>> particles;
      for (std::size_t k = 0; k < c.svgd.n_particles; ++k) {
        particles.push_back(init_params(problem.layout(), c.sampler_seed + k).values);
      }
      spdlog::info("svgd: {} particles, {} steps", c.svgd.n_particles, c.svgd.n_steps);
      const std::size_t every = std::max<std::size_t>(1, c.svgd.n_steps / 10);
      particles = svgd_sample(fn, std::move(particles), c.svgd, c.workers, [&](std::size_t step) {
        if ((step + 1) % every == 0) spdlog::info("svgd: step {}/{}", step + 1, c.svgd.n_steps);
      });
      PosteriorEnsemble e;
      e.method = Method::svgd;
      e.problem = problem.id();
      e.layout = problem.layout();
      e.sigmas = ctx.sigmas;
      for (std::size_t k = 0; k < particles.size(); ++k) {
        SampleInfo info;
        info.seed = c.sampler_seed + k;
        info.loss = -fn(particles[k], {});
        info.iterations = c.svgd.n_steps;
        e.info.push_back(info);
      }
      e.samples = std::move(particles);
      return e;
    }
    case Method::map:
      break;
  }
  throw ArgumentError("method '" + to_string(method) + "' cannot be sampled");
}

fs::path ensemble_dir(const Context& ctx, Method m) { return ctx.out / "ensembles" / to_string(m); }

// Wall-clock times live outside the ensembles and summaries so that repeated
// runs stay bitwise identical.
void record_time(const fs::path& out, Method m, double seconds) {
  const fs::path p = out / "timing.json";
  json j = json::object();
  if (fs::exists(p)) {
    try {
      j = json::parse(read_file(p));
    } catch (const json::parse_error&) {
      j = json::object();
    }
  }
  j[to_string(m)] = seconds;
  write_file(p, j.dump(2) + "\n");
}

PosteriorEnsemble sample_and_save(const Context& ctx, Method m, std::size_t n_ens, double* seconds) {
  const auto t0 = std::chrono::steady_clock::now();
  PosteriorEnsemble e = run_method(ctx, m, n_ens);
  const double dt = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  save_ensemble(e, ensemble_dir(ctx, m));
  record_time(ctx.out, m, dt);
  if (e.n_failed > 0) spdlog::warn("{}: {} optimizations failed and were excluded", to_string(m), e.n_failed);
  spdlog::info("{}: {} samples in {:.1f} s -> {}", to_string(m), e.size(), dt, ensemble_dir(ctx, m).string());
  if (seconds != nullptr) *seconds = dt;
  return e;
}

void cmd_sample(const Common& common, const std::string& method_name, std::size_t n_ens) {
  ExperimentConfig cfg = resolve_config(common);
  if (!method_name.empty()) {
    try {
      cfg.method = parse_method(method_name);
    } catch (const ArgumentError& e) {
      throw ConfigError("--method", e.what());
    }
    if (cfg.method == Method::map) throw ConfigError("--method", "use the map subcommand for a single MAP fit");
  }
  if (n_ens > 0) cfg.n_ens = n_ens;
  const Context ctx = make_context(cfg, false);
  sample_and_save(ctx, cfg.method, cfg.n_ens, nullptr);
}

// ---- compare / table ---------------------------------------------------------

std::vector<SummaryRow> evaluate(const Context& ctx, const PosteriorEnsemble& e, double seconds) {
  std::vector<SummaryRow> rows;
  const auto pts = ctx.problem->eval_points();
  for (const std::string& field : ctx.problem->fields()) {
    const PredictiveField pred = predictive_moments(e, *ctx.problem, field, pts);
    const Eigen::VectorXd ref = ctx.problem->reference(field, pts);
    rows.push_back(summarize(to_string(e.method), field, pred, ref, seconds));

    std::string csv = "x1,x2,mean,std,reference\n";
    for (std::size_t i = 0; i < pts.size(); ++i) {
      const auto k = static_cast<Eigen::Index>(i);
      csv += fmt_g(pts[i][0]) + "," + fmt_g(pts[i][1]) + "," + fmt_g(pred.mean(k)) + "," + fmt_g(pred.std(k)) + "," +
             fmt_g(ref(k)) + "\n";
    }
    write_file(ctx.out / "predictions" / (to_string(e.method) + "_" + field + ".csv"), csv);
  }
  return rows;
}

void cmd_compare(const Common& common) {
  const ExperimentConfig cfg = resolve_config(common);
  const Context ctx = make_context(cfg, false);
  save_config(cfg, ctx.out / "config.json");
  std::vector<SummaryRow> rows;
  for (Method m : cfg.compare_methods) {
    double dt = 0.0;
    const PosteriorEnsemble e = sample_and_save(ctx, m, cfg.n_ens, &dt);
    for (SummaryRow r : evaluate(ctx, e, dt)) {
      r.seconds = std::numeric_limits<double>::quiet_NaN();
      rows.push_back(r);
    }
  }
  write_summary(rows, ctx.out / "summary.csv");
  spdlog::info("wrote {}", (ctx.out / "summary.csv").string());
}

std::string markdown_table(const std::vector<SummaryRow>& rows, const LikelihoodSigmas& s) {
  std::ostringstream md;
  md << "sigma:";
  for (const auto& [k, v] : s.term) md << " sigma_" << k << " = " << std::setprecision(3) << v << ",";
  md << " sigma_p = " << std::setprecision(4) << s.prior << "\n\n";
  md << "| Method | Field | rl2 | linf | avg std | LPP | Coverage | Time (s) |\n";
  md << "|---|---|---|---|---|---|---|---|\n";
  for (const SummaryRow& r : rows) {
    char lpp[32], t[32];
    std::snprintf(lpp, sizeof lpp, "%.0f", r.lpp);
    if (std::isnan(r.seconds)) {
      t[0] = '\0';
    } else {
      std::snprintf(t, sizeof t, "%.1f", r.seconds);
    }
    md << "| " << r.method << " | " << r.field << " | " << format_sci2(r.rl2) << " | " << format_sci2(r.linf) << " | "
       << format_sci2(r.avg_std) << " | " << lpp << " | " << format_coverage(r.coverage) << " | " << t << " |\n";
  }
  return md.str();
}

void cmd_table(const Common& common) {
  const Context ctx = make_context(resolve_config(common), false);
  json timing = json::object();
  if (fs::exists(ctx.out / "timing.json")) timing = json::parse(read_file(ctx.out / "timing.json"));
  std::vector<SummaryRow> rows;
  for (Method m : {Method::rpinn, Method::hmc, Method::svgd, Method::deep_ensemble}) {
    const fs::path dir = ensemble_dir(ctx, m);
    if (!fs::exists(dir / "manifest.json")) continue;
    const PosteriorEnsemble e = load_ensemble(dir);
    if (!(e.layout == ctx.problem->layout())) {
      throw IoError("ensemble '" + dir.string() + "' does not match the configured networks");
    }
    const double t = timing.contains(to_string(m)) ? timing[to_string(m)].get<double>()
                                                    : std::numeric_limits<double>::quiet_NaN();
    for (const SummaryRow& r : evaluate(ctx, e, t)) rows.push_back(r);
  }
  if (rows.empty()) throw IoError("no ensembles found under '" + (ctx.out / "ensembles").string() + "'");
  write_summary(rows, ctx.out / "table.csv");
  const std::string md = markdown_table(rows, ctx.sigmas);
  write_file(ctx.out / "table.md", md);
  std::cout << md;
}

// ---- diagnose ----------------------------------------------------------------

using Chains = std::vector<std::vector<std::vector<double>>>;

Chains read_chains_csv(const fs::path& path) {
  std::istringstream in(read_file(path));
  std::string line;
  if (!std::getline(in, line) || !line.starts_with("chain,draw")) {
    throw IoError("chains CSV '" + path.string() + "' must start with a 'chain,draw,...' header");
  }
  std::map<std::string, std::size_t> index;
  Chains chains;
  std::size_t lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    std::stringstream ss(line);
    std::string cell, chain;
    std::getline(ss, chain, ',');
    std::getline(ss, cell, ',');  // draw
    std::vector<double> v;
    while (std::getline(ss, cell, ',')) {
      try {
        v.push_back(std::stod(cell));
      } catch (const std::logic_error&) {
        throw IoError("chains CSV line " + std::to_string(lineno) + ": bad number '" + cell + "'");
      }
    }
    if (v.empty()) throw IoError("chains CSV line " + std::to_string(lineno) + " has no parameter values");
    auto [it, inserted] = index.emplace(chain, chains.size());
    if (inserted) chains.emplace_back();
    chains[it->second].push_back(std::move(v));
  }
  return chains;
}

std::string join_row(std::initializer_list<std::string> head, const std::vector<double>& tail) {
  std::string s;
  for (const auto& h : head) s += (s.empty() ? "" : ",") + h;
  for (double v : tail) s += "," + fmt_g(v);
  return s + "\n";
}

std::vector<double> linspace(double a, double b, std::size_t n) {
  std::vector<double> v(n);
  for (std::size_t i = 0; i < n; ++i) v[i] = n == 1 ? a : a + (b - a) * static_cast<double>(i) / static_cast<double>(n - 1);
  return v;
}

// JSON has no infinity; non-finite values are written as strings.
json json_number(double v) { return std::isfinite(v) ? json(v) : json(fmt_g(v)); }

struct DiagnoseOptions {
  std::string chains_csv;
  std::string ensemble;
  bool split = false;
  std::size_t subspace = 0;
  double lo = -0.5;
  double hi = 1.5;
  std::size_t hessian = 0;
  std::size_t bins = 20;
};

void cmd_diagnose(const Common& common, const DiagnoseOptions& o) {
  std::optional<Context> ctx;
  Chains chains;
  fs::path out = common.out.empty() ? fs::path("out") : fs::path(common.out);
  if (!o.chains_csv.empty()) {
    chains = read_chains_csv(o.chains_csv);
    if (!common.config.empty()) {
      ctx = make_context(resolve_config(common), false);
      out = ctx->out;
    }
  } else {
    ctx = make_context(resolve_config(common), false);
    out = ctx->out;
    const fs::path dir = o.ensemble.empty() ? ensemble_dir(*ctx, Method::hmc) : fs::path(o.ensemble);
    const PosteriorEnsemble e = load_ensemble(dir);
    for (std::size_t i = 0; i < e.size(); ++i) {
      const std::size_t c = e.info[i].chain;
      if (c >= chains.size()) chains.resize(c + 1);
      chains[c].push_back(e.samples[i]);
    }
  }
  if (chains.size() < 2) throw ArgumentError("diagnose needs at least two chains");
  const fs::path dir = out / "diagnose";

  const Eigen::VectorXd r = rhat(chains, o.split);
  std::string csv = "param,rhat\n";
  for (Eigen::Index k = 0; k < r.size(); ++k) csv += std::to_string(k) + "," + fmt_g(r(k)) + "\n";
  write_file(dir / "rhat.csv", csv);

  // Histogram over finite values; infinite R-hat (zero within-chain variance)
  // is counted separately.
  std::vector<double> finite;
  for (Eigen::Index k = 0; k < r.size(); ++k) {
    if (std::isfinite(r(k))) finite.push_back(r(k));
  }
  std::string hist = "lo,hi,count\n";
  if (!finite.empty()) {
    const double lo = *std::min_element(finite.begin(), finite.end());
    const double hi = *std::max_element(finite.begin(), finite.end());
    const std::size_t nb = std::max<std::size_t>(1, o.bins);
    const double w = hi > lo ? (hi - lo) / static_cast<double>(nb) : 1.0;
    std::vector<std::size_t> counts(nb, 0);
    for (double v : finite) counts[std::min(nb - 1, static_cast<std::size_t>((v - lo) / w))]++;
    for (std::size_t b = 0; b < nb; ++b) {
      hist += fmt_g(lo + w * static_cast<double>(b)) + "," + fmt_g(lo + w * static_cast<double>(b + 1)) + "," +
              std::to_string(counts[b]) + "\n";
    }
  }
  const auto n_inf = static_cast<std::size_t>(r.size()) - finite.size();
  if (n_inf > 0) hist += "inf,inf," + std::to_string(n_inf) + "\n";
  write_file(dir / "rhat_hist.csv", hist);

  Eigen::Index i_min = 0, i_max = 0;
  for (Eigen::Index k = 1; k < r.size(); ++k) {
    if (std::abs(r(k) - 1.0) < std::abs(r(i_min) - 1.0)) i_min = k;
    if (r(k) > r(i_max) || std::isnan(r(i_max))) i_max = k;
  }
  std::string traces = "chain,draw,p" + std::to_string(i_min) + ",p" + std::to_string(i_max) + "\n";
  for (std::size_t c = 0; c < chains.size(); ++c) {
    for (std::size_t d = 0; d < chains[c].size(); ++d) {
      traces += join_row({std::to_string(c), std::to_string(d)},
                         {chains[c][d][static_cast<std::size_t>(i_min)], chains[c][d][static_cast<std::size_t>(i_max)]});
    }
  }
  write_file(dir / "traces.csv", traces);

  json summary = {{"n_chains", chains.size()},
                  {"n_draws", chains.front().size()},
                  {"n_params", r.size()},
                  {"split", o.split},
                  {"max_rhat", json_number(r.maxCoeff())},
                  {"min_rhat", json_number(r.minCoeff())},
                  {"param_closest_to_one", i_min},
                  {"param_max_rhat", i_max}};
  std::size_t above = 0;
  for (Eigen::Index k = 0; k < r.size(); ++k) above += r(k) > 1.1 ? 1 : 0;
  summary["n_above_1_1"] = above;
  spdlog::info("R-hat over {} parameters: max {}, min {}, {} above 1.1", r.size(), fmt_g(r.maxCoeff()),
               fmt_g(r.minCoeff()), above);

  if (ctx) {
    const LogDensityFn logp = posterior_log_density(*ctx->problem, ctx->sigmas);
    const std::size_t dim = ctx->problem->layout().total();
    if (chains.front().front().size() != dim) throw ArgumentError("chain dimension does not match the configured networks");
    std::vector<std::size_t> best(chains.size(), 0);
    std::vector<double> best_lp(chains.size(), -std::numeric_limits<double>::infinity());
    std::string ld = "chain,draw,log_density\n";
    for (std::size_t c = 0; c < chains.size(); ++c) {
      for (std::size_t d = 0; d < chains[c].size(); ++d) {
        double lp = -std::numeric_limits<double>::infinity();
        try {
          lp = logp(chains[c][d], {});
        } catch (const NumericError&) {
        }
        if (lp > best_lp[c]) {
          best_lp[c] = lp;
          best[c] = d;
        }
        ld += std::to_string(c) + "," + std::to_string(d) + "," + fmt_g(lp) + "\n";
      }
    }
    write_file(dir / "log_density.csv", ld);

    if (o.subspace > 0) {
      if (chains.size() < 3) throw ArgumentError("the subspace grid needs at least three chains");
      const auto& t1 = chains[0][best[0]];
      const auto& t2 = chains[1][best[1]];
      const auto& t3 = chains[2][best[2]];
      const auto a = linspace(o.lo, o.hi, o.subspace);
      const SubspaceGrid g = subspace_grid(
          t1, t2, t3, a, a,
          [&](std::span<const double> th) {
            try {
              return logp(th, {});
            } catch (const NumericError&) {
              return -std::numeric_limits<double>::infinity();
            }
          },
          ctx->cfg.workers);
      std::string sc = "a,b,u,v,log_density\n";
      for (std::size_t i = 0; i < a.size(); ++i) {
        for (std::size_t j = 0; j < a.size(); ++j) {
          const auto ii = static_cast<Eigen::Index>(i), jj = static_cast<Eigen::Index>(j);
          sc += fmt_g(a[i]) + "," + fmt_g(a[j]) + "," + fmt_g(g.coord_u(ii, jj)) + "," + fmt_g(g.coord_v(ii, jj)) + "," +
                fmt_g(g.log_density(ii, jj)) + "\n";
        }
      }
      write_file(dir / "subspace.csv", sc);
      std::string anchors;
      anchors += join_row({"theta1", "0", std::to_string(best[0])}, t1);
      anchors += join_row({"theta2", "1", std::to_string(best[1])}, t2);
      anchors += join_row({"theta3", "2", std::to_string(best[2])}, t3);
      write_file(dir / "subspace_anchors.csv", anchors);
      summary["subspace"] = {{"points", o.subspace}, {"range", {o.lo, o.hi}}};
    }

    if (o.hessian > 0) {
      const ad::ScalarFn neg = QuadraticObjective::energy(*ctx->problem, ctx->sigmas).as_scalar_fn();
      std::string hc = "chain,rank,eigenvalue\n";
      for (std::size_t c = 0; c < chains.size(); ++c) {
        spdlog::info("Hessian spectrum at the best draw of chain {}", c);
        const Eigen::VectorXd ev = hessian_eigenspectrum(neg, chains[c][best[c]], o.hessian);
        for (Eigen::Index k = 0; k < ev.size(); ++k) {
          hc += std::to_string(c) + "," + std::to_string(k) + "," + fmt_g(ev(k)) + "\n";
        }
      }
      write_file(dir / "hessian.csv", hc);
    }
  }
  write_file(dir / "diagnose.json", summary.dump(2) + "\n");
}

void add_common(CLI::App* app, Common& c) {
  app->add_option("-c,--config", c.config, "Config file or preset name");
  app->add_option("--set", c.sets, "Override a config value, e.g. sampler.n_ens=4 (repeatable)");
  app->add_option("-j,--parallel", c.parallel, "Worker threads (overrides sampler.workers)");
  app->add_option("-o,--out", c.out, "Output directory (overrides output_dir)");
  app->add_flag("-q,--quiet", c.quiet, "Only log warnings and errors");
}

int dispatch(int argc, const char* const* argv) {
  CLI::App app{"Posterior sampling for physics-informed neural networks", "rpinn"};
  app.require_subcommand(1, 1);

  Common common;
  std::string method;
  std::size_t n_ens = 0;
  DiagnoseOptions diag;

  auto* gen = app.add_subcommand("generate-data", "Generate the synthetic dataset and reference fields");
  auto* map = app.add_subcommand("map", "Single deterministic PINN fit (MAP estimate)");
  auto* sample = app.add_subcommand("sample", "Draw a posterior ensemble with one method");
  auto* compare = app.add_subcommand("compare", "Sample every configured method and write summary.csv");
  auto* table = app.add_subcommand("table", "Summarize the saved ensembles (table.csv, table.md)");
  auto* diagnose = app.add_subcommand("diagnose", "R-hat, traces, log densities, subspace grid, Hessian spectrum");
  auto* presets = app.add_subcommand("presets", "List the shipped presets");
  std::string preset_dir;
  presets->add_option("--write", preset_dir, "Write every preset, fully expanded, as DIR/<name>.json");
  for (auto* s : {gen, map, sample, compare, table, diagnose}) add_common(s, common);
  sample->add_option("-m,--method", method, "rpinn, de, hmc or svgd")
      ->check(CLI::IsMember({"rpinn", "de", "hmc", "svgd"}));
  sample->add_option("-n,--n-ens", n_ens, "Ensemble size (overrides sampler.n_ens)");
  diagnose->add_option("--chains-csv", diag.chains_csv, "CSV with columns chain,draw,p0,p1,...");
  diagnose->add_option("--ensemble", diag.ensemble, "Ensemble directory (default <out>/ensembles/hmc)");
  diagnose->add_flag("--split", diag.split, "Split-chain R-hat");
  diagnose->add_option("--subspace", diag.subspace, "Points per axis of the 2D subspace grid (0: off)");
  diagnose->add_option("--subspace-min", diag.lo, "Lower lattice coordinate");
  diagnose->add_option("--subspace-max", diag.hi, "Upper lattice coordinate");
  diagnose->add_option("--hessian", diag.hessian, "Number of top Hessian eigenvalues per chain (0: off)");
  diagnose->add_option("--bins", diag.bins, "R-hat histogram bins");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kExitConfig;
  }
  setup_logging(common.quiet);

  if (presets->parsed()) {
    for (const auto& n : preset_names()) {
      std::cout << n << "\n";
      if (!preset_dir.empty()) save_config(parse_config({{"preset", n}}), fs::path(preset_dir) / (n + ".json"));
    }
  } else if (gen->parsed()) {
    cmd_generate(common);
  } else if (map->parsed()) {
    cmd_map(common);
  } else if (sample->parsed()) {
    cmd_sample(common, method, n_ens);
  } else if (compare->parsed()) {
    cmd_compare(common);
  } else if (table->parsed()) {
    cmd_table(common);
  } else if (diagnose->parsed()) {
    cmd_diagnose(common, diag);
  }
  return kExitOk;
}

int guarded(int argc, const char* const* argv) {
  try {
    return dispatch(argc, argv);
  } catch (const ConfigError& e) {
    spdlog::error("{}", e.what());
    return kExitConfig;
  } catch (const ArgumentError& e) {
    spdlog::error("{}", e.what());
    return kExitConfig;
  } catch (const NumericError& e) {
    spdlog::error("numeric failure: {}", e.what());
    return kExitNumeric;
  } catch (const IoError& e) {
    spdlog::error("I/O error: {}", e.what());
    return kExitIo;
  } catch (const std::exception& e) {
    spdlog::error("{}", e.what());
    return kExitOther;
  }
}

}  // namespace

int run(int argc, char** argv) { return guarded(argc, argv); }

int run(const std::vector<std::string>& args) {
  std::vector<const char*> argv{"rpinn"};
  for (const auto& a : args) argv.push_back(a.c_str());
  return guarded(static_cast<int>(argv.size()), argv.data());
}

}  // namespace rpinn::cli

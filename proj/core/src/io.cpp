#include "rpinn/io.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <set>
#include <sstream>

#include <zlib.h>

#include "rpinn/errors.hpp"

namespace rpinn {

namespace fs = std::filesystem;
using nlohmann::json;

// ---- files ------------------------------------------------------------------

std::string read_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open '" + path.string() + "' for reading");
  std::ostringstream ss;
  ss << in.rdbuf();
  if (in.bad()) throw IoError("read failed for '" + path.string() + "'");
  return ss.str();
}

void write_file(const fs::path& path, const std::string& content) {
  std::error_code ec;
  if (path.has_parent_path()) fs::create_directories(path.parent_path(), ec);
  if (ec) throw IoError("cannot create directory '" + path.parent_path().string() + "': " + ec.message());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open '" + path.string() + "' for writing");
  out.write(content.data(), static_cast<std::streamsize>(content.size()));
  out.close();
  if (!out) throw IoError("write failed for '" + path.string() + "'");
}

namespace {

json parse_json_text(const std::string& text, const std::string& what) {
  try {
    return json::parse(text);
  } catch (const json::parse_error& e) {
    throw IoError(what + " is not valid JSON: " + e.what());
  }
}

// Non-finite doubles are stored as the strings "inf", "-inf" and "nan".
json number(double v) {
  if (std::isfinite(v)) return v;
  if (std::isnan(v)) return "nan";
  return v > 0 ? "inf" : "-inf";
}

double to_number(const json& j) {
  if (j.is_number()) return j.get<double>();
  if (j.is_string()) {
    const auto& s = j.get_ref<const std::string&>();
    if (s == "nan") return std::numeric_limits<double>::quiet_NaN();
    if (s == "inf") return std::numeric_limits<double>::infinity();
    if (s == "-inf") return -std::numeric_limits<double>::infinity();
  }
  throw IoError("expected a number, got " + j.dump());
}

// ---- config reading with field paths ---------------------------------------

bool is_count(const json& v) {
  return v.is_number_unsigned() || (v.is_number_integer() && v.get<std::int64_t>() >= 0);
}

class Reader {
 public:
  Reader(const json& j, std::string path) : j_(j), path_(std::move(path)) {
    if (!j_.is_object()) throw ConfigError(path_.empty() ? "<root>" : path_, "expected an object");
  }

  std::string field(const std::string& key) const { return path_.empty() ? key : path_ + "." + key; }
  bool has(const std::string& key) const { return j_.contains(key); }

  Reader child(const std::string& key) const {
    used_.insert(key);
    return Reader(j_.at(key), field(key));
  }

  template <class T>
  void get(const std::string& key, T& out) const {
    if (!has(key)) return;
    used_.insert(key);
    const json& v = j_.at(key);
    try {
      if constexpr (std::is_same_v<T, std::size_t> || std::is_same_v<T, std::uint64_t>) {
        if (!is_count(v)) {
          throw ConfigError(field(key), "expected a non-negative integer, got " + v.dump());
        }
      } else if constexpr (std::is_same_v<T, int>) {
        if (!v.is_number_integer()) throw ConfigError(field(key), "expected an integer, got " + v.dump());
      } else if constexpr (std::is_same_v<T, double>) {
        if (!v.is_number()) throw ConfigError(field(key), "expected a number, got " + v.dump());
      } else if constexpr (std::is_same_v<T, std::string>) {
        if (!v.is_string()) throw ConfigError(field(key), "expected a string, got " + v.dump());
      }
      out = v.get<T>();
    } catch (const json::exception& e) {
      throw ConfigError(field(key), std::string("wrong type: ") + e.what());
    }
  }

  template <class T, class Parse>
  void get_enum(const std::string& key, T& out, Parse parse) const {
    std::string s;
    if (!has(key)) return;
    get(key, s);
    try {
      out = parse(s);
    } catch (const ArgumentError& e) {
      throw ConfigError(field(key), e.what());
    }
  }

  void get_widths(const std::string& key, std::vector<std::size_t>& out) const {
    if (!has(key)) return;
    used_.insert(key);
    const json& v = j_.at(key);
    if (!v.is_array()) throw ConfigError(field(key), "expected an array of layer widths");
    out.clear();
    for (const json& w : v) {
      if (!is_count(w) || w.get<std::size_t>() == 0) {
        throw ConfigError(field(key), "layer widths must be positive integers, got " + w.dump());
      }
      out.push_back(w.get<std::size_t>());
    }
  }

  // Unknown keys are configuration mistakes (usually typos).
  void finish(const std::set<std::string>& ignored = {}) const {
    for (const auto& [k, v] : j_.items()) {
      if (!used_.contains(k) && !ignored.contains(k)) throw ConfigError(field(k), "unknown field");
    }
  }

  void forbid(const std::string& key, const std::string& why) const {
    if (has(key)) throw ConfigError(field(key), why);
  }

 private:
  const json& j_;
  std::string path_;
  mutable std::set<std::string> used_;
};

void read_optimizer(const Reader& r, OptimizerConfig& o) {
  r.get("learning_rate", o.learning_rate);
  r.get("max_iterations", o.max_iterations);
  r.get("beta1", o.beta1);
  r.get("beta2", o.beta2);
  r.get("epsilon", o.epsilon);
  r.get("grad_tolerance", o.grad_tolerance);
  r.finish();
}

json optimizer_json(const OptimizerConfig& o) {
  return {{"learning_rate", o.learning_rate}, {"max_iterations", o.max_iterations}, {"beta1", o.beta1},
          {"beta2", o.beta2},                 {"epsilon", o.epsilon},               {"grad_tolerance", o.grad_tolerance}};
}

bool is_1d(ProblemId p) { return p == ProblemId::linear_poisson || p == ProblemId::nonlinear_poisson; }

std::vector<std::size_t> default_hidden(ProblemId p) {
  return is_1d(p) ? poisson_network().hidden_widths : diffusion_network().hidden_widths;
}

// Default weights: the 1D values that give the smallest PINN error, and equal
// weights (the h-network size) for the diffusion problem.
std::map<std::string, double> default_weight_map(const ExperimentConfig& c) {
  std::map<std::string, double> w;
  if (is_1d(c.problem)) return {{"f", 27000.0}, {"b", 2700.0}};
  const double n = static_cast<double>(count_params({2, c.hidden, 1, Activation::tanh}));
  for (const char* t : {"r", "dbr", "nbl", "nbt", "nbb", "y", "h"}) w[t] = n;
  return w;
}

template <class F>
void wrap_validate(const std::string& field, F&& fn) {
  try {
    fn();
  } catch (const ArgumentError& e) {
    throw ConfigError(field, e.what());
  }
}

}  // namespace

// ---- ExperimentConfig --------------------------------------------------------

std::vector<MlpSpec> ExperimentConfig::networks() const {
  if (is_1d(problem)) return {MlpSpec{1, hidden, 1, Activation::tanh}};
  return {MlpSpec{2, hidden, 1, Activation::tanh}, MlpSpec{2, hidden_y, 1, Activation::tanh}};
}

void ExperimentConfig::validate() const {
  if (problem == ProblemId::linear_model) throw ConfigError("problem", "expected linear_poisson, nonlinear_poisson or diffusion_2d");
  if (!(sigma > 0.0) || !std::isfinite(sigma)) throw ConfigError("sigma", "must be a finite number > 0");
  if (is_1d(problem)) {
    if (n_f < 2) throw ConfigError("data.n_f", "must be >= 2");
  } else {
    const DiffusionSetup& d = diffusion;
    if (d.grid.nx == 0) throw ConfigError("data.grid.nx", "must be >= 1");
    if (d.grid.ny == 0) throw ConfigError("data.grid.ny", "must be >= 1");
    if (d.grid.cells() > kMaxGrfCells) {
      throw ConfigError("data.grid", "at most " + std::to_string(kMaxGrfCells) + " cells are supported");
    }
    if (!(d.grid.length_x > 0.0)) throw ConfigError("data.grid.length_x", "must be > 0");
    if (!(d.grid.length_y > 0.0)) throw ConfigError("data.grid.length_y", "must be > 0");
    if (d.n_obs == 0 || d.n_obs > d.grid.cells()) throw ConfigError("data.n_obs", "must be in [1, number of grid cells]");
    if (d.n_r == 0) throw ConfigError("data.n_r", "must be >= 1");
    if (d.n_dbr == 0) throw ConfigError("data.n_dbr", "must be >= 1");
    if (d.n_nbl == 0) throw ConfigError("data.n_nbl", "must be >= 1");
    if (d.n_nbt == 0) throw ConfigError("data.n_nbt", "must be >= 1");
    if (d.n_nbb == 0) throw ConfigError("data.n_nbb", "must be >= 1");
    if (!(d.prior.variance > 0.0)) throw ConfigError("data.grf.variance", "must be > 0");
    if (!(d.prior.correlation_length > 0.0)) throw ConfigError("data.grf.correlation_length", "must be > 0");
    if (hidden_y.empty()) throw ConfigError("network_y.hidden", "needs at least one hidden layer");
  }
  if (hidden.empty()) throw ConfigError("network.hidden", "needs at least one hidden layer");
  for (const TermInfo& t : config_terms(*this)) {
    auto it = weights.find(t.name);
    if (it == weights.end()) throw ConfigError("weights." + t.name, "missing weight");
    if (!(it->second > 0.0) || !std::isfinite(it->second)) throw ConfigError("weights." + t.name, "must be finite and > 0");
  }
  for (const auto& [name, w] : weights) {
    const auto terms = config_terms(*this);
    if (std::none_of(terms.begin(), terms.end(), [&](const TermInfo& t) { return t.name == name; })) {
      throw ConfigError("weights." + name, "not a loss term of this problem");
    }
  }
  if (!(epsilon >= 0.0) || !std::isfinite(epsilon)) throw ConfigError("epsilon", "must be finite and >= 0");
  if (method == Method::map) throw ConfigError("sampler.method", "expected rpinn, de, hmc or svgd");
  if (n_ens == 0) throw ConfigError("sampler.n_ens", "must be >= 1");
  if (workers == 0) throw ConfigError("sampler.workers", "must be >= 1");
  wrap_validate("optimizer", [&] { optimizer.validate(); });
  wrap_validate("map_optimizer", [&] { map_optimizer.validate(); });
  wrap_validate("hmc", [&] { hmc.validate(); });
  wrap_validate("svgd", [&] { svgd.validate(); });
  if (compare_methods.empty()) throw ConfigError("compare.methods", "needs at least one method");
  for (Method m : compare_methods) {
    if (m == Method::map) throw ConfigError("compare.methods", "expected rpinn, de, hmc or svgd");
  }
  if (output_dir.empty()) throw ConfigError("output_dir", "must not be empty");
}

std::vector<TermInfo> config_terms(const ExperimentConfig& c) {
  if (is_1d(c.problem)) return {{"f", c.n_f}, {"b", 2}};
  const DiffusionSetup& d = c.diffusion;
  return {{"r", d.n_r}, {"dbr", d.n_dbr}, {"nbl", d.n_nbl}, {"nbt", d.n_nbt},
          {"nbb", d.n_nbb}, {"y", d.n_obs}, {"h", d.n_obs}};
}

std::string config_anchor(const ExperimentConfig& c) { return is_1d(c.problem) ? "f" : "y"; }

LikelihoodSigmas config_sigmas(const ExperimentConfig& c) {
  LossWeights w{c.weights};
  return sigmas_from_weights(w, c.sigma, config_terms(c), c.sigma_mode, config_anchor(c), c.epsilon);
}

// ---- presets -----------------------------------------------------------------

namespace {

json poisson_preset(const std::string& problem, std::size_t n_f, double sigma, bool desk) {
  json j = {{"problem", problem}, {"sigma", sigma}, {"data", {{"seed", 1}, {"n_f", n_f}}}};
  if (!desk) {
    const bool linear = problem == "linear_poisson";
    j["hmc"] = {{"n_chains", linear ? 4 : 6}, {"burn_in", linear ? 50000 : 100000}, {"n_samples", 1000}};
    j["compare"] = {{"methods", {"rpinn", "hmc", "svgd", "de"}}};
  }
  return j;
}

json diffusion_preset(double sigma) {
  return {{"problem", "diffusion_2d"}, {"sigma", sigma}, {"data", {{"seed", 1}}}};
}

const std::map<std::string, json>& presets() {
  static const std::map<std::string, json> table = [] {
    std::map<std::string, json> t;
    for (std::size_t n : {32, 128}) {
      for (const char* s : {"0.1", "0.01"}) {
        t["linear_poisson_Nf" + std::to_string(n) + "_sigma" + s] =
            poisson_preset("linear_poisson", n, std::stod(s), false);
      }
    }
    for (const char* s : {"0.1", "0.01"}) {
      t[std::string("nonlinear_poisson_Nf32_sigma") + s] = poisson_preset("nonlinear_poisson", 32, std::stod(s), false);
    }
    for (const char* s : {"1", "0.1", "0.01"}) t[std::string("diffusion_2d_sigma") + s] = diffusion_preset(std::stod(s));

    // Desk-scale variants: single-core budgets of minutes rather than hours.
    json lin = poisson_preset("linear_poisson", 32, 0.1, true);
    lin["sampler"] = {{"n_ens", 200}};
    lin["optimizer"] = {{"max_iterations", 6000}};
    t["linear_poisson_desk"] = lin;

    json nl = poisson_preset("nonlinear_poisson", 32, 0.01, true);
    nl["sampler"] = {{"method", "hmc"}, {"n_ens", 50}};
    nl["optimizer"] = {{"max_iterations", 5000}};
    nl["hmc"] = {{"n_chains", 4}, {"burn_in", 100}, {"n_samples", 100}, {"max_tree_depth", 6}};
    nl["svgd"] = {{"n_particles", 20}, {"n_steps", 500}};
    t["nonlinear_poisson_desk"] = nl;

    json d = diffusion_preset(0.1);
    d["data"] = {{"seed", 1}, {"grid", {{"nx", 32}, {"ny", 16}}}, {"n_r", 200}, {"n_dbr", 16}, {"n_nbl", 16},
                 {"n_nbt", 32}, {"n_nbb", 32}};
    d["network"] = {{"hidden", {20, 20}}};
    d["network_y"] = {{"hidden", {20, 20}}};
    d["sampler"] = {{"n_ens", 8}};
    d["optimizer"] = {{"max_iterations", 3000}};
    d["map_optimizer"] = {{"max_iterations", 3000}};
    t["diffusion_2d_desk"] = d;
    return t;
  }();
  return table;
}

}  // namespace

std::vector<std::string> preset_names() {
  std::vector<std::string> out;
  for (const auto& [k, v] : presets()) out.push_back(k);
  return out;
}

json preset_json(const std::string& name) {
  auto it = presets().find(name);
  if (it == presets().end()) {
    std::string known;
    for (const auto& n : preset_names()) known += (known.empty() ? "" : ", ") + n;
    throw ConfigError("preset", "unknown preset '" + name + "' (known: " + known + ")");
  }
  return it->second;
}

void apply_override(json& j, const std::string& assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos || eq == 0) throw ConfigError(assignment, "override must look like key.path=value");
  const std::string key = assignment.substr(0, eq);
  const std::string text = assignment.substr(eq + 1);
  json value;
  try {
    value = json::parse(text);
  } catch (const json::parse_error&) {
    value = text;
  }
  json* node = &j;
  std::size_t start = 0;
  while (true) {
    const auto dot = key.find('.', start);
    const std::string part = key.substr(start, dot == std::string::npos ? std::string::npos : dot - start);
    if (part.empty()) throw ConfigError(key, "empty path component in override");
    if (!node->is_object()) {
      if (!node->is_null()) throw ConfigError(key, "cannot descend into a non-object value");
      *node = json::object();
    }
    node = &(*node)[part];
    if (dot == std::string::npos) break;
    start = dot + 1;
  }
  *node = std::move(value);
}

ExperimentConfig parse_config(const json& input) {
  if (!input.is_object()) throw ConfigError("<root>", "expected a JSON object");
  json j = input;
  if (j.contains("preset")) {
    if (!j["preset"].is_string()) throw ConfigError("preset", "expected a preset name");
    json base = preset_json(j["preset"].get<std::string>());
    j.erase("preset");
    base.merge_patch(j);
    j = std::move(base);
  }

  ExperimentConfig c;
  const Reader r(j, "");
  if (!r.has("problem")) throw ConfigError("problem", "required (linear_poisson, nonlinear_poisson or diffusion_2d)");
  r.get_enum("problem", c.problem, parse_problem_id);
  if (c.problem == ProblemId::linear_model) {
    throw ConfigError("problem", "expected linear_poisson, nonlinear_poisson or diffusion_2d");
  }
  const bool one_d = is_1d(c.problem);
  if (!r.has("sigma")) throw ConfigError("sigma", "required (measurement noise std, > 0)");
  r.get("sigma", c.sigma);

  c.hidden = default_hidden(c.problem);
  c.hidden_y = one_d ? std::vector<std::size_t>{} : diffusion_network().hidden_widths;
  c.sigma_mode = one_d ? SigmaMode::weighted_additive : SigmaMode::weighted;

  if (r.has("data")) {
    const Reader d = r.child("data");
    d.get("seed", c.data_seed);
    if (one_d) {
      d.get("n_f", c.n_f);
      d.finish();
    } else {
      d.forbid("n_f", "only used by the 1D problems");
      DiffusionSetup& s = c.diffusion;
      d.get("n_obs", s.n_obs);
      d.get("n_r", s.n_r);
      d.get("n_dbr", s.n_dbr);
      d.get("n_nbl", s.n_nbl);
      d.get("n_nbt", s.n_nbt);
      d.get("n_nbb", s.n_nbb);
      d.get("head", s.head);
      d.get("flux", s.flux);
      if (d.has("grid")) {
        const Reader g = d.child("grid");
        g.get("nx", s.grid.nx);
        g.get("ny", s.grid.ny);
        g.get("length_x", s.grid.length_x);
        g.get("length_y", s.grid.length_y);
        g.finish();
      }
      if (d.has("grf")) {
        const Reader g = d.child("grf");
        g.get("mean", s.prior.mean);
        g.get("variance", s.prior.variance);
        g.get("correlation_length", s.prior.correlation_length);
        g.finish();
      }
      d.finish();
    }
  }
  c.diffusion.sigma = c.sigma;
  c.diffusion.seed = c.data_seed;

  if (r.has("network")) {
    const Reader n = r.child("network");
    n.get_widths("hidden", c.hidden);
    n.finish();
  }
  if (r.has("network_y")) {
    if (one_d) throw ConfigError("network_y", "only used by diffusion_2d");
    const Reader n = r.child("network_y");
    n.get_widths("hidden", c.hidden_y);
    n.finish();
  }

  c.weights = default_weight_map(c);
  if (r.has("weights")) {
    const Reader w = r.child("weights");
    for (const auto& [k, v] : j["weights"].items()) {
      double x = 0.0;
      w.get(k, x);
      c.weights[k] = x;
    }
  }
  r.get_enum("sigma_mode", c.sigma_mode, parse_sigma_mode);
  r.get("epsilon", c.epsilon);

  if (r.has("sampler")) {
    const Reader s = r.child("sampler");
    s.get_enum("method", c.method, parse_method);
    s.get("n_ens", c.n_ens);
    s.get("seed", c.sampler_seed);
    s.get_enum("init", c.init, parse_init_policy);
    s.get("workers", c.workers);
    s.finish();
  }
  if (r.has("optimizer")) read_optimizer(r.child("optimizer"), c.optimizer);
  if (r.has("map_optimizer")) read_optimizer(r.child("map_optimizer"), c.map_optimizer);
  if (r.has("hmc")) {
    const Reader h = r.child("hmc");
    h.get("n_chains", c.hmc.n_chains);
    h.get("burn_in", c.hmc.burn_in);
    h.get("n_samples", c.hmc.n_samples);
    h.get("target_accept", c.hmc.target_accept);
    h.get("max_tree_depth", c.hmc.max_tree_depth);
    h.get("initial_step", c.hmc.initial_step);
    h.get("max_energy_error", c.hmc.max_energy_error);
    h.finish();
  }
  if (r.has("svgd")) {
    const Reader s = r.child("svgd");
    s.get("n_particles", c.svgd.n_particles);
    s.get("n_steps", c.svgd.n_steps);
    s.get("learning_rate", c.svgd.learning_rate);
    s.get("beta1", c.svgd.beta1);
    s.get("beta2", c.svgd.beta2);
    s.get("epsilon", c.svgd.epsilon);
    s.finish();
  }
  if (r.has("compare")) {
    const Reader s = r.child("compare");
    if (s.has("methods")) {
      const json& m = j["compare"]["methods"];
      if (!m.is_array()) throw ConfigError("compare.methods", "expected an array of method names");
      c.compare_methods.clear();
      for (const json& name : m) {
        if (!name.is_string()) throw ConfigError("compare.methods", "expected method names, got " + name.dump());
        try {
          c.compare_methods.push_back(parse_method(name.get<std::string>()));
        } catch (const ArgumentError& e) {
          throw ConfigError("compare.methods", e.what());
        }
      }
    }
    s.finish({"methods"});
  }
  r.get("output_dir", c.output_dir);
  r.finish();
  c.validate();
  return c;
}

json to_json(const ExperimentConfig& c) {
  json j;
  j["problem"] = to_string(c.problem);
  j["sigma"] = c.sigma;
  json data = {{"seed", c.data_seed}};
  if (is_1d(c.problem)) {
    data["n_f"] = c.n_f;
  } else {
    const DiffusionSetup& s = c.diffusion;
    data["n_obs"] = s.n_obs;
    data["n_r"] = s.n_r;
    data["n_dbr"] = s.n_dbr;
    data["n_nbl"] = s.n_nbl;
    data["n_nbt"] = s.n_nbt;
    data["n_nbb"] = s.n_nbb;
    data["head"] = s.head;
    data["flux"] = s.flux;
    data["grid"] = {{"nx", s.grid.nx}, {"ny", s.grid.ny}, {"length_x", s.grid.length_x}, {"length_y", s.grid.length_y}};
    data["grf"] = {{"mean", s.prior.mean},
                   {"variance", s.prior.variance},
                   {"correlation_length", s.prior.correlation_length}};
  }
  j["data"] = data;
  j["network"] = {{"hidden", c.hidden}};
  if (!is_1d(c.problem)) j["network_y"] = {{"hidden", c.hidden_y}};
  j["weights"] = c.weights;
  j["sigma_mode"] = to_string(c.sigma_mode);
  j["epsilon"] = c.epsilon;
  j["sampler"] = {{"method", to_string(c.method)},
                  {"n_ens", c.n_ens},
                  {"seed", c.sampler_seed},
                  {"init", to_string(c.init)},
                  {"workers", c.workers}};
  j["optimizer"] = optimizer_json(c.optimizer);
  j["map_optimizer"] = optimizer_json(c.map_optimizer);
  j["hmc"] = {{"n_chains", c.hmc.n_chains},
              {"burn_in", c.hmc.burn_in},
              {"n_samples", c.hmc.n_samples},
              {"target_accept", c.hmc.target_accept},
              {"max_tree_depth", c.hmc.max_tree_depth},
              {"initial_step", c.hmc.initial_step},
              {"max_energy_error", c.hmc.max_energy_error}};
  j["svgd"] = {{"n_particles", c.svgd.n_particles}, {"n_steps", c.svgd.n_steps},
               {"learning_rate", c.svgd.learning_rate}, {"beta1", c.svgd.beta1},
               {"beta2", c.svgd.beta2},           {"epsilon", c.svgd.epsilon}};
  json methods = json::array();
  for (Method m : c.compare_methods) methods.push_back(to_string(m));
  j["compare"] = {{"methods", methods}};
  j["output_dir"] = c.output_dir;
  return j;
}

ExperimentConfig load_config(const fs::path& path, const std::vector<std::string>& overrides) {
  json j = parse_json_text(read_file(path), "config '" + path.string() + "'");
  for (const std::string& o : overrides) apply_override(j, o);
  return parse_config(j);
}

void save_config(const ExperimentConfig& c, const fs::path& path) { write_file(path, to_json(c).dump(2) + "\n"); }

// ---- datasets ----------------------------------------------------------------

namespace {

json obs_json(const std::vector<Observation>& v) {
  json a = json::array();
  for (const Observation& o : v) a.push_back({o.x[0], o.x[1], o.value});
  return a;
}

json points_json(const std::vector<Point>& v) {
  json a = json::array();
  for (const Point& p : v) a.push_back({p[0], p[1]});
  return a;
}

std::vector<Observation> obs_from(const json& j, const char* key) {
  std::vector<Observation> out;
  if (!j.contains(key)) return out;
  for (const json& e : j.at(key)) {
    if (!e.is_array() || e.size() != 3) throw IoError(std::string("dataset: '") + key + "' entries must be [x1, x2, value]");
    out.push_back({{e[0].get<double>(), e[1].get<double>()}, e[2].get<double>()});
  }
  return out;
}

std::vector<Point> points_from(const json& j, const char* key) {
  std::vector<Point> out;
  if (!j.contains(key)) return out;
  for (const json& e : j.at(key)) {
    if (!e.is_array() || e.size() != 2) throw IoError(std::string("dataset: '") + key + "' entries must be [x1, x2]");
    out.push_back({e[0].get<double>(), e[1].get<double>()});
  }
  return out;
}

}  // namespace

json dataset_to_json(const Dataset& d) {
  return {{"format", "rpinn-dataset"},
          {"version", 1},
          {"problem", to_string(d.problem)},
          {"noise_sigma", d.noise_sigma},
          {"seed", d.seed},
          {"y_obs", obs_json(d.y_obs)},
          {"u_obs", obs_json(d.u_obs)},
          {"dirichlet_obs", obs_json(d.dirichlet_obs)},
          {"neumann_obs", obs_json(d.neumann_obs)},
          {"residual_points", points_json(d.residual_points)},
          {"neumann_top_points", points_json(d.neumann_top_points)},
          {"neumann_bottom_points", points_json(d.neumann_bottom_points)}};
}

Dataset dataset_from_json(const json& j) {
  try {
    if (j.value("format", "") != "rpinn-dataset") throw IoError("not a dataset document (format field)");
    if (j.value("version", 0) != 1) throw IoError("unsupported dataset version");
    Dataset d;
    try {
      d.problem = parse_problem_id(j.at("problem").get<std::string>());
    } catch (const ArgumentError& e) {
      throw IoError(std::string("dataset: ") + e.what());
    }
    d.noise_sigma = j.at("noise_sigma").get<double>();
    d.seed = j.at("seed").get<std::uint64_t>();
    d.y_obs = obs_from(j, "y_obs");
    d.u_obs = obs_from(j, "u_obs");
    d.dirichlet_obs = obs_from(j, "dirichlet_obs");
    d.neumann_obs = obs_from(j, "neumann_obs");
    d.residual_points = points_from(j, "residual_points");
    d.neumann_top_points = points_from(j, "neumann_top_points");
    d.neumann_bottom_points = points_from(j, "neumann_bottom_points");
    return d;
  } catch (const json::exception& e) {
    throw IoError(std::string("malformed dataset: ") + e.what());
  }
}

void save_dataset(const Dataset& d, const fs::path& path) { write_file(path, dataset_to_json(d).dump(1) + "\n"); }

Dataset load_dataset(const fs::path& path) {
  return dataset_from_json(parse_json_text(read_file(path), "dataset '" + path.string() + "'"));
}

void save_grid(const GridField& f, const fs::path& path) {
  std::ostringstream ss;
  write_csv(ss, f);
  write_file(path, ss.str());
}

GridField load_grid(const fs::path& path) {
  std::istringstream ss(read_file(path));
  try {
    return read_csv(ss);
  } catch (const ArgumentError& e) {
    throw IoError("grid '" + path.string() + "': " + e.what());
  }
}

// ---- ensembles ---------------------------------------------------------------

std::uint32_t crc32_of(const std::string& bytes) {
  uLong crc = crc32(0L, Z_NULL, 0);
  std::size_t pos = 0;
  while (pos < bytes.size()) {
    const auto chunk = static_cast<uInt>(std::min<std::size_t>(bytes.size() - pos, 1u << 30));
    crc = crc32(crc, reinterpret_cast<const Bytef*>(bytes.data() + pos), chunk);
    pos += chunk;
  }
  return static_cast<std::uint32_t>(crc);
}

namespace {

std::string sample_name(std::size_t i) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "sample_%05zu.bin", i);
  return buf;
}

bool is_sample_file(const fs::path& p) {
  const std::string n = p.filename().string();
  return n.starts_with("sample_") && n.ends_with(".bin");
}

json layout_json(const ParameterLayout& layout) {
  if (layout.is_flat()) return {{"flat", layout.total()}};
  json nets = json::array();
  for (const MlpSpec& s : layout.nets()) nets.push_back(describe(s));
  return {{"nets", nets}};
}

ParameterLayout layout_from(const json& j) {
  if (j.contains("flat")) return ParameterLayout::flat(j.at("flat").get<std::size_t>());
  std::vector<MlpSpec> nets;
  for (const json& s : j.at("nets")) nets.push_back(parse_spec(s.get<std::string>()));
  return ParameterLayout(std::move(nets));
}

}  // namespace

void save_ensemble(const PosteriorEnsemble& e, const fs::path& dir) {
  e.validate();
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw IoError("cannot create '" + dir.string() + "': " + ec.message());
  for (const auto& entry : fs::directory_iterator(dir)) {
    if (entry.is_regular_file() && is_sample_file(entry.path())) fs::remove(entry.path());
  }

  json samples = json::array();
  for (std::size_t i = 0; i < e.size(); ++i) {
    std::ostringstream ss;
    write_binary(ss, e.sample(i));
    const std::string bytes = ss.str();
    const std::string name = sample_name(i);
    write_file(dir / name, bytes);
    const SampleInfo& s = e.info[i];
    samples.push_back({{"file", name},
                       {"seed", s.seed},
                       {"loss", number(s.loss)},
                       {"iterations", s.iterations},
                       {"accepted", s.accepted},
                       {"chain", s.chain},
                       {"crc32", crc32_of(bytes)}});
  }
  json term = json::object();
  for (const auto& [k, v] : e.sigmas.term) term[k] = number(v);
  json diag = json::object();
  for (const auto& [k, v] : e.diagnostics) diag[k] = number(v);
  const json manifest = {{"format", "rpinn-ensemble"},
                         {"version", 1},
                         {"method", to_string(e.method)},
                         {"problem", to_string(e.problem)},
                         {"layout", layout_json(e.layout)},
                         {"sigmas", {{"term", term}, {"prior", number(e.sigmas.prior)}}},
                         {"n_failed", e.n_failed},
                         {"diagnostics", diag},
                         {"samples", samples}};
  write_file(dir / "manifest.json", manifest.dump(1) + "\n");
}

PosteriorEnsemble load_ensemble(const fs::path& dir) {
  const json m = parse_json_text(read_file(dir / "manifest.json"), "ensemble manifest in '" + dir.string() + "'");
  PosteriorEnsemble e;
  try {
    if (m.value("format", "") != "rpinn-ensemble") throw IoError("not an ensemble manifest (format field)");
    if (m.value("version", 0) != 1) throw IoError("unsupported ensemble manifest version");
    try {
      e.method = parse_method(m.at("method").get<std::string>());
      e.problem = parse_problem_id(m.at("problem").get<std::string>());
      e.layout = layout_from(m.at("layout"));
    } catch (const ArgumentError& err) {
      throw IoError(std::string("ensemble manifest: ") + err.what());
    }
    for (const auto& [k, v] : m.at("sigmas").at("term").items()) e.sigmas.term[k] = to_number(v);
    e.sigmas.prior = to_number(m.at("sigmas").at("prior"));
    e.n_failed = m.at("n_failed").get<std::size_t>();
    for (const auto& [k, v] : m.at("diagnostics").items()) e.diagnostics[k] = to_number(v);

    const json& samples = m.at("samples");
    std::size_t on_disk = 0;
    for (const auto& entry : fs::directory_iterator(dir)) {
      if (entry.is_regular_file() && is_sample_file(entry.path())) ++on_disk;
    }
    if (on_disk != samples.size()) {
      throw CorruptionError("ensemble '" + dir.string() + "': manifest lists " + std::to_string(samples.size()) +
                            " samples but " + std::to_string(on_disk) + " sample files exist");
    }
    for (const json& s : samples) {
      const std::string name = s.at("file").get<std::string>();
      if (name.find('/') != std::string::npos || !is_sample_file(name)) {
        throw IoError("ensemble manifest: bad sample file name '" + name + "'");
      }
      const std::string bytes = read_file(dir / name);
      const auto want = s.at("crc32").get<std::uint32_t>();
      if (crc32_of(bytes) != want) {
        throw CorruptionError("ensemble '" + dir.string() + "': checksum mismatch in " + name);
      }
      std::istringstream in(bytes);
      ParameterVector pv = read_binary(in);
      if (!(pv.layout == e.layout)) throw CorruptionError("ensemble sample " + name + " does not match the manifest layout");
      e.samples.push_back(std::move(pv.values));
      SampleInfo info;
      info.seed = s.at("seed").get<std::uint64_t>();
      info.loss = to_number(s.at("loss"));
      info.iterations = s.at("iterations").get<std::size_t>();
      info.accepted = s.at("accepted").get<bool>();
      info.chain = s.at("chain").get<std::size_t>();
      e.info.push_back(info);
    }
  } catch (const json::exception& err) {
    throw IoError("malformed ensemble manifest in '" + dir.string() + "': " + err.what());
  }
  return e;
}

// ---- summaries ---------------------------------------------------------------

std::string format_sci2(double v) {
  if (!std::isfinite(v)) return std::isnan(v) ? "" : (v > 0 ? "inf" : "-inf");
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.1e", v);
  return buf;
}

std::string format_coverage(double v) {
  if (std::isnan(v)) return "";
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.0f%%", 100.0 * v);
  return buf;
}

namespace {

constexpr const char* kColumns[] = {"rl2", "linf", "avg_std", "lpp", "coverage", "time_s"};

std::string raw(double v) {
  if (std::isnan(v)) return "";
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

std::string fixed(double v, int digits) {
  if (std::isnan(v)) return "";
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.*f", digits, v);
  return buf;
}

std::vector<std::string> split_csv(const std::string& line) {
  std::vector<std::string> out;
  std::string cell;
  std::istringstream ss(line);
  while (std::getline(ss, cell, ',')) out.push_back(cell);
  if (!line.empty() && line.back() == ',') out.emplace_back();
  return out;
}

double parse_cell(const std::string& s) {
  if (s.empty()) return std::numeric_limits<double>::quiet_NaN();
  try {
    std::size_t used = 0;
    const double v = std::stod(s, &used);
    if (used != s.size()) throw IoError("summary: bad number '" + s + "'");
    return v;
  } catch (const std::logic_error&) {
    if (s == "inf") return std::numeric_limits<double>::infinity();
    if (s == "-inf") return -std::numeric_limits<double>::infinity();
    throw IoError("summary: bad number '" + s + "'");
  }
}

}  // namespace

std::vector<std::string> summary_header() {
  std::vector<std::string> h{"method", "field"};
  for (const char* c : kColumns) h.emplace_back(c);
  for (const char* c : kColumns) h.push_back(std::string(c) + "_raw");
  return h;
}

void write_summary(const std::vector<SummaryRow>& rows, const fs::path& path) {
  std::string out;
  const auto header = summary_header();
  for (std::size_t i = 0; i < header.size(); ++i) out += (i ? "," : "") + header[i];
  out += "\n";
  for (const SummaryRow& r : rows) {
    if (r.method.find(',') != std::string::npos || r.field.find(',') != std::string::npos) {
      throw ArgumentError("summary names must not contain commas");
    }
    const std::vector<std::string> cells{r.method,
                                         r.field,
                                         format_sci2(r.rl2),
                                         format_sci2(r.linf),
                                         format_sci2(r.avg_std),
                                         fixed(r.lpp, 0),
                                         format_coverage(r.coverage),
                                         fixed(r.seconds, 1),
                                         raw(r.rl2),
                                         raw(r.linf),
                                         raw(r.avg_std),
                                         raw(r.lpp),
                                         raw(r.coverage),
                                         raw(r.seconds)};
    for (std::size_t i = 0; i < cells.size(); ++i) out += (i ? "," : "") + cells[i];
    out += "\n";
  }
  write_file(path, out);
}

std::vector<SummaryRow> read_summary(const fs::path& path) {
  std::istringstream in(read_file(path));
  std::string line;
  if (!std::getline(in, line)) throw IoError("summary '" + path.string() + "' is empty");
  const auto header = summary_header();
  if (split_csv(line) != header) throw IoError("summary '" + path.string() + "' has an unexpected header");
  std::vector<SummaryRow> rows;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    const auto cells = split_csv(line);
    if (cells.size() != header.size()) throw IoError("summary '" + path.string() + "': row has wrong column count");
    SummaryRow r;
    r.method = cells[0];
    r.field = cells[1];
    r.rl2 = parse_cell(cells[8]);
    r.linf = parse_cell(cells[9]);
    r.avg_std = parse_cell(cells[10]);
    r.lpp = parse_cell(cells[11]);
    r.coverage = parse_cell(cells[12]);
    r.seconds = parse_cell(cells[13]);
    rows.push_back(r);
  }
  return rows;
}

}  // namespace rpinn

#pragma once

// Experiment configuration, dataset and ensemble persistence, summary CSVs.

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "rpinn/grid.hpp"
#include "rpinn/loss.hpp"
#include "rpinn/problems.hpp"
#include "rpinn/samplers.hpp"
#include "rpinn/stats.hpp"

namespace rpinn {

struct ExperimentConfig {
  ProblemId problem = ProblemId::linear_poisson;
  double sigma = 0.1;

  // data
  std::uint64_t data_seed = 1;
  std::size_t n_f = 32;  // 1D
  DiffusionSetup diffusion;  // 2D (its sigma and seed mirror the fields above)

  // model
  std::vector<std::size_t> hidden;    // u (1D) or h (2D)
  std::vector<std::size_t> hidden_y;  // y (2D)
  std::map<std::string, double> weights;
  SigmaMode sigma_mode = SigmaMode::weighted_additive;
  double epsilon = 0.0;

  // sampling
  Method method = Method::rpinn;
  std::size_t n_ens = 200;
  std::uint64_t sampler_seed = 1000;
  InitPolicy init = InitPolicy::fresh;
  std::size_t workers = 1;
  OptimizerConfig optimizer;
  OptimizerConfig map_optimizer;
  HmcConfig hmc;
  SvgdConfig svgd;
  std::vector<Method> compare_methods{Method::rpinn, Method::deep_ensemble};

  std::string output_dir = "out";

  // Throws ConfigError naming the offending field.
  void validate() const;

  std::vector<MlpSpec> networks() const;
  friend bool operator==(const ExperimentConfig&, const ExperimentConfig&) = default;
};

// Names of the shipped presets, one per (problem, N, sigma) cell of the
// result tables plus small "desk" variants.
std::vector<std::string> preset_names();
nlohmann::json preset_json(const std::string& name);  // throws ConfigError

// Dotted-path override, e.g. "sampler.n_ens=4" or "data.grid.nx=32". The value
// is parsed as JSON when possible and taken as a string otherwise.
void apply_override(nlohmann::json& j, const std::string& assignment);

// A config document may start from {"preset": NAME, ...}; the remaining keys
// are merged over the preset.
ExperimentConfig parse_config(const nlohmann::json& j);
nlohmann::json to_json(const ExperimentConfig& c);
ExperimentConfig load_config(const std::filesystem::path& path, const std::vector<std::string>& overrides = {});
void save_config(const ExperimentConfig& c, const std::filesystem::path& path);

// Loss terms (with point counts) the configured problem will have, and the
// likelihood sigmas they imply. Needs no data.
std::vector<TermInfo> config_terms(const ExperimentConfig& c);
std::string config_anchor(const ExperimentConfig& c);
LikelihoodSigmas config_sigmas(const ExperimentConfig& c);

// ---- datasets ---------------------------------------------------------------

nlohmann::json dataset_to_json(const Dataset& d);
Dataset dataset_from_json(const nlohmann::json& j);
void save_dataset(const Dataset& d, const std::filesystem::path& path);
Dataset load_dataset(const std::filesystem::path& path);

void save_grid(const GridField& f, const std::filesystem::path& path);
GridField load_grid(const std::filesystem::path& path);

// ---- ensembles --------------------------------------------------------------

// Directory with manifest.json and one sample_NNNNN.bin per member; each
// payload's CRC-32 is recorded in the manifest and verified on load.
void save_ensemble(const PosteriorEnsemble& e, const std::filesystem::path& dir);
PosteriorEnsemble load_ensemble(const std::filesystem::path& dir);

std::uint32_t crc32_of(const std::string& bytes);

// ---- summaries --------------------------------------------------------------

// Display columns (errors as 2-significant-digit scientific, LPP rounded,
// coverage as a percentage, time in seconds) followed by full-precision raw
// columns. NaN values render as empty cells.
std::vector<std::string> summary_header();
void write_summary(const std::vector<SummaryRow>& rows, const std::filesystem::path& path);
std::vector<SummaryRow> read_summary(const std::filesystem::path& path);  // from the raw columns

std::string format_sci2(double v);  // "5.1e-02"
std::string format_coverage(double v);  // "100%"

// Whole-file helpers that raise IoError.
std::string read_file(const std::filesystem::path& path);
void write_file(const std::filesystem::path& path, const std::string& content);

}  // namespace rpinn

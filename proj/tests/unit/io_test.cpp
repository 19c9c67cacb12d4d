#include <algorithm>
#include <cmath>
#include <fstream>

#include <gtest/gtest.h>

#include "rpinn/errors.hpp"
#include "rpinn/io.hpp"
#include "test_util.hpp"

using namespace rpinn;
using nlohmann::json;

namespace {

std::string config_error_field(const json& j) {
  try {
    parse_config(j);
  } catch (const ConfigError& e) {
    return e.field();
  }
  return "<none>";
}

PosteriorEnsemble small_ensemble() {
  PosteriorEnsemble e;
  e.method = Method::rpinn;
  e.problem = ProblemId::linear_poisson;
  e.layout = ParameterLayout({{1, {3}, 1, Activation::tanh}});
  e.sigmas = {{{"f", 0.1}, {"b", 0.079}}, 2.9};
  for (std::uint64_t k = 0; k < 3; ++k) {
    e.samples.push_back(init_params(e.layout.nets()[0], k));
    e.info.push_back({k, 0.5 * static_cast<double>(k), 10 + k, true, 0});
  }
  e.diagnostics["divergences"] = 0;
  return e;
}

}  // namespace

TEST(Config, PresetRoundTrip) {
  for (const std::string& name : preset_names()) {
    const ExperimentConfig c = parse_config(preset_json(name));
    EXPECT_EQ(parse_config(to_json(c)), c) << name;
  }
  EXPECT_THROW(preset_json("no_such_preset"), ConfigError);
}

TEST(Config, PresetSigmasMatchTable) {
  const ExperimentConfig c = parse_config(preset_json("linear_poisson_Nf32_sigma0.1"));
  EXPECT_EQ(c.weights.at("f"), 27000.0);
  EXPECT_EQ(c.weights.at("b"), 2700.0);
  const LikelihoodSigmas s = config_sigmas(c);
  EXPECT_NEAR(s.prior, 2.905, 1e-3);
  EXPECT_NEAR(s.term.at("b"), 0.079, 1e-3);
}

TEST(Config, DiffusionDefaults) {
  const ExperimentConfig c = parse_config(preset_json("diffusion_2d_sigma0.1"));
  EXPECT_EQ(c.sigma_mode, SigmaMode::weighted);
  EXPECT_EQ(config_anchor(c), "y");
  const auto nets = c.networks();
  ASSERT_EQ(nets.size(), 2u);
  for (const auto& [term, w] : c.weights) EXPECT_EQ(w, static_cast<double>(count_params(nets[0]))) << term;
  EXPECT_EQ(config_terms(c).size(), 7u);
}

TEST(Config, ErrorsNameTheField) {
  json j = preset_json("linear_poisson_Nf32_sigma0.1");
  j["sigma"] = -1;
  EXPECT_EQ(config_error_field(j), "sigma");

  j = preset_json("linear_poisson_Nf32_sigma0.1");
  j["sampler"]["n_ens"] = 0;
  EXPECT_EQ(config_error_field(j), "sampler.n_ens");

  j = preset_json("linear_poisson_Nf32_sigma0.1");
  j["data"]["bogus"] = 1;
  EXPECT_EQ(config_error_field(j), "data.bogus");

  j = preset_json("linear_poisson_Nf32_sigma0.1");
  j.erase("problem");
  EXPECT_EQ(config_error_field(j), "problem");

  j = preset_json("linear_poisson_Nf32_sigma0.1");
  j["sampler"]["method"] = "mcmc";
  EXPECT_EQ(config_error_field(j), "sampler.method");
}

TEST(Config, Overrides) {
  json j = preset_json("linear_poisson_desk");
  apply_override(j, "sampler.n_ens=7");
  apply_override(j, "sampler.method=de");
  apply_override(j, "optimizer.learning_rate=0.01");
  const ExperimentConfig c = parse_config(j);
  EXPECT_EQ(c.n_ens, 7u);
  EXPECT_EQ(c.method, Method::deep_ensemble);
  EXPECT_EQ(c.optimizer.learning_rate, 0.01);
  EXPECT_THROW(apply_override(j, "no_equals_sign"), ConfigError);
}

TEST(Config, FileRoundTrip) {
  const test::TempDir tmp("cfg");
  const ExperimentConfig c = parse_config(preset_json("nonlinear_poisson_desk"));
  save_config(c, tmp / "c.json");
  EXPECT_EQ(load_config(tmp / "c.json"), c);
  EXPECT_EQ(load_config(tmp / "c.json", {"sigma=0.1"}).sigma, 0.1);
  EXPECT_THROW(load_config(tmp / "missing.json"), IoError);
}

TEST(Dataset, JsonRoundTrip) {
  const Dataset p = make_poisson_dataset(ProblemId::nonlinear_poisson, 8, 0.1, 4);
  EXPECT_EQ(dataset_from_json(dataset_to_json(p)), p);
  DiffusionSetup s;
  s.grid = {16, 8, 1.0, 0.5};
  s.n_obs = 5;
  s.n_r = 10;
  s.n_dbr = s.n_nbl = s.n_nbt = s.n_nbb = 4;
  const Dataset d = make_diffusion_dataset(s).data;
  const test::TempDir tmp("ds");
  save_dataset(d, tmp / "d.json");
  EXPECT_EQ(load_dataset(tmp / "d.json"), d);
}

TEST(Ensemble, RoundTripIsBitwise) {
  const test::TempDir tmp("ens");
  const PosteriorEnsemble e = small_ensemble();
  save_ensemble(e, tmp.path());
  const PosteriorEnsemble r = load_ensemble(tmp.path());
  EXPECT_EQ(r.samples, e.samples);
  EXPECT_EQ(r.info, e.info);
  EXPECT_EQ(r.sigmas, e.sigmas);
  EXPECT_EQ(r.layout, e.layout);
  EXPECT_EQ(r.method, e.method);
}

TEST(Ensemble, TamperedPayloadIsDetected) {
  const test::TempDir tmp("tamper");
  save_ensemble(small_ensemble(), tmp.path());
  {
    std::fstream f(tmp / "sample_00001.bin", std::ios::in | std::ios::out | std::ios::binary);
    f.seekp(-1, std::ios::end);
    f.put('\x7f');
  }
  EXPECT_THROW(load_ensemble(tmp.path()), CorruptionError);
}

TEST(Ensemble, MissingFileIsDetected) {
  const test::TempDir tmp("missing");
  save_ensemble(small_ensemble(), tmp.path());
  std::filesystem::remove(tmp / "sample_00002.bin");
  EXPECT_THROW(load_ensemble(tmp.path()), IoError);
}

TEST(Ensemble, RewriteRemovesStaleSamples) {
  const test::TempDir tmp("stale");
  save_ensemble(small_ensemble(), tmp.path());
  PosteriorEnsemble e = small_ensemble();
  e.samples.pop_back();
  e.info.pop_back();
  save_ensemble(e, tmp.path());
  EXPECT_FALSE(std::filesystem::exists(tmp / "sample_00002.bin"));
  EXPECT_EQ(load_ensemble(tmp.path()).size(), 2u);
}

TEST(Crc, KnownValue) { EXPECT_EQ(crc32_of("123456789"), 0xCBF43926u); }

TEST(Summary, Formatting) {
  EXPECT_EQ(format_sci2(0.0512), "5.1e-02");
  EXPECT_EQ(format_coverage(1.0), "100%");
  EXPECT_EQ(format_coverage(0.875), "88%");
}

TEST(Summary, HeaderOnlyForNoRows) {
  const test::TempDir tmp("sum0");
  write_summary({}, tmp / "s.csv");
  const std::string text = read_file(tmp / "s.csv");
  EXPECT_EQ(std::count(text.begin(), text.end(), '\n'), 1);
  EXPECT_EQ(text.rfind("method,field,rl2", 0), 0u);
  EXPECT_TRUE(read_summary(tmp / "s.csv").empty());
}

TEST(Summary, RawColumnsRoundTrip) {
  const test::TempDir tmp("sum");
  const std::vector<SummaryRow> rows{{"rpinn", "u", 0.1234567890123, 0.2, 0.03, -12.5, 1.0, 3.25},
                                     {"de", "f", 1.0 / 3.0, 2e-9, 4.7e-3, -1e6, 0.3125, 0.0}};
  write_summary(rows, tmp / "s.csv");
  EXPECT_EQ(read_summary(tmp / "s.csv"), rows);
  EXPECT_NE(read_file(tmp / "s.csv").find("100%"), std::string::npos);
}

TEST(Summary, NanRendersEmpty) {
  const test::TempDir tmp("nan");
  write_summary({{"hmc", "u", 0.1, 0.1, 0.1, 1.0, 1.0, std::nan("")}}, tmp / "s.csv");
  const auto back = read_summary(tmp / "s.csv");
  ASSERT_EQ(back.size(), 1u);
  EXPECT_TRUE(std::isnan(back[0].seconds));
  EXPECT_NE(read_file(tmp / "s.csv").find(",,"), std::string::npos);
}

#include <gtest/gtest.h>

#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "invae/experiment.hpp"
#include "test_util.hpp"

using namespace invae;
namespace fs = std::filesystem;

namespace {

fs::path scratch(const std::string& name) {
  fs::path p = fs::temp_directory_path() / ("invae_test_experiment_" + name);
  fs::remove_all(p);
  return p;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

ExperimentConfig tiny(MixingKind mixing) {
  ExperimentConfig c;
  c.data.mixing = mixing;
  c.data.latent = LatentKind::Dscm;
  c.data.d = 4;
  c.data.k = 4;
  c.data.n_train = 200;
  c.data.n_val = 50;
  c.data.obs_dim = mixing == MixingKind::Linear ? 8 : 20;
  c.batch_size = 64;
  c.top_k = 4;
  c.steps = 60;
  c.stage1_steps = 60;
  return c;
}

}  // namespace

TEST(Config, JsonRoundTrip) {
  ExperimentConfig c = tiny(MixingKind::Polynomial);
  c.bandwidth = 2.5;
  c.seeds = {3, 7};
  c.penalty = PenaltyKind::Mmd;
  ExperimentConfig back = experiment_config_from_json(to_json(c));
  EXPECT_EQ(back.data.mixing, MixingKind::Polynomial);
  EXPECT_EQ(back.data.d, 4u);
  EXPECT_EQ(back.data.obs_dim, 20u);
  EXPECT_EQ(back.seeds, c.seeds);
  EXPECT_EQ(back.penalty, PenaltyKind::Mmd);
  ASSERT_TRUE(back.bandwidth.has_value());
  EXPECT_EQ(*back.bandwidth, 2.5);
  EXPECT_EQ(to_json(back), to_json(c));
}

TEST(Config, MedianBandwidth) {
  auto c = experiment_config_from_json(R"({"bandwidth": "median", "d": 6})");
  EXPECT_FALSE(c.bandwidth.has_value());
  EXPECT_EQ(c.data.d, 6u);
}

TEST(Config, ErrorsNameTheField) {
  auto expect_field = [](const std::string& text, const std::string& field) {
    try {
      validate(experiment_config_from_json(text));
      ADD_FAILURE() << text;
    } catch (const Error& e) {
      EXPECT_EQ(e.kind(), ErrorKind::Config);
      EXPECT_NE(std::string(e.what()).find(field), std::string::npos) << e.what();
    }
  };
  expect_field(R"({"colour": 1})", "colour");
  expect_field(R"({"d": "eight"})", "d");
  expect_field(R"({"penalty": "l2"})", "penalty");
  expect_field(R"({"k": 1})", "k");
  expect_field(R"({"lr": -1})", "lr");
  expect_field(R"({"batch_size": 8, "top_k": 10})", "batch_size");
  expect_field(R"({"seeds": []})", "seeds");
  EXPECT_ERROR_KIND(experiment_config_from_json("{"), ErrorKind::Parse);
  EXPECT_ERROR_KIND(load_experiment_config("/nonexistent/cfg.json"), ErrorKind::Io);
}

TEST(TrainConfigs, PenaltyDefaults) {
  ExperimentConfig c = tiny(MixingKind::Linear);
  auto spec = dataset_for_seed(c, 5);
  EXPECT_EQ(spec.seed, 5u);
  auto t = penalty_train_config(c, spec, 5);
  EXPECT_EQ((t.penalty.S_hat), (IndexSet{0, 1}));
  EXPECT_TRUE(t.penalty.bandwidth.median);
  c.data.mixing = MixingKind::Polynomial;
  auto tp = penalty_train_config(c, dataset_for_seed(c, 5), 5);
  EXPECT_FALSE(tp.penalty.bandwidth.median);
  EXPECT_EQ(tp.penalty.bandwidth.sigma, 1.0);
  EXPECT_NE(stage1_train_config(c, 5).seed, tp.seed);
  EXPECT_FALSE(stage1_train_config(c, 5).use_penalty);
}

TEST(Grid, Shapes) {
  auto lin = table_grid("linear-main", Scale::Desk);
  ASSERT_EQ(lin.size(), 6u);
  for (const auto& c : lin) {
    EXPECT_EQ(c.data.d, 32u);
    EXPECT_EQ(c.data.k, 16u);
    EXPECT_EQ(c.seeds.size(), 3u);
  }
  auto poly = table_grid("poly-main", Scale::Full);
  EXPECT_EQ(poly.front().data.d, 14u);
  EXPECT_EQ(poly.front().data.degree, 3u);
  EXPECT_EQ(poly.front().seeds.size(), 5u);
  EXPECT_EQ(poly.front().stage1_steps, 2000u);
  EXPECT_EQ(poly.front().steps, 20000u);
  EXPECT_EQ(lin.front().steps, 2000u);
  auto sweep = table_grid("domains-sweep", Scale::Desk);
  ASSERT_EQ(sweep.size(), 2u);
  EXPECT_EQ(sweep[0].data.k, 2u);
  EXPECT_EQ(sweep[1].data.k, 16u);
  EXPECT_EQ(table_grid("domains-sweep", Scale::Full).size(), 4u);
  EXPECT_ERROR_KIND(table_grid("nope", Scale::Desk), ErrorKind::Config);
  EXPECT_ERROR_KIND(scale_from_string("huge"), ErrorKind::Config);
  for (const auto& c : table_grid("poly-main", Scale::Smoke)) validate(c);
}

TEST(Aggregate, MeanAndStandardError) {
  EXPECT_EQ(mean({1, 2, 3}), 2.0);
  EXPECT_NEAR(standard_error({1, 2, 3}), 1.0 / std::sqrt(3.0), 1e-15);
  EXPECT_EQ(standard_error({4}), 0.0);
  TableRow r;
  r.r2_S = {0.97, 0.97};
  r.r2_U = {0.04, 0.04};
  EXPECT_EQ(format_pair(r), "(0.97±0.00, 0.04±0.00)");
  r.mixing = "linear";
  r.latent = "dscm";
  r.penalty = "minmax";
  r.d = 32;
  r.k = 16;
  r.n = 5000;
  const std::string csv = table_csv({r});
  EXPECT_EQ(csv.substr(0, csv.find('\n')), kTableCsvHeader);
  EXPECT_NE(csv.find("linear,dscm,minmax,32,16,5000,2,"), std::string::npos);
}

TEST(Jobs, DeterministicEnvForcesOne) {
  ::setenv("INVAE_DETERMINISTIC", "1", 1);
  EXPECT_EQ(effective_jobs(4), 1u);
  ::unsetenv("INVAE_DETERMINISTIC");
  EXPECT_EQ(effective_jobs(4), 4u);
  EXPECT_EQ(effective_jobs(0), 1u);
}

TEST(RunCell, LinearWritesArtifacts) {
  auto dir = scratch("lin");
  auto r = run_cell(tiny(MixingKind::Linear), 0, dir);
  EXPECT_TRUE(fs::exists(dir / "model.ckpt"));
  EXPECT_TRUE(fs::exists(dir / "train_log.csv"));
  EXPECT_TRUE(fs::exists(dir / "report.json"));
  EXPECT_TRUE(std::isfinite(r.report.r2_S));
  EXPECT_TRUE(std::isfinite(r.report.r2_U));
  EXPECT_EQ(r.report.domain_penalty.size(), 4u);
  EXPECT_EQ(r.report.domain_penalty[0], 0.0);
  EXPECT_GT(r.wall_seconds, 0.0);
  fs::remove_all(dir);
}

TEST(RunCell, PolynomialTwoStages) {
  auto dir = scratch("poly");
  auto r = run_cell(tiny(MixingKind::Polynomial), 1, dir);
  EXPECT_TRUE(fs::exists(dir / "stage1.ckpt"));
  EXPECT_TRUE(fs::exists(dir / "stage2.ckpt"));
  EXPECT_TRUE(fs::exists(dir / "stage2_log.csv"));
  ASSERT_TRUE(r.report.affine.has_value());
  EXPECT_TRUE(std::isfinite(r.report.affine->fit_r2));
  fs::remove_all(dir);
}

TEST(RunCell, SeedDeterminism) {
  auto c = tiny(MixingKind::Linear);
  auto a = run_cell(c, 2);
  auto b = run_cell(c, 2);
  EXPECT_EQ(a.report.r2_S, b.report.r2_S);
  EXPECT_EQ(a.report.r2_U, b.report.r2_U);
}

TEST(Reproduce, ThreadsMatchSerial) {
  auto one = scratch("serial");
  auto two = scratch("threads");
  auto rows1 = reproduce_table("domains-sweep", Scale::Smoke, one, 1);
  auto rows2 = reproduce_table("domains-sweep", Scale::Smoke, two, 2);
  ASSERT_EQ(rows1.size(), 2u);
  EXPECT_EQ(rows1[0].k, 2u);
  for (std::size_t i = 0; i < rows1.size(); ++i) {
    EXPECT_EQ(rows1[i].r2_S, rows2[i].r2_S);
    EXPECT_EQ(rows1[i].r2_U, rows2[i].r2_U);
  }
  EXPECT_EQ(slurp(one / "domains-sweep.csv"), slurp(two / "domains-sweep.csv"));
  EXPECT_TRUE(fs::exists(one / "cells.csv"));
  fs::remove_all(one);
  fs::remove_all(two);
}

#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>

#include "invae/dataset.hpp"
#include "invae/eval.hpp"
#include "invae/trainer.hpp"
#include "test_util.hpp"

using namespace invae;
using invae::testing::random_matrix;

namespace {

double median_of(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  return v.size() % 2 ? v[v.size() / 2] : 0.5 * (v[v.size() / 2 - 1] + v[v.size() / 2]);
}

std::vector<Matrix> linear_domains(std::size_t d, std::size_t k, std::size_t n, std::uint64_t seed) {
  DatasetSpec s;
  s.mixing = MixingKind::Linear;
  s.latent = LatentKind::Independent;
  s.d = d;
  s.k = k;
  s.n_train = n;
  s.n_val = 10;
  s.seed = seed;
  return generate_dataset(s).train_X();
}

TrainConfig small_config(std::size_t steps, std::size_t s_size, PenaltyKind kind) {
  TrainConfig c;
  c.batch_size = 256;
  c.max_steps = steps;
  c.penalty.kind = kind;
  c.penalty.top_k = 5;
  for (std::size_t i = 0; i < s_size; ++i) c.penalty.S_hat.push_back(i);
  c.seed = 3;
  return c;
}

}  // namespace

TEST(Trainer, LinearStage1ReachesExactFit) {
  auto domains = linear_domains(8, 4, 2000, 1);
  TrainConfig c = small_config(2000, 4, PenaltyKind::MinMax);
  c.use_penalty = false;
  c.whiten = true;
  c.batch_size = 1024;
  auto r = train_stage1(domains, linear_autoencoder(16, 8), c);
  EXPECT_EQ(r.log.steps(), 2000u);
  EXPECT_LT(r.log.recon.back(), 1e-4);
  const auto first = std::vector<double>(r.log.recon.begin(), r.log.recon.begin() + 50);
  const auto last = std::vector<double>(r.log.recon.end() - 50, r.log.recon.end());
  EXPECT_GT(median_of(first), median_of(last));
  for (std::size_t i = 1; i < r.log.lr.size(); ++i) EXPECT_LE(r.log.lr[i], r.log.lr[i - 1]);
}

TEST(Trainer, ConstantDataFitsExactly) {
  std::vector<Matrix> domains{Matrix(100, 4, 2.5), Matrix(100, 4, 2.5)};
  TrainConfig c = small_config(20, 1, PenaltyKind::MinMax);
  c.use_penalty = false;
  auto r = train_stage1(domains, linear_autoencoder(4, 2), c);
  EXPECT_EQ(r.log.recon.back(), 0.0);
  EXPECT_LT(max_abs_diff(r.model.reconstruct(domains[0]), domains[0]), 1e-12);
}

TEST(Trainer, SeedDeterminism) {
  auto domains = linear_domains(4, 3, 300, 2);
  TrainConfig c = small_config(120, 2, PenaltyKind::MinMaxPlusMmd);
  c.penalty.bandwidth = ad::Bandwidth{1.0, true};
  auto a = train_linear_joint(domains, 4, c);
  auto b = train_linear_joint(domains, 4, c);
  EXPECT_EQ(a.log.recon, b.log.recon);
  EXPECT_EQ(a.log.penalty, b.log.penalty);
  EXPECT_EQ(a.log.lr, b.log.lr);
  EXPECT_EQ(a.model.flat_params(), b.model.flat_params());
  c.seed = 4;
  auto other = train_linear_joint(domains, 4, c);
  EXPECT_NE(other.model.flat_params(), a.model.flat_params());
}

TEST(Trainer, ZeroLambdaMatchesReconstructionOnly) {
  auto domains = linear_domains(4, 3, 300, 3);
  TrainConfig c = small_config(60, 2, PenaltyKind::MinMax);
  c.penalty.lambda = 0.0;
  auto with_log = train_linear_joint(domains, 4, c);
  c.use_penalty = false;
  auto plain = train_linear_joint(domains, 4, c);
  EXPECT_EQ(with_log.log.recon, plain.log.recon);
  EXPECT_EQ(with_log.model.flat_params(), plain.model.flat_params());
  EXPECT_GT(with_log.log.penalty.front(), 0.0);
}

TEST(Trainer, PenaltyShrinksDuringTraining) {
  auto domains = linear_domains(4, 8, 1000, 4);
  TrainConfig c = small_config(1500, 2, PenaltyKind::MinMax);
  c.batch_size = 512;
  auto r = train_linear_joint(domains, 4, c);
  EXPECT_LT(r.log.penalty.back(), 0.01 * r.log.penalty.front());
}

TEST(Trainer, BatchCompositionErrors) {
  auto domains = linear_domains(4, 3, 50, 5);
  TrainConfig c = small_config(5, 2, PenaltyKind::MinMax);
  c.penalty.top_k = 200;
  EXPECT_ERROR_KIND(train_linear_joint(domains, 4, c), ErrorKind::Config);
  std::vector<Matrix> one{domains[0]};
  TrainConfig s2 = small_config(5, 2, PenaltyKind::MinMax);
  EXPECT_ERROR_KIND(train_stage2(one, s2), ErrorKind::CannotEnforceInvariance);
  TrainConfig zero = small_config(0, 2, PenaltyKind::MinMax);
  EXPECT_ERROR_KIND(train_linear_joint(domains, 4, zero), ErrorKind::Config);
}

TEST(Trainer, DivergenceCarriesStep) {
  auto domains = linear_domains(4, 2, 200, 6);
  for (auto& m : domains)
    for (double& v : m.flat()) v *= 1e200;
  TrainConfig c = small_config(50, 2, PenaltyKind::MinMax);
  c.use_penalty = false;
  c.standardize = false;
  try {
    train_linear_joint(domains, 4, c);
    FAIL() << "expected divergence";
  } catch (const DivergenceError& e) {
    EXPECT_EQ(e.kind(), ErrorKind::TrainingDiverged);
    EXPECT_LT(e.step(), 50u);
  }
}

TEST(Trainer, Stage2RunsOnEncodedDomains) {
  std::vector<Matrix> encoded{random_matrix(200, 3, 1), random_matrix(200, 3, 2, -1, 2)};
  TrainConfig c = small_config(30, 2, PenaltyKind::MinMaxPlusMmd);
  c.batch_size = 64;
  auto r = train_stage2(encoded, c);
  EXPECT_EQ(r.model.arch().kind, ArchKind::Stage2Mlp);
  EXPECT_EQ(r.model.arch().input_dim, 3u);
  EXPECT_EQ(r.log.steps(), 30u);
}

TEST(Trainer, LogCsv) {
  TrainLog log;
  log.recon = {1.0, 0.5};
  log.penalty = {0.2, 0.1};
  log.lr = {1e-3, 1e-3};
  auto path = std::filesystem::temp_directory_path() / "invae_trainer_log.csv";
  log.write_csv(path);
  std::ifstream in(path);
  std::string header, row;
  std::getline(in, header);
  std::getline(in, row);
  EXPECT_EQ(header, "step,recon_loss,penalty,lr");
  EXPECT_EQ(row.substr(0, 2), "0,");
}

TEST(Trainer, ColumnStats) {
  std::vector<Matrix> d{Matrix{{1, 5}, {3, 5}}, Matrix{{5, 5}}};
  std::vector<double> mean, scale;
  column_stats(d, mean, scale);
  EXPECT_DOUBLE_EQ(mean[0], 3.0);
  EXPECT_DOUBLE_EQ(mean[1], 5.0);
  EXPECT_EQ(scale[1], 1.0);
  EXPECT_GT(scale[0], 0.0);
}

namespace {

MultiDomainDataset poly_data(std::size_t n, std::uint64_t seed) {
  DatasetSpec s;
  s.mixing = MixingKind::Polynomial;
  s.latent = LatentKind::Dscm;
  s.d = 6;
  s.k = 4;
  s.degree = 2;
  s.n_train = n;
  s.n_val = 500;
  s.seed = seed;
  return generate_dataset(s);
}

}  // namespace

TEST(Trainer, MlpStage1OnPolynomialData) {
  auto data = poly_data(1000, 4);
  TrainConfig c = small_config(3000, 3, PenaltyKind::MinMax);
  c.use_penalty = false;
  c.lr0 = 3e-3;
  auto r = train_stage1(data.train_X(), mlp_polynomial(200, 6, 2), c);
  // Inputs are standardized, so the loss is already relative to Var(x).
  const auto& rec = r.log.recon;
  double tail = 0.0;
  for (std::size_t i = rec.size() - 50; i < rec.size(); ++i) tail += rec[i] / 50.0;
  EXPECT_LT(tail, 1e-2);
}

TEST(Trainer, WhitenedInputsHaveIdentityCovariance) {
  auto domains = linear_domains(3, 2, 500, 6);
  TrainConfig c = small_config(5, 1, PenaltyKind::MinMax);
  c.use_penalty = false;
  c.whiten = true;
  auto r = train_stage1(domains, linear_autoencoder(6, 3), c);
  ASSERT_EQ(r.model.input_whiten.rows(), 6u);
  std::vector<Matrix> w;
  for (const Matrix& m : domains) w.push_back(r.model.standardize(m));
  Matrix pooled = vstack(w);
  Matrix cov = matmul(pooled.transposed(), pooled);
  // x lives in a 3-dimensional subspace of R^6: three unit eigenvalues, three
  // crushed to the floor.
  double trace = 0.0;
  for (std::size_t i = 0; i < 6; ++i) trace += cov(i, i) / static_cast<double>(pooled.rows());
  EXPECT_NEAR(trace, 3.0, 1e-4);
  Matrix back = r.model.unstandardize(pooled.row_range(0, 500));
  for (std::size_t i = 0; i < back.size(); ++i) EXPECT_NEAR(back.data()[i], domains[0].data()[i], 1e-8);

  auto path = std::filesystem::temp_directory_path() / "invae_trainer_whiten.ckpt";
  save_checkpoint(r.model, path);
  Autoencoder loaded = load_checkpoint(path);
  EXPECT_EQ(loaded.input_whiten.flat()[4], r.model.input_whiten.flat()[4]);
  const Matrix a = loaded.encode(domains[1]), b = r.model.encode(domains[1]);
  for (std::size_t i = 0; i < a.size(); ++i) EXPECT_EQ(a.data()[i], b.data()[i]);
  std::filesystem::remove(path);

  c.standardize = false;
  EXPECT_ERROR_KIND(train_stage1(domains, linear_autoencoder(6, 3), c), ErrorKind::Config);
}

TEST(Trainer, WhitenedLinearStage1IsAffine) {
  auto data = poly_data(2000, 5);
  TrainConfig c = small_config(1500, 3, PenaltyKind::MinMax);
  c.use_penalty = false;
  c.whiten = true;
  c.batch_size = 512;
  auto r = train_stage1(data.train_X(), linear_polynomial(200, 6, 2), c);
  const AffineFit fit = affine_fit(r.model.encode(data.val_X()), data.val_Z());
  EXPECT_GT(fit.fit_r2, 0.99);
}

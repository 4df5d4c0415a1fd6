#pragma once

// Experiment plumbing: one config describes a (dgp, penalty, seeds) cell,
// run_cell trains and evaluates one seed of it, and reproduce_table runs a
// whole grid with a bounded number of worker threads.

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "invae/dataset.hpp"
#include "invae/eval.hpp"
#include "invae/invariance.hpp"
#include "invae/models.hpp"
#include "invae/trainer.hpp"

namespace invae {

/// Two-stage pipeline pieces for polynomial mixing.
enum class Stage1Arch { LinearPolynomial, MlpPolynomial };
enum class Stage2Arch { Linear, Mlp };

const char* to_string(Stage1Arch arch);
const char* to_string(Stage2Arch arch);

struct ExperimentConfig {
  DatasetSpec data;
  PenaltyKind penalty = PenaltyKind::MinMaxPlusMmd;
  double lambda = 1.0;
  std::size_t top_k = 10;
  /// Unset picks the median heuristic for linear mixing and σ = 1 otherwise.
  std::optional<double> bandwidth;
  std::vector<std::uint64_t> seeds{0};
  std::size_t batch_size = 1024;
  std::size_t steps = 2000;
  std::size_t stage1_steps = 2000;
  double lr = 1e-3;
  Stage1Arch stage1_arch = Stage1Arch::LinearPolynomial;
  /// ZCA-whiten Stage-1 inputs.
  bool stage1_whiten = true;
  Stage2Arch stage2_arch = Stage2Arch::Linear;
  std::filesystem::path out = "runs";
};

void validate(const ExperimentConfig& config);

/// Keys are the DatasetSpec fields plus penalty, lambda, top_k, bandwidth,
/// seeds, batch_size, steps, stage1_steps, lr, stage1_arch, stage1_whiten,
/// stage2_arch, out. Unknown keys and bad
/// values raise Config naming the field.
ExperimentConfig experiment_config_from_json(const std::string& text);
ExperimentConfig load_experiment_config(const std::filesystem::path& path);
std::string to_json(const ExperimentConfig& config);

/// "linear-dscm", "polynomial-independent", ...
std::string dgp_label(const DatasetSpec& spec);

/// Dataset of one seed: the config's spec with its seed replaced.
DatasetSpec dataset_for_seed(const ExperimentConfig& config, std::uint64_t seed);

TrainConfig penalty_train_config(const ExperimentConfig& config, const DatasetSpec& spec,
                                 std::uint64_t seed);
TrainConfig stage1_train_config(const ExperimentConfig& config, std::uint64_t seed);

/// Trained models of one run. Linear mixing trains a single joint model;
/// polynomial mixing chains a Stage-1 model into a Stage-2 model.
struct Pipeline {
  std::optional<Autoencoder> stage1;
  Autoencoder invariant;
  IndexSet S_hat;
  std::vector<TrainLog> logs;

  Matrix encode(const Matrix& X) const;
  /// Output that should be affine in z: Stage 1 if present, else the joint encoder.
  Matrix affine_stage(const Matrix& X) const;
};

Pipeline train_pipeline(const ExperimentConfig& config, const MultiDomainDataset& data,
                        std::uint64_t seed);

EvalReport evaluate_pipeline(const Pipeline& pipeline, const MultiDomainDataset& data,
                             PenaltyKind penalty, std::uint64_t seed);

struct CellResult {
  EvalReport report;
  double wall_seconds = 0.0;
};

/// Generates the seed's dataset, trains, evaluates. With `run_dir` set,
/// checkpoints, logs and report.json are written there.
CellResult run_cell(const ExperimentConfig& config, std::uint64_t seed,
                    const std::optional<std::filesystem::path>& run_dir = std::nullopt);

enum class Scale { Smoke, Desk, Full };
Scale scale_from_string(const std::string& name);
const char* to_string(Scale scale);

/// Cells of a table: linear-main, poly-main, domains-sweep.
std::vector<ExperimentConfig> table_grid(const std::string& table_id, Scale scale);

struct TableRow {
  std::string mixing;
  std::string latent;
  std::string penalty;
  std::size_t d = 0;
  std::size_t k = 0;
  std::size_t n = 0;
  std::vector<double> r2_S;
  std::vector<double> r2_U;
};

double mean(const std::vector<double>& v);
/// Sample standard deviation over √n; 0 for fewer than two values.
double standard_error(const std::vector<double>& v);
/// "(0.97±0.00, 0.04±0.00)"
std::string format_pair(const TableRow& row);

inline constexpr const char* kTableCsvHeader =
    "mixing,p_Z,penalty,d,k,n,seeds,r2_S_mean,r2_S_se,r2_U_mean,r2_U_se,result";

std::string table_csv(const std::vector<TableRow>& rows);

/// Runs every (cell, seed) with up to `jobs` threads, writes
/// <out>/<table_id>.csv and the per-seed rows in <out>/cells.csv, and returns
/// the aggregated rows in grid order.
std::vector<TableRow> reproduce_table(const std::string& table_id, Scale scale,
                                      const std::filesystem::path& out, std::size_t jobs);

/// Honors INVAE_DETERMINISTIC=1 by forcing a single job.
std::size_t effective_jobs(std::size_t requested);

}  // namespace invae

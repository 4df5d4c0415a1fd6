#pragma once

// Training loops. Every step draws an equal share of the batch from each
// domain (remainder to the earliest domains), stacks the shares by domain, and
// minimizes mse(x̂, x) + λ·penalty(ẑ). Inputs are standardized per dimension
// with statistics of the pooled training data; the statistics travel with the
// returned model.

#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

#include "invae/invariance.hpp"
#include "invae/matrix.hpp"
#include "invae/models.hpp"
#include "invae/optim.hpp"

namespace invae {

struct TrainConfig {
  std::size_t batch_size = 1024;
  std::size_t max_steps = 2000;
  double lr0 = 1e-3;
  PlateauSchedule schedule;  // lr field is overwritten with lr0
  std::size_t steps_per_epoch = 50;
  PenaltyConfig penalty;
  /// Without a penalty the loop is plain reconstruction (Stage 1).
  bool use_penalty = true;
  bool standardize = true;
  /// ZCA-whiten the standardized inputs (eigenvalues floored at
  /// whiten_floor · λ_max). Needs standardize.
  bool whiten = false;
  double whiten_floor = 1e-8;
  std::uint64_t seed = 0;
};

void validate(const TrainConfig& config, std::size_t domains);

struct TrainLog {
  std::vector<double> recon;
  std::vector<double> penalty;
  std::vector<double> lr;
  double wall_seconds = 0.0;
  /// Steps where the median bandwidth fell back to σ = 1.
  std::size_t bandwidth_fallbacks = 0;
  std::filesystem::path checkpoint;

  std::size_t steps() const { return recon.size(); }
  void write_csv(const std::filesystem::path& path) const;
};

struct TrainResult {
  Autoencoder model;
  TrainLog log;
};

/// Stage 1: plain reconstruction with `arch` (input_dim = observation width).
TrainResult train_stage1(std::span<const Matrix> domains, const Architecture& arch,
                         TrainConfig config);

/// Stage 2: Stage2Mlp on Stage-1 encoder outputs with the invariance penalty.
TrainResult train_stage2(std::span<const Matrix> encoded_domains, TrainConfig config);

/// Linear autoencoder with latent width d trained on recon + λ·penalty.
TrainResult train_linear_joint(std::span<const Matrix> domains, std::size_t d,
                               TrainConfig config);

/// Generic loop behind the three entry points.
TrainResult train(Autoencoder model, std::span<const Matrix> domains, const TrainConfig& config);

/// Mean and standard deviation per column of the pooled rows; zero deviations
/// are replaced by 1.
void column_stats(std::span<const Matrix> domains, std::vector<double>& mean,
                  std::vector<double>& scale);

}  // namespace invae

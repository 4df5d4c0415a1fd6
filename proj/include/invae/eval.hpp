#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <limits>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "invae/latentgen.hpp"
#include "invae/matrix.hpp"

namespace invae {

struct R2Options {
  /// Fit on a random 80% of rows and score the other 20%; in-sample otherwise.
  bool split = true;
  double test_fraction = 0.2;
  std::uint64_t seed = 0;
};

struct R2Result {
  double r2 = 0.0;
  bool rank_deficient = false;
};

/// OLS with intercept from features to each target column; R² = 1 − SSE/SST
/// averaged over target columns. Throws DegenerateTarget on a constant target
/// column and InvalidArgument when rows ≤ features + 1.
R2Result linear_r2_detailed(const Matrix& features, const Matrix& targets, R2Options options = {});
double linear_r2(const Matrix& features, const Matrix& targets, R2Options options = {});

struct BlockScores {
  double r2_S = 0.0;
  double r2_U = std::numeric_limits<double>::quiet_NaN();  // NaN when U is empty
};

/// Predicts z[:, S] and z[:, U] from ẑ[:, Ŝ].
BlockScores block_identification(const Matrix& z_hat, const Matrix& z, const IndexSet& S,
                                 const IndexSet& U, const IndexSet& S_hat,
                                 R2Options options = {});

struct AffineFit {
  Matrix A;  // d_hat × d: ẑ ≈ A z + c
  std::vector<double> c;
  double fit_r2 = 0.0;  // in-sample
  double cond = 0.0;
  bool rank_deficient = false;
};

AffineFit affine_fit(const Matrix& z_hat, const Matrix& z);

struct SearchTrial {
  double recon = 0.0;
  double penalty = 0.0;
};

struct SelectionResult {
  IndexSet S_hat;
  bool infeasible = false;
  std::vector<std::pair<std::size_t, SearchTrial>> trials;  // (size, outcome)
};

/// Trains with Ŝ = {0, …, m−1} for m = start_size, start_size − 1, …, 1 and
/// returns the first Ŝ whose run ends with recon ≤ recon_tol and
/// penalty ≤ feasibility_tol. Exhausting all sizes gives the empty set with
/// `infeasible` set.
SelectionResult select_S_hat(std::size_t start_size,
                             const std::function<SearchTrial(const IndexSet&)>& train_fn,
                             double feasibility_tol,
                             double recon_tol = std::numeric_limits<double>::infinity());

struct EvalReport {
  std::map<std::string, std::string> keys;  // dgp, penalty, d, k, seed
  double r2_S = 0.0;
  double r2_U = 0.0;
  std::optional<AffineFit> affine;
  IndexSet S_hat;
  /// Penalty between domain 0 and domain j (entry 0 is 0).
  std::vector<double> domain_penalty;
};

std::string to_json(const EvalReport& report);

inline constexpr const char* kEvalCsvHeader =
    "dgp,penalty,d,k,seed,r2_S,r2_U,affine_fit_r2,affine_cond";

std::string csv_row(const EvalReport& report);
/// Appends one row, writing the header first when the file is new or empty.
void append_csv_row(const std::filesystem::path& path, const EvalReport& report);

}  // namespace invae

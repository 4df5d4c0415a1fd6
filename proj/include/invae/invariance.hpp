#pragma once

// Invariance penalties on per-domain encoder outputs. Domains are compared
// over unordered pairs p < q.
//
//   MinMax: Σ_{p<q} Σ_{i∈Ŝ} (lo_p,i − lo_q,i)² + (hi_p,i − hi_q,i)², where lo/hi
//           are the means of the k smallest / largest values of column i.
//   MMD:    Σ_{p<q} MMD²(ẑ_p[:,Ŝ], ẑ_q[:,Ŝ]), biased V-statistic with the RBF
//           kernel exp(−‖x − y‖² / (2σ²)).

#include <span>
#include <string>
#include <utility>
#include <vector>

#include "invae/latentgen.hpp"
#include "invae/matrix.hpp"
#include "invae/tape.hpp"

namespace invae {

enum class PenaltyKind { MinMax, Mmd, MinMaxPlusMmd };

const char* to_string(PenaltyKind kind);
PenaltyKind penalty_kind_from_string(const std::string& name);

struct PenaltyConfig {
  PenaltyKind kind = PenaltyKind::MinMaxPlusMmd;
  IndexSet S_hat;
  std::size_t top_k = 10;
  /// Fixed σ, or the median heuristic over the pooled batch of all domains.
  ad::Bandwidth bandwidth{1.0, false};
  double lambda = 1.0;
};

void validate(const PenaltyConfig& config);

/// Row ranges [begin, end) of each domain inside a stacked batch.
using DomainRanges = std::vector<std::pair<std::size_t, std::size_t>>;

DomainRanges contiguous_ranges(std::span<const std::size_t> sizes);

/// Graph builders over a stacked batch `z` whose rows are split by `ranges`.
ad::Var minmax_penalty(ad::Tape& tape, ad::Var z, const DomainRanges& ranges,
                       const IndexSet& S_hat, std::size_t top_k);
/// Returns the penalty; `kernel_node` (if non-null) receives the rbf node so
/// callers can read the bandwidth actually used.
ad::Var mmd_penalty(ad::Tape& tape, ad::Var z, const DomainRanges& ranges, const IndexSet& S_hat,
                    ad::Bandwidth bandwidth, ad::Var* kernel_node = nullptr);
ad::Var total_penalty(ad::Tape& tape, ad::Var z, const DomainRanges& ranges,
                      const PenaltyConfig& config, ad::Var* kernel_node = nullptr);

// Direct evaluation.

double minmax_penalty(std::span<const Matrix> batches, const IndexSet& S_hat, std::size_t top_k);

/// MMD²(X, Y) with fixed σ > 0.
double mmd_rbf(const Matrix& X, const Matrix& Y, double sigma);

/// σ with σ² = median pairwise squared distance of the pooled rows / 2.
/// Throws DegenerateBandwidth when every pairwise distance is zero.
double median_bandwidth(const Matrix& X, const Matrix& Y);

struct BandwidthChoice {
  double sigma = 1.0;
  bool degenerate = false;  // all points coincided; fell back to σ = 1
};
BandwidthChoice median_bandwidth_or_default(const Matrix& X, const Matrix& Y);

double total_penalty(std::span<const Matrix> batches, const PenaltyConfig& config);

}  // namespace invae

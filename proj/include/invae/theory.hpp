#pragma once

// Calculators and brute-force checks for the identification results.

#include <cstdint>
#include <optional>
#include <utility>
#include <variant>
#include <vector>

#include "invae/latentgen.hpp"
#include "invae/matrix.hpp"

namespace invae::theory {

/// log(d/δ) / log(1 / (1 − 1/(2d))): interventions per node that make every
/// node take part in a good two-node intervention with probability ≥ 1 − δ.
double multinode_t_bound(std::size_t d, double delta);

/// Monte Carlo of the coverage argument: a fixed terminal node w; each other
/// node s draws t partners uniformly from U \ {s}, and a draw is good when it
/// hits w and a fair coin (both variances moving the same way) comes up.
/// Returns the fraction of trials in which every s ≠ w had a good draw.
double good_intervention_coverage_mc(std::size_t u_size, std::size_t t, std::size_t trials,
                                     std::uint64_t seed);

/// 1 − (|U| − 1)(1 − p)^t with p = 1 / (2(|U| − 1)); the union-bound floor.
double good_intervention_union_bound(std::size_t u_size, std::size_t t);

/// (2 θ_max √s / ρ)^s.
double covering_number(double s, double theta_max, double rho);

struct GammaParams {
  double s = 1.0;
  double theta_max = 1.0;
  double L = 1.0;
  double eta = 0.1;
  double epsilon = 0.5;
  double iota = 0.5;
  double c1 = 1.0;
  double c2 = 1.0;
  double l = 2.0;
  double r = 2.0;
  double delta = 0.1;
  /// Latent dimension of the general bound; ε^r becomes ε^{d·r}. d = 1 is the
  /// two-variable case.
  double dimension = 1.0;
};

/// N_c log(2N_c/δ) (1/log(1/(1 − c1 ι^l)) + 1/log(1/(1 − c2 ε^{d r}))) with
/// N_c = covering_number(s, θ_max, η/(4L)).
double gamma_domain_bound(const GammaParams& params);

/// Domains needed to certify every orthant: 2^{d+1}.
double orthant_domain_count(std::size_t d);

/// min over [0,1] × [a,b] of (z1 − 1/2)² + (z2 − θ)².
double gamma_example_min(double theta, double a, double b);

struct IntervalProbabilities {
  double within = 0.0;  // P(support ⊆ [α, β])
  double covers = 0.0;  // P(support ⊇ [κ, 1 − κ])
};

/// Empirical probabilities for supports (min(A,B), max(A,B)), A, B ~ U[0,1].
IntervalProbabilities interval_probabilities_mc(double alpha, double beta, double kappa,
                                                std::size_t draws, std::uint64_t seed);
/// Closed forms (β − α)² and 2κ² (κ ≤ 1/2).
IntervalProbabilities interval_probabilities_exact(double alpha, double beta, double kappa);

using Support = std::variant<SupportBox, PolytopeSupport>;

/// Vertices of a support: the 2^d corners of a box, or the polytope's rows.
Matrix support_vertices(const Support& support);

/// Some ordered pair (p, q) such that every vertex of p is dominated by a
/// vertex of q, strictly on U. For boxes this is hi_q ⪰ hi_p; for polytopes it
/// is a sufficient certificate.
std::optional<std::pair<std::size_t, std::size_t>> support_variability_certificate(
    const std::vector<Support>& supports, const IndexSet& U);

struct OrthantReport {
  bool pass = false;
  std::size_t grid_points = 0;
  std::size_t invariant_points = 0;
  std::pair<std::size_t, std::size_t> certificate{0, 0};
  /// Invariant directions with U-mass above tol.
  std::vector<std::vector<double>> counterexamples;
};

/// Enumerates directions A on the grid {c / grid_res : c ∈ ℕ^d, Σc = grid_res}
/// inside the orthant given by `signs` (all +1 when empty). For each A, the
/// max and min of Aᵀz over every domain's vertices are compared across
/// domains; directions where both agree within `tol` must have
/// Σ_{r∈U} |A_r| ≤ tol. Throws Precondition when S-extremes differ across
/// domains or no pair certifies support variability (in the reflected
/// coordinates).
OrthantReport positive_orthant_oracle(const std::vector<Support>& supports, const IndexSet& S,
                                      const IndexSet& U, std::size_t grid_res = 50,
                                      double tol = 1e-9, std::vector<int> signs = {});

struct RankCheckReport {
  bool ok = false;
  bool rank_ok = false;
  bool vertex_condition_ok = false;
  std::size_t matrices_checked = 0;
  bool subsampled = false;
  std::optional<Matrix> offending;
};

/// Difference-matrix regularity for polytope supports. Every matrix M has row
/// r = (a vertex of domain r+1) − (one vertex of domain 0 shared by all rows);
/// the columns of M that are not identically zero must be linearly
/// independent. When more than `budget` matrices exist, `budget` of them are
/// drawn at random. Also checks that for every j ∈ U some domain p ≥ 1 has no
/// vertex whose z_j equals a z_j value of domain 0's vertices.
RankCheckReport polytope_diff_rank_check(const std::vector<PolytopeSupport>& polytopes,
                                         const IndexSet& U, std::size_t budget = 100000,
                                         std::uint64_t seed = 0);

}  // namespace invae::theory

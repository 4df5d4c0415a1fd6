#pragma once

// Polynomial mixing x = G · φ_p(z), where φ_p stacks 1, z, and the distinct
// monomials of each degree up to p. Monomials within a degree block are
// ordered lexicographically by their nondecreasing index multisets, e.g. for
// d = 2, p = 2: [1, z0, z1, z0², z0·z1, z1²]. The polynomial decoder uses the
// same basis.

#include <cstdint>
#include <span>
#include <vector>

#include "invae/matrix.hpp"

namespace invae {

/// C(d + p, p): number of monomials of total degree ≤ p in d variables.
std::size_t monomial_dim(std::size_t d, std::size_t p);

/// Precomputed recurrence for the monomial basis: every monomial of degree
/// q ≥ 1 is `feature[parent] * z[variable]`, where `parent` is the degree
/// q − 1 monomial obtained by dropping the last index of the multiset.
class MonomialBasis {
 public:
  MonomialBasis(std::size_t d, std::size_t p);

  std::size_t d() const noexcept { return d_; }
  std::size_t degree() const noexcept { return p_; }
  std::size_t dim() const noexcept { return parent_.size(); }

  /// Index multiset of feature j (empty for the constant).
  const std::vector<std::size_t>& multiset(std::size_t j) const { return multisets_[j]; }

  void evaluate(std::span<const double> z, std::span<double> out) const;
  /// Rows of z → rows of features.
  Matrix evaluate(const Matrix& z) const;
  /// Accumulates ∂/∂z of Σ_j grad_out[j]·φ_j(z) into grad_z, given φ(z).
  void backward(std::span<const double> z, std::span<const double> features,
                std::span<const double> grad_out, std::span<double> grad_z) const;

 private:
  std::size_t d_;
  std::size_t p_;
  std::vector<std::size_t> parent_;
  std::vector<std::size_t> variable_;
  std::vector<std::vector<std::size_t>> multisets_;
};

std::vector<double> monomial_features(std::span<const double> z, std::size_t p);

struct PolynomialMixing {
  std::size_t d = 0;
  std::size_t n = 0;
  std::size_t p = 1;
  std::uint64_t seed = 0;
  Matrix G;  // n × monomial_dim(d, p)
};

enum class RankPolicy {
  /// n ≥ D and numerically full column rank, else error.
  Strict,
  /// Accept a rank-deficient G (needed for configurations with n < D).
  AllowDeficient,
};

/// Entries i.i.d. Uniform[0, 1]; resampled (≤ 100 tries) until full column
/// rank under RankPolicy::Strict.
PolynomialMixing make_random_mixing(std::size_t d, std::size_t n, std::size_t p,
                                    std::uint64_t seed, RankPolicy policy = RankPolicy::Strict);

/// Degree-1 mixing with a zero constant column: x = A·z, A ~ Uniform[0, 1].
PolynomialMixing make_linear_mixing(std::size_t d, std::size_t n, std::uint64_t seed);

/// Row-wise x = G · φ_p(z).
Matrix apply_mixing(const PolynomialMixing& g, const Matrix& Z);

}  // namespace invae

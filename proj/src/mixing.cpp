#include "invae/mixing.hpp"

#include <limits>
#include <string>

#include "invae/error.hpp"
#include "invae/linalg.hpp"
#include "invae/rng.hpp"

namespace invae {

std::size_t monomial_dim(std::size_t d, std::size_t p) {
  if (d == 0 || p == 0) throw Error(ErrorKind::InvalidArgument, "monomial_dim needs d, p >= 1");
  // C(d + p, p) built incrementally: C(d + i, i) = C(d + i − 1, i − 1)·(d + i)/i.
  std::size_t c = 1;
  for (std::size_t i = 1; i <= p; ++i) {
    const std::size_t mul = d + i;
    if (c > std::numeric_limits<std::size_t>::max() / mul) {
      throw Error(ErrorKind::Numeric, "monomial_dim overflows for d=" + std::to_string(d) +
                                          ", p=" + std::to_string(p));
    }
    c = c * mul / i;
  }
  return c;
}

MonomialBasis::MonomialBasis(std::size_t d, std::size_t p) : d_(d), p_(p) {
  const std::size_t dim = monomial_dim(d, p);
  parent_.reserve(dim);
  variable_.reserve(dim);
  multisets_.reserve(dim);
  parent_.push_back(0);
  variable_.push_back(0);
  multisets_.emplace_back();
  // Degree-q block from the degree-(q−1) block: extend each multiset by every
  // index ≥ its last index. Iterating parents in order keeps the block sorted.
  std::size_t prev_begin = 0;
  std::size_t prev_end = 1;
  for (std::size_t q = 1; q <= p; ++q) {
    const std::size_t begin = multisets_.size();
    for (std::size_t par = prev_begin; par < prev_end; ++par) {
      const std::size_t first = multisets_[par].empty() ? 0 : multisets_[par].back();
      for (std::size_t v = first; v < d; ++v) {
        auto ms = multisets_[par];
        ms.push_back(v);
        multisets_.push_back(std::move(ms));
        parent_.push_back(par);
        variable_.push_back(v);
      }
    }
    prev_begin = begin;
    prev_end = multisets_.size();
  }
}

void MonomialBasis::evaluate(std::span<const double> z, std::span<double> out) const {
  out[0] = 1.0;
  for (std::size_t j = 1; j < parent_.size(); ++j) out[j] = out[parent_[j]] * z[variable_[j]];
}

Matrix MonomialBasis::evaluate(const Matrix& z) const {
  if (z.cols() != d_) throw Error(ErrorKind::Shape, "monomial basis expects " + std::to_string(d_) + " columns");
  Matrix out(z.rows(), dim());
  for (std::size_t r = 0; r < z.rows(); ++r) evaluate(z.row(r), out.row(r));
  return out;
}

void MonomialBasis::backward(std::span<const double> z, std::span<const double> features,
                             std::span<const double> grad_out, std::span<double> grad_z) const {
  std::vector<double> g(grad_out.begin(), grad_out.end());
  for (std::size_t j = parent_.size(); j-- > 1;) {
    if (g[j] == 0.0) continue;
    grad_z[variable_[j]] += g[j] * features[parent_[j]];
    g[parent_[j]] += g[j] * z[variable_[j]];
  }
}

std::vector<double> monomial_features(std::span<const double> z, std::size_t p) {
  MonomialBasis basis(z.size(), p);
  std::vector<double> out(basis.dim());
  basis.evaluate(z, out);
  return out;
}

PolynomialMixing make_random_mixing(std::size_t d, std::size_t n, std::size_t p,
                                    std::uint64_t seed, RankPolicy policy) {
  const std::size_t dim = monomial_dim(d, p);
  if (policy == RankPolicy::Strict && n < dim) {
    throw Error(ErrorKind::RankImpossible, "n=" + std::to_string(n) + " < monomial_dim=" +
                                               std::to_string(dim) + ": full column rank impossible");
  }
  const std::size_t target_rank = std::min(n, dim);
  for (std::uint64_t attempt = 0; attempt < 100; ++attempt) {
    Rng rng(derive_seed(seed, attempt));
    PolynomialMixing g{d, n, p, seed, Matrix(n, dim)};
    for (auto& v : g.G.flat()) v = rng.uniform();
    if (linalg::numerical_rank(g.G, 1e-9) == target_rank) return g;
  }
  throw Error(ErrorKind::GenerationFailure, "no full-rank mixing after 100 draws");
}

PolynomialMixing make_linear_mixing(std::size_t d, std::size_t n, std::uint64_t seed) {
  if (n < d) throw Error(ErrorKind::RankImpossible, "linear mixing needs n >= d");
  for (std::uint64_t attempt = 0; attempt < 100; ++attempt) {
    Rng rng(derive_seed(seed, attempt));
    PolynomialMixing g{d, n, 1, seed, Matrix(n, d + 1)};
    for (std::size_t r = 0; r < n; ++r) {
      for (std::size_t c = 1; c <= d; ++c) g.G(r, c) = rng.uniform();
    }
    Matrix a(n, d);
    for (std::size_t r = 0; r < n; ++r) {
      for (std::size_t c = 0; c < d; ++c) a(r, c) = g.G(r, c + 1);
    }
    if (linalg::numerical_rank(a, 1e-9) == d) return g;
  }
  throw Error(ErrorKind::GenerationFailure, "no full-rank linear mixing after 100 draws");
}

Matrix apply_mixing(const PolynomialMixing& g, const Matrix& Z) {
  if (Z.cols() != g.d) {
    throw Error(ErrorKind::Shape, "apply_mixing expects " + std::to_string(g.d) + " columns, got " +
                                      std::to_string(Z.cols()));
  }
  MonomialBasis basis(g.d, g.p);
  const Matrix features = basis.evaluate(Z);
  return matmul(features, g.G.transposed());
}

}  // namespace invae

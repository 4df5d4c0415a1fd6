#include <gtest/gtest.h>

#include <cmath>
#include <functional>

#include <Eigen/Dense>

#include "invae/linalg.hpp"
#include "invae/mixing.hpp"
#include "test_util.hpp"

using namespace invae;
using invae::testing::random_matrix;

namespace {

// Nested-loop enumeration of nondecreasing index tuples, degree by degree.
std::vector<double> naive_features(const std::vector<double>& z, std::size_t p) {
  std::vector<double> out{1.0};
  const std::size_t d = z.size();
  for (std::size_t q = 1; q <= p; ++q) {
    std::vector<std::size_t> idx(q, 0);
    std::function<void(std::size_t, std::size_t)> rec = [&](std::size_t pos, std::size_t start) {
      if (pos == q) {
        double v = 1.0;
        for (std::size_t i : idx) v *= z[i];
        out.push_back(v);
        return;
      }
      for (std::size_t i = start; i < d; ++i) {
        idx[pos] = i;
        rec(pos + 1, i);
      }
    };
    rec(0, 0);
  }
  return out;
}

std::size_t gram_rank(const Matrix& m) {
  Eigen::MatrixXd e(m.rows(), m.cols());
  for (std::size_t i = 0; i < m.rows(); ++i)
    for (std::size_t j = 0; j < m.cols(); ++j) e(i, j) = m(i, j);
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(e.transpose() * e);
  const double top = es.eigenvalues().maxCoeff();
  std::size_t r = 0;
  for (double v : es.eigenvalues()) r += v > 1e-14 * top;
  return r;
}

}  // namespace

TEST(Monomials, Dimension) {
  EXPECT_EQ(monomial_dim(2, 2), 6u);
  EXPECT_EQ(monomial_dim(3, 1), 4u);
  EXPECT_EQ(monomial_dim(2, 3), 10u);
  EXPECT_EQ(monomial_dim(14, 3), 680u);
  EXPECT_EQ(naive_features(std::vector<double>(2, 1.0), 3).size(), 10u);
  EXPECT_THROW(monomial_dim(1000000, 1000000), Error);
}

TEST(Monomials, Examples) {
  std::vector<double> zero{0, 0};
  EXPECT_EQ(monomial_features(zero, 2), (std::vector<double>{1, 0, 0, 0, 0, 0}));
  std::vector<double> z{2, 3};
  EXPECT_EQ(monomial_features(z, 2), (std::vector<double>{1, 2, 3, 4, 6, 9}));
}

TEST(Monomials, MatchesNaiveEnumeration) {
  Rng rng(5);
  for (int rep = 0; rep < 20; ++rep) {
    std::vector<double> z{rng.uniform(-2, 2), rng.uniform(-2, 2), rng.uniform(-2, 2)};
    auto got = monomial_features(z, 3);
    auto ref = naive_features(z, 3);
    ASSERT_EQ(got.size(), ref.size());
    for (std::size_t i = 0; i < got.size(); ++i) EXPECT_NEAR(got[i], ref[i], 1e-12);
  }
}

TEST(Monomials, PrefixAndHomogeneity) {
  std::vector<double> z{0.3, -1.2, 0.7};
  const double c = 1.7;
  std::vector<double> zc{z[0] * c, z[1] * c, z[2] * c};
  auto f = monomial_features(z, 3), fc = monomial_features(zc, 3);
  EXPECT_EQ(f[0], 1.0);
  for (std::size_t i = 0; i < 3; ++i) EXPECT_EQ(f[1 + i], z[i]);
  MonomialBasis basis(3, 3);
  for (std::size_t j = 0; j < basis.dim(); ++j) {
    const double q = static_cast<double>(basis.multiset(j).size());
    EXPECT_NEAR(fc[j], std::pow(c, q) * f[j], 1e-12);
  }
}

TEST(Monomials, BasisBackwardMatchesFiniteDifference) {
  MonomialBasis basis(3, 3);
  std::vector<double> z{0.4, -0.8, 1.1};
  Matrix w = random_matrix(1, basis.dim(), 2);
  auto objective = [&](const std::vector<double>& zz) {
    std::vector<double> f(basis.dim());
    basis.evaluate(zz, f);
    double s = 0;
    for (std::size_t j = 0; j < f.size(); ++j) s += w(0, j) * f[j];
    return s;
  };
  std::vector<double> feats(basis.dim()), g(3, 0.0);
  basis.evaluate(z, feats);
  basis.backward(z, feats, w.flat(), g);
  for (std::size_t i = 0; i < 3; ++i) {
    auto up = z, down = z;
    up[i] += 1e-6;
    down[i] -= 1e-6;
    EXPECT_NEAR(g[i], (objective(up) - objective(down)) / 2e-6, 1e-6);
  }
}

TEST(Mixing, RankErrorsAndSuccess) {
  EXPECT_ERROR_KIND(make_random_mixing(2, 2, 2, 1), ErrorKind::RankImpossible);
  PolynomialMixing big = make_random_mixing(14, 200, 3, 1, RankPolicy::AllowDeficient);
  EXPECT_EQ(big.G.rows(), 200u);
  EXPECT_EQ(big.G.cols(), 680u);
  PolynomialMixing g = make_random_mixing(6, 200, 2, 3);
  EXPECT_EQ(gram_rank(g.G), monomial_dim(6, 2));
  EXPECT_EQ(linalg::numerical_rank(g.G), monomial_dim(6, 2));
  for (double v : g.G.flat()) {
    EXPECT_GE(v, 0.0);
    EXPECT_LE(v, 1.0);
  }
  EXPECT_EQ(make_random_mixing(6, 200, 2, 3).G, g.G);
}

TEST(Mixing, ApplyExamples) {
  PolynomialMixing g{1, 3, 2, 0, Matrix::identity(3)};
  Matrix z{{2}};
  EXPECT_EQ(apply_mixing(g, z), (Matrix{{1, 2, 4}}));

  PolynomialMixing lin = make_linear_mixing(3, 6, 4);
  Matrix Z = random_matrix(10, 3, 9);
  Matrix A(6, 3);
  for (std::size_t i = 0; i < 6; ++i) {
    EXPECT_EQ(lin.G(i, 0), 0.0);
    for (std::size_t j = 0; j < 3; ++j) A(i, j) = lin.G(i, j + 1);
  }
  EXPECT_LT(max_abs_diff(apply_mixing(lin, Z), matmul(Z, A.transposed())), 1e-14);
  EXPECT_ERROR_KIND(apply_mixing(lin, random_matrix(2, 4, 1)), ErrorKind::Shape);
}

TEST(Mixing, LinearInG) {
  PolynomialMixing a = make_random_mixing(3, 20, 2, 1), b = make_random_mixing(3, 20, 2, 2);
  PolynomialMixing sum = a;
  for (std::size_t i = 0; i < sum.G.size(); ++i) sum.G.data()[i] += b.G.data()[i];
  Matrix Z = random_matrix(30, 3, 5);
  Matrix xa = apply_mixing(a, Z), xb = apply_mixing(b, Z);
  for (std::size_t i = 0; i < xa.size(); ++i) xa.data()[i] += xb.data()[i];
  EXPECT_LT(max_abs_diff(apply_mixing(sum, Z), xa), 1e-12);
}

TEST(Mixing, Injective) {
  PolynomialMixing g = make_random_mixing(4, 200, 2, 8);
  Matrix Z = random_matrix(1000, 4, 3);
  Matrix X = apply_mixing(g, Z);
  double best = INFINITY;
  for (std::size_t i = 0; i < X.rows(); ++i)
    for (std::size_t j = i + 1; j < X.rows(); ++j) {
      double s = 0;
      for (std::size_t c = 0; c < X.cols(); ++c) s += (X(i, c) - X(j, c)) * (X(i, c) - X(j, c));
      best = std::min(best, s);
    }
  EXPECT_GT(best, 0.0);
}

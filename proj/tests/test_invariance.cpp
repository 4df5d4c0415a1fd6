#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>

#include "invae/invariance.hpp"
#include "test_util.hpp"

using namespace invae;
using invae::ad::Bandwidth;
using invae::ad::Tape;
using invae::ad::Var;
using invae::testing::random_matrix;

namespace {

Matrix column(std::initializer_list<double> v) {
  Matrix m(v.size(), 1);
  std::size_t i = 0;
  for (double x : v) m(i++, 0) = x;
  return m;
}

Matrix shuffled_rows(const Matrix& m, std::uint64_t seed) {
  auto perm = permutation(m.rows(), seed);
  return m.select_rows(perm);
}

PenaltyConfig config(PenaltyKind kind, IndexSet s_hat, std::size_t k = 3, double sigma = 1.0) {
  PenaltyConfig c;
  c.kind = kind;
  c.S_hat = std::move(s_hat);
  c.top_k = k;
  c.bandwidth = Bandwidth{sigma, false};
  return c;
}

// Brute-force V-statistic.
double naive_mmd(const Matrix& X, const Matrix& Y, double sigma) {
  auto k = [&](const Matrix& A, std::size_t i, const Matrix& B, std::size_t j) {
    double s = 0;
    for (std::size_t c = 0; c < A.cols(); ++c) s += (A(i, c) - B(j, c)) * (A(i, c) - B(j, c));
    return std::exp(-s / (2 * sigma * sigma));
  };
  double xx = 0, yy = 0, xy = 0;
  for (std::size_t i = 0; i < X.rows(); ++i)
    for (std::size_t j = 0; j < X.rows(); ++j) xx += k(X, i, X, j);
  for (std::size_t i = 0; i < Y.rows(); ++i)
    for (std::size_t j = 0; j < Y.rows(); ++j) yy += k(Y, i, Y, j);
  for (std::size_t i = 0; i < X.rows(); ++i)
    for (std::size_t j = 0; j < Y.rows(); ++j) xy += k(X, i, Y, j);
  const double n = X.rows(), m = Y.rows();
  return xx / (n * n) + yy / (m * m) - 2 * xy / (n * m);
}

}  // namespace

TEST(MinMax, Examples) {
  Matrix a = random_matrix(20, 3, 1);
  std::vector<Matrix> same{a, a, a};
  EXPECT_EQ(minmax_penalty(same, {0, 1, 2}, 3), 0.0);
  std::vector<Matrix> two{column({0, 0.2, 0.7, 1}), column({0.5, 1.1, 2})};
  EXPECT_DOUBLE_EQ(minmax_penalty(two, {0}, 1), 1.25);
}

TEST(MinMax, LiteralDefinitionAtTopOne) {
  std::vector<Matrix> b{random_matrix(15, 3, 2), random_matrix(12, 3, 3), random_matrix(10, 3, 4)};
  IndexSet s{0, 2};
  double ref = 0;
  for (std::size_t p = 0; p < b.size(); ++p)
    for (std::size_t q = p + 1; q < b.size(); ++q)
      for (std::size_t i : s) {
        auto cp = b[p].column(i), cq = b[q].column(i);
        const double dmin = *std::min_element(cp.begin(), cp.end()) - *std::min_element(cq.begin(), cq.end());
        const double dmax = *std::max_element(cp.begin(), cp.end()) - *std::max_element(cq.begin(), cq.end());
        ref += dmin * dmin + dmax * dmax;
      }
  EXPECT_NEAR(minmax_penalty(b, s, 1), ref, 1e-14);
}

TEST(MinMax, Errors) {
  std::vector<Matrix> one{random_matrix(5, 1, 1)};
  EXPECT_ERROR_KIND(minmax_penalty(one, {0}, 1), ErrorKind::Arity);
  std::vector<Matrix> small{random_matrix(5, 1, 1), random_matrix(2, 1, 2)};
  EXPECT_ERROR_KIND(minmax_penalty(small, {0}, 3), ErrorKind::InsufficientBatch);
}

TEST(MinMax, GradientMatchesFiniteDifferences) {
  std::vector<Matrix> p{random_matrix(3 * 8, 3, 5)};
  auto ranges = contiguous_ranges(std::vector<std::size_t>{8, 8, 8});
  auto r = invae::testing::check_gradients(p, [&](Tape& t, const std::vector<Var>& v) {
    return minmax_penalty(t, v[0], ranges, {0, 2}, 3);
  });
  EXPECT_LT(r.max_rel_error, 1e-4);
}

TEST(Mmd, Examples) {
  Matrix X = random_matrix(10, 2, 6);
  EXPECT_NEAR(mmd_rbf(X, X, 1.0), 0.0, 1e-15);
  EXPECT_NEAR(mmd_rbf(Matrix{{0.0}}, Matrix{{1.0}}, 1.0), 2 - 2 * std::exp(-0.5), 1e-15);
  EXPECT_NEAR(2 - 2 * std::exp(-0.5), 0.786939, 1e-6);
  Matrix Y = random_matrix(7, 2, 7);
  EXPECT_NEAR(mmd_rbf(X, Y, 0.7), mmd_rbf(Y, X, 0.7), 1e-15);
  EXPECT_NEAR(mmd_rbf(X, Y, 0.7), naive_mmd(X, Y, 0.7), 1e-13);
  EXPECT_ERROR_KIND(mmd_rbf(X, random_matrix(3, 3, 1), 1.0), ErrorKind::Shape);
  EXPECT_ERROR_KIND(mmd_rbf(X, Y, 0.0), ErrorKind::InvalidArgument);
}

TEST(Mmd, GradientMatchesFiniteDifferences) {
  std::vector<Matrix> p{random_matrix(3 * 6, 3, 8)};
  auto ranges = contiguous_ranges(std::vector<std::size_t>{6, 6, 6});
  auto r = invae::testing::check_gradients(p, [&](Tape& t, const std::vector<Var>& v) {
    return mmd_penalty(t, v[0], ranges, {0, 1}, Bandwidth{0.9, false});
  });
  EXPECT_LT(r.max_rel_error, 1e-4);
}

TEST(Mmd, TapeMatchesDirect) {
  std::vector<Matrix> b{random_matrix(9, 3, 9), random_matrix(7, 3, 10), random_matrix(5, 3, 11)};
  Matrix stacked = vstack(b);
  auto ranges = contiguous_ranges(std::vector<std::size_t>{9, 7, 5});
  for (PenaltyKind kind : {PenaltyKind::MinMax, PenaltyKind::Mmd, PenaltyKind::MinMaxPlusMmd}) {
    auto c = config(kind, {1, 2}, 2, 1.1);
    Tape t;
    Var z = t.constant(stacked);
    Var pen = total_penalty(t, z, ranges, c);
    t.forward();
    EXPECT_NEAR(t.scalar(pen), total_penalty(b, c), 1e-12) << to_string(kind);
  }
}

TEST(Bandwidth, Median) {
  EXPECT_NEAR(median_bandwidth(Matrix{{0.0}}, Matrix{{2.0}}), std::sqrt(2.0), 1e-15);
  Matrix X = random_matrix(60, 2, 12), Y = random_matrix(40, 2, 13);
  const double s = median_bandwidth(X, Y);
  Matrix Xc = X, Yc = Y;
  for (double& v : Xc.flat()) v *= -3.0;
  for (double& v : Yc.flat()) v *= -3.0;
  EXPECT_NEAR(median_bandwidth(Xc, Yc), 3.0 * s, 1e-12);
  // Brute force over the pooled 100 points.
  Matrix P = vstack(std::vector<Matrix>{X, Y});
  std::vector<double> d;
  for (std::size_t i = 0; i < P.rows(); ++i)
    for (std::size_t j = i + 1; j < P.rows(); ++j) {
      double q = 0;
      for (std::size_t c = 0; c < 2; ++c) q += (P(i, c) - P(j, c)) * (P(i, c) - P(j, c));
      d.push_back(q);
    }
  std::sort(d.begin(), d.end());
  const double med = d.size() % 2 ? d[d.size() / 2] : 0.5 * (d[d.size() / 2 - 1] + d[d.size() / 2]);
  EXPECT_NEAR(s * s, med / 2, 1e-12);
}

TEST(Bandwidth, Degenerate) {
  Matrix X(3, 2, 1.0);
  EXPECT_ERROR_KIND(median_bandwidth(X, X), ErrorKind::DegenerateBandwidth);
  auto c = median_bandwidth_or_default(X, X);
  EXPECT_TRUE(c.degenerate);
  EXPECT_EQ(c.sigma, 1.0);
}

TEST(Penalty, IdenticalDomainsGiveZero) {
  Matrix a = random_matrix(12, 3, 14);
  std::vector<Matrix> b{a, a, a, a};
  for (PenaltyKind kind : {PenaltyKind::MinMax, PenaltyKind::Mmd, PenaltyKind::MinMaxPlusMmd})
    EXPECT_NEAR(total_penalty(b, config(kind, {0, 1, 2})), 0.0, 1e-14);
}

TEST(Penalty, SumIsExact) {
  std::vector<Matrix> b{random_matrix(12, 3, 15), random_matrix(12, 3, 16), random_matrix(12, 3, 17)};
  const double mm = total_penalty(b, config(PenaltyKind::MinMax, {0, 1}));
  const double mmd = total_penalty(b, config(PenaltyKind::Mmd, {0, 1}));
  EXPECT_EQ(total_penalty(b, config(PenaltyKind::MinMaxPlusMmd, {0, 1})), mm + mmd);
}

TEST(Penalty, NonNegativeAndPermutationInvariant) {
  for (std::uint64_t seed = 0; seed < 50; ++seed) {
    std::vector<Matrix> b{random_matrix(10, 2, seed * 3), random_matrix(11, 2, seed * 3 + 1),
                          random_matrix(12, 2, seed * 3 + 2)};
    std::vector<Matrix> s{shuffled_rows(b[0], seed), shuffled_rows(b[1], seed + 1),
                          shuffled_rows(b[2], seed + 2)};
    for (PenaltyKind kind : {PenaltyKind::MinMax, PenaltyKind::Mmd, PenaltyKind::MinMaxPlusMmd}) {
      auto c = config(kind, {0, 1}, 3, 0.8);
      const double v = total_penalty(b, c);
      EXPECT_GE(v, 0.0);
      EXPECT_NEAR(total_penalty(s, c), v, 1e-12 * std::max(1.0, v));
    }
  }
}

TEST(Penalty, DecreasesAlongHomotopy) {
  Matrix X = random_matrix(30, 2, 20);
  Matrix Y = X;
  for (std::size_t i = 0; i < Y.rows(); ++i) {
    Y(i, 0) = 2 * Y(i, 0) + 1;
    Y(i, 1) = 0.5 * Y(i, 1) - 0.7;
  }
  for (PenaltyKind kind : {PenaltyKind::MinMax, PenaltyKind::Mmd, PenaltyKind::MinMaxPlusMmd}) {
    double prev = INFINITY;
    for (int step = 0; step <= 9; ++step) {
      const double t = step / 9.0;
      Matrix Yt = Y;
      for (std::size_t i = 0; i < Yt.size(); ++i) Yt.data()[i] = (1 - t) * Y.data()[i] + t * X.data()[i];
      std::vector<Matrix> b{X, Yt};
      const double v = total_penalty(b, config(kind, {0, 1}, 3));
      EXPECT_LT(v, prev + 1e-15) << to_string(kind) << " t=" << t;
      prev = v;
    }
    EXPECT_NEAR(prev, 0.0, 1e-14);
  }
}

TEST(Penalty, ConfigValidation) {
  auto c = config(PenaltyKind::Mmd, {});
  EXPECT_ERROR_KIND(validate(c), ErrorKind::InvalidArgument);
  c.S_hat = {0};
  c.top_k = 0;
  EXPECT_ERROR_KIND(validate(c), ErrorKind::InvalidArgument);
  EXPECT_EQ(penalty_kind_from_string("minmax+mmd"), PenaltyKind::MinMaxPlusMmd);
  EXPECT_ERROR_KIND(penalty_kind_from_string("l2"), ErrorKind::Config);
}

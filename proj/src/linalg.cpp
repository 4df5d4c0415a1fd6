#include "invae/linalg.hpp"

#include <Eigen/Dense>
#include <limits>

#include "invae/error.hpp"

namespace invae::linalg {
namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

Eigen::Map<const RowMat> view(const Matrix& m) {
  return Eigen::Map<const RowMat>(m.data(), static_cast<Eigen::Index>(m.rows()),
                                  static_cast<Eigen::Index>(m.cols()));
}

Matrix from_eigen(const Eigen::MatrixXd& e) {
  Matrix out(static_cast<std::size_t>(e.rows()), static_cast<std::size_t>(e.cols()));
  for (Eigen::Index r = 0; r < e.rows(); ++r) {
    for (Eigen::Index c = 0; c < e.cols(); ++c) {
      out(static_cast<std::size_t>(r), static_cast<std::size_t>(c)) = e(r, c);
    }
  }
  return out;
}

}  // namespace

std::vector<double> singular_values(const Matrix& m) {
  if (m.empty()) return {};
  Eigen::BDCSVD<Eigen::MatrixXd> svd(view(m));
  const auto& s = svd.singularValues();
  return std::vector<double>(s.data(), s.data() + s.size());
}

std::size_t numerical_rank(const Matrix& m, double rel_tol) {
  const auto s = singular_values(m);
  if (s.empty() || s.front() == 0.0) return 0;
  std::size_t rank = 0;
  for (double v : s) {
    if (v > rel_tol * s.front()) ++rank;
  }
  return rank;
}

double condition_number(const Matrix& m) {
  const auto s = singular_values(m);
  if (s.empty()) return std::numeric_limits<double>::infinity();
  if (s.back() == 0.0) return std::numeric_limits<double>::infinity();
  return s.front() / s.back();
}

LeastSquares lstsq(const Matrix& x, const Matrix& y) {
  if (x.rows() != y.rows()) throw Error(ErrorKind::Shape, "lstsq row mismatch");
  Eigen::CompleteOrthogonalDecomposition<Eigen::MatrixXd> cod(view(x));
  LeastSquares out;
  out.coef = from_eigen(cod.solve(Eigen::MatrixXd(view(y))));
  out.rank_deficient = cod.rank() < static_cast<Eigen::Index>(x.cols());
  return out;
}

Matrix pseudo_inverse(const Matrix& m) {
  Eigen::CompleteOrthogonalDecomposition<Eigen::MatrixXd> cod(view(m));
  return from_eigen(cod.pseudoInverse());
}

Matrix inverse(const Matrix& m) {
  if (m.rows() != m.cols()) throw Error(ErrorKind::Shape, "inverse of non-square matrix");
  Eigen::FullPivLU<Eigen::MatrixXd> lu(view(m));
  if (!lu.isInvertible()) throw Error(ErrorKind::Numeric, "matrix is singular");
  return from_eigen(lu.inverse());
}

Whitening zca_whitening(const Matrix& cov, double rel_floor) {
  if (cov.rows() != cov.cols()) throw Error(ErrorKind::Shape, "covariance must be square");
  if (!(rel_floor > 0.0)) throw Error(ErrorKind::InvalidArgument, "whitening floor must be positive");
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(Eigen::MatrixXd(view(cov)));
  if (es.info() != Eigen::Success) throw Error(ErrorKind::Numeric, "eigendecomposition failed");
  const Eigen::VectorXd lam = es.eigenvalues();
  const double floor = rel_floor * std::max(lam.maxCoeff(), 0.0);
  if (!(floor > 0.0)) throw Error(ErrorKind::Numeric, "covariance is zero");
  Eigen::VectorXd root(lam.size());
  for (Eigen::Index i = 0; i < lam.size(); ++i) root(i) = std::sqrt(std::max(lam(i), 0.0) + floor);
  const Eigen::MatrixXd& v = es.eigenvectors();
  Whitening w;
  w.forward = from_eigen(v * root.cwiseInverse().asDiagonal() * v.transpose());
  w.inverse = from_eigen(v * root.asDiagonal() * v.transpose());
  return w;
}

}  // namespace invae::linalg

#pragma once

#include <vector>

#include "invae/matrix.hpp"

namespace invae::linalg {

/// Descending singular values.
std::vector<double> singular_values(const Matrix& m);

/// Count of singular values above rel_tol · σ_max.
std::size_t numerical_rank(const Matrix& m, double rel_tol = 1e-9);

/// σ_max / σ_min; +inf when σ_min is zero.
double condition_number(const Matrix& m);

struct LeastSquares {
  Matrix coef;               // p × q
  bool rank_deficient = false;
};

/// Minimum-norm solution of min ‖X·B − Y‖_F.
LeastSquares lstsq(const Matrix& x, const Matrix& y);

Matrix pseudo_inverse(const Matrix& m);

Matrix inverse(const Matrix& m);

struct Whitening {
  Matrix forward;  // x·forward has identity covariance (up to the floor)
  Matrix inverse;
};

/// ZCA whitening of a symmetric PSD covariance. Eigenvalues are raised to
/// rel_floor · λ_max before the inverse square root.
Whitening zca_whitening(const Matrix& cov, double rel_floor);

}  // namespace invae::linalg

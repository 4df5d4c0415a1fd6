#pragma once

// Reverse-mode differentiation over a static graph of matrix ops.
//
// A Tape is built once (leaves + ops), then evaluated any number of times:
// bind inputs, forward(), backward(loss). Leaves read their values through
// pointers, so parameters updated in place by the optimizer are picked up on
// the next forward() without rebuilding the graph.

#include <cstddef>
#include <memory>
#include <string>
#include <vector>

#include "invae/matrix.hpp"

namespace invae::ad {

struct Var {
  std::size_t id = static_cast<std::size_t>(-1);
};

/// Kernel bandwidth for the fused RBF op. With `median` set, σ² is half the
/// median pairwise squared distance of the current forward pass and is held
/// constant for differentiation.
struct Bandwidth {
  double sigma = 1.0;
  bool median = false;
};

class Tape {
 public:
  Tape();
  ~Tape();
  Tape(Tape&&) noexcept;
  Tape& operator=(Tape&&) noexcept;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  // Leaves.
  Var input(std::string name, bool requires_grad = false);
  Var param(Matrix* storage);
  Var constant(Matrix value);

  // Ops.
  Var matmul(Var a, Var b);
  Var add_bias(Var x, Var bias);  // bias: 1 × cols, broadcast over rows
  Var leaky_relu(Var x, double negative_slope);
  Var add(Var a, Var b);
  Var sub(Var a, Var b);
  Var mul(Var a, Var b);  // elementwise
  Var scale(Var a, double factor);
  Var square(Var a);
  Var sum(Var a);   // 1 × 1
  Var mean(Var a);  // 1 × 1
  Var mse(Var a, Var b);  // mean over all elements of (a − b)²
  Var concat_cols(Var a, Var b);
  Var slice_cols(Var a, std::vector<std::size_t> cols);
  Var slice_rows(Var a, std::size_t begin, std::size_t end);
  Var pairwise_sq_dist(Var a, Var b);  // rows(a) × rows(b)
  Var exp(Var a);
  Var rbf(Var sq_dist, Bandwidth bandwidth);  // exp(−D / (2σ²))
  /// Σ_ij W_ij exp(−‖z_i − z_j‖² / (2σ²)) over the rows of z; W symmetric.
  /// Same value as sum(mul(rbf(pairwise_sq_dist(z, z)), W)) in O(n) memory.
  Var rbf_weighted_sum(Var z, Matrix weights, Bandwidth bandwidth);
  /// 2 × cols: row 0 = mean of the k smallest entries per column, row 1 = mean
  /// of the k largest. Ties resolve by row index.
  Var extreme_means(Var a, std::size_t k);
  Var monomials(Var z, std::size_t degree);

  void bind(Var input, const Matrix& value);

  /// Evaluates every node. Throws Shape on mismatched operands and Numeric on
  /// a non-finite value.
  void forward();
  /// Accumulates d(loss)/d(node) for every node that depends on a parameter or
  /// a grad-requiring input. `loss` must be 1 × 1.
  void backward(Var loss);

  const Matrix& value(Var v) const;
  double scalar(Var v) const;
  const Matrix& grad(Var v) const;

  /// σ² used by an rbf or rbf_weighted_sum node in the last forward pass.
  double rbf_sigma_sq(Var v) const;
  /// True if the last forward pass fell back to σ = 1 because every pairwise
  /// distance was zero.
  bool rbf_degenerate(Var v) const;

  std::size_t node_count() const;

 private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
};

/// Median of the pairwise squared distances in `sq_dist`. With `same_sample`
/// the matrix is a square self-distance matrix and only the strict upper
/// triangle counts.
double median_pairwise(const Matrix& sq_dist, bool same_sample);

}  // namespace invae::ad

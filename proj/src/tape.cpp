#include "invae/tape.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <optional>

#include "invae/error.hpp"
#include "invae/kernels.hpp"
#include "invae/mixing.hpp"

namespace invae::ad {
namespace {

enum class Op {
  Input, Param, Const, MatMul, AddBias, LeakyRelu, Add, Sub, Mul, Scale, Square, Sum, Mean, Mse,
  ConcatCols, SliceCols, SliceRows, PairwiseSqDist, Exp, Rbf, RbfWeightedSum, ExtremeMeans,
  Monomials,
};

const char* op_name(Op op) {
  switch (op) {
    case Op::Input: return "input";
    case Op::Param: return "param";
    case Op::Const: return "const";
    case Op::MatMul: return "matmul";
    case Op::AddBias: return "add_bias";
    case Op::LeakyRelu: return "leaky_relu";
    case Op::Add: return "add";
    case Op::Sub: return "sub";
    case Op::Mul: return "mul";
    case Op::Scale: return "scale";
    case Op::Square: return "square";
    case Op::Sum: return "sum";
    case Op::Mean: return "mean";
    case Op::Mse: return "mse";
    case Op::ConcatCols: return "concat_cols";
    case Op::SliceCols: return "slice_cols";
    case Op::SliceRows: return "slice_rows";
    case Op::PairwiseSqDist: return "pairwise_sq_dist";
    case Op::Exp: return "exp";
    case Op::Rbf: return "rbf";
    case Op::RbfWeightedSum: return "rbf_weighted_sum";
    case Op::ExtremeMeans: return "extreme_means";
    case Op::Monomials: return "monomials";
  }
  return "?";
}

struct Node {
  Op op = Op::Const;
  std::size_t a = 0;
  std::size_t b = 0;
  double scalar = 0.0;           // slope / factor
  std::size_t count = 0;         // k / degree / row begin
  std::size_t count2 = 0;        // row end
  std::vector<std::size_t> idx;  // slice columns; extreme-means selections
  Bandwidth bandwidth;
  double sigma_sq = 1.0;
  bool degenerate = false;
  std::string name;
  const Matrix* source = nullptr;  // Input / Param
  Matrix stored;                   // Const value / computed value
  Matrix adjoint;
  Matrix scratch;   // transposes reused across steps; rbf_weighted_sum gradient factor
  Matrix scratch2;
  Matrix weights;   // rbf_weighted_sum
  std::vector<double> work;
  bool needs_grad = false;
  std::optional<MonomialBasis> basis;

  const Matrix& value() const { return source != nullptr ? *source : stored; }
};

void shape_error(Op op, const Matrix& a, const Matrix& b) {
  throw Error(ErrorKind::Shape, std::string(op_name(op)) + ": " + std::to_string(a.rows()) + "x" +
                                    std::to_string(a.cols()) + " vs " + std::to_string(b.rows()) +
                                    "x" + std::to_string(b.cols()));
}

void ensure_shape(Matrix& m, std::size_t rows, std::size_t cols) {
  if (m.rows() != rows || m.cols() != cols) m.resize(rows, cols);
}

double median_in_place(std::vector<double>& vals) {
  if (vals.empty()) return 0.0;
  const std::size_t mid = vals.size() / 2;
  std::nth_element(vals.begin(), vals.begin() + static_cast<std::ptrdiff_t>(mid), vals.end());
  const double upper = vals[mid];
  if (vals.size() % 2 == 1) return upper;
  const double lower = *std::max_element(vals.begin(), vals.begin() + static_cast<std::ptrdiff_t>(mid));
  return 0.5 * (lower + upper);
}

void transpose_into(const Matrix& src, Matrix& dst) {
  ensure_shape(dst, src.cols(), src.rows());
  constexpr std::size_t kBlock = 32;
  for (std::size_t r0 = 0; r0 < src.rows(); r0 += kBlock) {
    const std::size_t r1 = std::min(r0 + kBlock, src.rows());
    for (std::size_t c0 = 0; c0 < src.cols(); c0 += kBlock) {
      const std::size_t c1 = std::min(c0 + kBlock, src.cols());
      for (std::size_t r = r0; r < r1; ++r) {
        for (std::size_t c = c0; c < c1; ++c) dst(c, r) = src(r, c);
      }
    }
  }
}

void gemm(const Matrix& a, const Matrix& b, Matrix& c, bool accumulate) {
  kernels::active().gemm(a.rows(), b.cols(), a.cols(), a.data(), a.cols(), b.data(), b.cols(),
                         c.data(), c.cols(), accumulate);
}

}  // namespace

struct Tape::Impl {
  std::vector<Node> nodes;
  bool forward_done = false;
  bool backward_done = false;

  Var push(Node n) {
    nodes.push_back(std::move(n));
    return Var{nodes.size() - 1};
  }

  const Node& at(Var v) const {
    if (v.id >= nodes.size()) throw Error(ErrorKind::InvalidArgument, "unknown tape variable");
    return nodes[v.id];
  }

  Var unary(Op op, Var a) {
    at(a);
    Node n;
    n.op = op;
    n.a = a.id;
    n.needs_grad = nodes[a.id].needs_grad;
    return push(std::move(n));
  }

  Var binary(Op op, Var a, Var b) {
    at(a);
    at(b);
    Node n;
    n.op = op;
    n.a = a.id;
    n.b = b.id;
    n.needs_grad = nodes[a.id].needs_grad || nodes[b.id].needs_grad;
    return push(std::move(n));
  }

  void eval(Node& n);
  void grad(Node& n);
};

Tape::Tape() : impl_(std::make_unique<Impl>()) {}
Tape::~Tape() = default;
Tape::Tape(Tape&&) noexcept = default;
Tape& Tape::operator=(Tape&&) noexcept = default;

Var Tape::input(std::string name, bool requires_grad) {
  Node n;
  n.op = Op::Input;
  n.name = std::move(name);
  n.needs_grad = requires_grad;
  return impl_->push(std::move(n));
}

Var Tape::param(Matrix* storage) {
  if (storage == nullptr) throw Error(ErrorKind::InvalidArgument, "null parameter storage");
  Node n;
  n.op = Op::Param;
  n.source = storage;
  n.needs_grad = true;
  return impl_->push(std::move(n));
}

Var Tape::constant(Matrix value) {
  Node n;
  n.op = Op::Const;
  n.stored = std::move(value);
  return impl_->push(std::move(n));
}

Var Tape::matmul(Var a, Var b) { return impl_->binary(Op::MatMul, a, b); }
Var Tape::add_bias(Var x, Var bias) { return impl_->binary(Op::AddBias, x, bias); }
Var Tape::leaky_relu(Var x, double negative_slope) {
  Var v = impl_->unary(Op::LeakyRelu, x);
  impl_->nodes[v.id].scalar = negative_slope;
  return v;
}
Var Tape::add(Var a, Var b) { return impl_->binary(Op::Add, a, b); }
Var Tape::sub(Var a, Var b) { return impl_->binary(Op::Sub, a, b); }
Var Tape::mul(Var a, Var b) { return impl_->binary(Op::Mul, a, b); }
Var Tape::scale(Var a, double factor) {
  Var v = impl_->unary(Op::Scale, a);
  impl_->nodes[v.id].scalar = factor;
  return v;
}
Var Tape::square(Var a) { return impl_->unary(Op::Square, a); }
Var Tape::sum(Var a) { return impl_->unary(Op::Sum, a); }
Var Tape::mean(Var a) { return impl_->unary(Op::Mean, a); }
Var Tape::mse(Var a, Var b) { return impl_->binary(Op::Mse, a, b); }
Var Tape::concat_cols(Var a, Var b) { return impl_->binary(Op::ConcatCols, a, b); }
Var Tape::slice_cols(Var a, std::vector<std::size_t> cols) {
  Var v = impl_->unary(Op::SliceCols, a);
  impl_->nodes[v.id].idx = std::move(cols);
  return v;
}
Var Tape::slice_rows(Var a, std::size_t begin, std::size_t end) {
  if (begin > end) throw Error(ErrorKind::InvalidArgument, "slice_rows: begin > end");
  Var v = impl_->unary(Op::SliceRows, a);
  impl_->nodes[v.id].count = begin;
  impl_->nodes[v.id].count2 = end;
  return v;
}
Var Tape::pairwise_sq_dist(Var a, Var b) { return impl_->binary(Op::PairwiseSqDist, a, b); }
Var Tape::exp(Var a) { return impl_->unary(Op::Exp, a); }
Var Tape::rbf(Var sq_dist, Bandwidth bandwidth) {
  if (!bandwidth.median && !(bandwidth.sigma > 0.0)) {
    throw Error(ErrorKind::InvalidArgument, "rbf bandwidth must be positive");
  }
  Var v = impl_->unary(Op::Rbf, sq_dist);
  impl_->nodes[v.id].bandwidth = bandwidth;
  return v;
}
Var Tape::rbf_weighted_sum(Var z, Matrix weights, Bandwidth bandwidth) {
  if (!bandwidth.median && !(bandwidth.sigma > 0.0)) {
    throw Error(ErrorKind::InvalidArgument, "rbf bandwidth must be positive");
  }
  if (weights.rows() != weights.cols()) {
    throw Error(ErrorKind::Shape, "rbf_weighted_sum: weights must be square");
  }
  for (std::size_t i = 0; i < weights.rows(); ++i) {
    for (std::size_t j = i + 1; j < weights.cols(); ++j) {
      if (weights(i, j) != weights(j, i)) {
        throw Error(ErrorKind::InvalidArgument, "rbf_weighted_sum: weights must be symmetric");
      }
    }
  }
  Var v = impl_->unary(Op::RbfWeightedSum, z);
  impl_->nodes[v.id].bandwidth = bandwidth;
  impl_->nodes[v.id].weights = std::move(weights);
  return v;
}
Var Tape::extreme_means(Var a, std::size_t k) {
  if (k == 0) throw Error(ErrorKind::InvalidArgument, "extreme_means needs k >= 1");
  Var v = impl_->unary(Op::ExtremeMeans, a);
  impl_->nodes[v.id].count = k;
  return v;
}
Var Tape::monomials(Var z, std::size_t degree) {
  if (degree == 0) throw Error(ErrorKind::InvalidArgument, "monomials needs degree >= 1");
  Var v = impl_->unary(Op::Monomials, z);
  impl_->nodes[v.id].count = degree;
  return v;
}

void Tape::bind(Var input, const Matrix& value) {
  Node& n = impl_->nodes.at(input.id);
  if (n.op != Op::Input) throw Error(ErrorKind::InvalidArgument, "bind() on a non-input node");
  n.source = &value;
}

void Tape::Impl::eval(Node& n) {
  switch (n.op) {
    case Op::Input:
      if (n.source == nullptr) throw Error(ErrorKind::State, "input '" + n.name + "' is unbound");
      return;
    case Op::Param:
    case Op::Const:
      return;
    default:
      break;
  }
  const Matrix& a = nodes[n.a].value();
  Matrix& out = n.stored;
  switch (n.op) {
    case Op::MatMul: {
      const Matrix& b = nodes[n.b].value();
      if (a.cols() != b.rows()) shape_error(n.op, a, b);
      ensure_shape(out, a.rows(), b.cols());
      gemm(a, b, out, false);
      break;
    }
    case Op::AddBias: {
      const Matrix& b = nodes[n.b].value();
      if (b.rows() != 1 || b.cols() != a.cols()) shape_error(n.op, a, b);
      ensure_shape(out, a.rows(), a.cols());
      for (std::size_t r = 0; r < a.rows(); ++r) {
        for (std::size_t c = 0; c < a.cols(); ++c) out(r, c) = a(r, c) + b(0, c);
      }
      break;
    }
    case Op::LeakyRelu: {
      ensure_shape(out, a.rows(), a.cols());
      const double s = n.scalar;
      for (std::size_t i = 0; i < a.size(); ++i) {
        const double x = a.data()[i];
        out.data()[i] = x > 0.0 ? x : s * x;
      }
      break;
    }
    case Op::Add:
    case Op::Sub:
    case Op::Mul: {
      const Matrix& b = nodes[n.b].value();
      if (a.rows() != b.rows() || a.cols() != b.cols()) shape_error(n.op, a, b);
      ensure_shape(out, a.rows(), a.cols());
      for (std::size_t i = 0; i < a.size(); ++i) {
        const double x = a.data()[i];
        const double y = b.data()[i];
        out.data()[i] = n.op == Op::Add ? x + y : n.op == Op::Sub ? x - y : x * y;
      }
      break;
    }
    case Op::Scale:
      ensure_shape(out, a.rows(), a.cols());
      for (std::size_t i = 0; i < a.size(); ++i) out.data()[i] = n.scalar * a.data()[i];
      break;
    case Op::Square:
      ensure_shape(out, a.rows(), a.cols());
      for (std::size_t i = 0; i < a.size(); ++i) out.data()[i] = a.data()[i] * a.data()[i];
      break;
    case Op::Sum:
    case Op::Mean: {
      ensure_shape(out, 1, 1);
      double s = 0.0;
      for (double x : a.flat()) s += x;
      if (n.op == Op::Mean) {
        if (a.size() == 0) throw Error(ErrorKind::Shape, "mean of empty matrix");
        s /= static_cast<double>(a.size());
      }
      out(0, 0) = s;
      break;
    }
    case Op::Mse: {
      const Matrix& b = nodes[n.b].value();
      if (a.rows() != b.rows() || a.cols() != b.cols() || a.size() == 0) shape_error(n.op, a, b);
      ensure_shape(out, 1, 1);
      double s = 0.0;
      for (std::size_t i = 0; i < a.size(); ++i) {
        const double diff = a.data()[i] - b.data()[i];
        s += diff * diff;
      }
      out(0, 0) = s / static_cast<double>(a.size());
      break;
    }
    case Op::ConcatCols: {
      const Matrix& b = nodes[n.b].value();
      if (a.rows() != b.rows()) shape_error(n.op, a, b);
      ensure_shape(out, a.rows(), a.cols() + b.cols());
      for (std::size_t r = 0; r < a.rows(); ++r) {
        std::copy_n(a.data() + r * a.cols(), a.cols(), out.data() + r * out.cols());
        std::copy_n(b.data() + r * b.cols(), b.cols(), out.data() + r * out.cols() + a.cols());
      }
      break;
    }
    case Op::SliceCols:
      for (std::size_t c : n.idx) {
        if (c >= a.cols()) throw Error(ErrorKind::Shape, "slice_cols index out of range");
      }
      ensure_shape(out, a.rows(), n.idx.size());
      for (std::size_t r = 0; r < a.rows(); ++r) {
        for (std::size_t j = 0; j < n.idx.size(); ++j) out(r, j) = a(r, n.idx[j]);
      }
      break;
    case Op::SliceRows:
      if (n.count2 > a.rows()) throw Error(ErrorKind::Shape, "slice_rows range out of bounds");
      ensure_shape(out, n.count2 - n.count, a.cols());
      std::copy(a.data() + n.count * a.cols(), a.data() + n.count2 * a.cols(), out.data());
      break;
    case Op::PairwiseSqDist: {
      const Matrix& b = nodes[n.b].value();
      if (a.cols() != b.cols()) shape_error(n.op, a, b);
      ensure_shape(out, a.rows(), b.rows());
      kernels::active().sq_dist(a.rows(), b.rows(), a.cols(), a.data(), b.data(), out.data());
      break;
    }
    case Op::Exp:
      ensure_shape(out, a.rows(), a.cols());
      kernels::active().exp(a.size(), a.data(), out.data());
      break;
    case Op::Rbf: {
      n.degenerate = false;
      double sigma_sq = n.bandwidth.sigma * n.bandwidth.sigma;
      if (n.bandwidth.median) {
        const double med = median_pairwise(a, a.rows() == a.cols());
        if (med > 0.0) {
          sigma_sq = 0.5 * med;
        } else {
          sigma_sq = 1.0;
          n.degenerate = true;
        }
      }
      n.sigma_sq = sigma_sq;
      ensure_shape(out, a.rows(), a.cols());
      const double f = -0.5 / sigma_sq;
      for (std::size_t i = 0; i < a.size(); ++i) out.data()[i] = f * a.data()[i];
      kernels::active().exp(out.size(), out.data(), out.data());
      break;
    }
    case Op::RbfWeightedSum: {
      // Row tiles of the distance matrix are formed, used and dropped, so the
      // full n × n kernel never sits in memory.
      const std::size_t rows = a.rows();
      const std::size_t dim = a.cols();
      const Matrix& w = n.weights;
      if (w.rows() != rows) shape_error(n.op, a, w);
      constexpr std::size_t kTile = 64;
      const kernels::KernelTable& kt = kernels::active();
      Matrix& tile = n.scratch2;
      ensure_shape(tile, std::min(kTile, rows), rows);
      n.degenerate = false;
      double sigma_sq = n.bandwidth.sigma * n.bandwidth.sigma;
      if (n.bandwidth.median) {
        n.work.clear();
        n.work.reserve(rows * (rows - 1) / 2);
        for (std::size_t r0 = 0; r0 < rows; r0 += kTile) {
          const std::size_t m = std::min(kTile, rows - r0);
          kt.sq_dist(m, rows, dim, a.data() + r0 * dim, a.data(), tile.data());
          for (std::size_t i = 0; i < m; ++i) {
            const double* t = tile.data() + i * rows;
            n.work.insert(n.work.end(), t + r0 + i + 1, t + rows);
          }
        }
        const double med = median_in_place(n.work);
        if (med > 0.0) {
          sigma_sq = 0.5 * med;
        } else {
          sigma_sq = 1.0;
          n.degenerate = true;
        }
      }
      n.sigma_sq = sigma_sq;
      const double f = -0.5 / sigma_sq;
      Matrix& factor = n.scratch;
      ensure_shape(factor, rows, dim);
      std::vector<double> gz(kTile * dim);
      double total = 0.0;
      for (std::size_t r0 = 0; r0 < rows; r0 += kTile) {
        const std::size_t m = std::min(kTile, rows - r0);
        kt.sq_dist(m, rows, dim, a.data() + r0 * dim, a.data(), tile.data());
        for (std::size_t i = 0; i < m * rows; ++i) tile.data()[i] *= f;
        kt.exp(m * rows, tile.data(), tile.data());
        for (std::size_t i = 0; i < m; ++i) {
          double* t = tile.data() + i * rows;
          const double* wr = w.data() + (r0 + i) * rows;
          double rs = 0.0;
          for (std::size_t j = 0; j < rows; ++j) {
            t[j] *= wr[j];
            rs += t[j];
          }
          total += rs;
          for (std::size_t c = 0; c < dim; ++c) factor(r0 + i, c) = rs * a(r0 + i, c);
        }
        kt.gemm(m, dim, rows, tile.data(), rows, a.data(), dim, gz.data(), dim, false);
        for (std::size_t i = 0; i < m; ++i) {
          for (std::size_t c = 0; c < dim; ++c) factor(r0 + i, c) -= gz[i * dim + c];
        }
      }
      ensure_shape(out, 1, 1);
      out(0, 0) = total;
      break;
    }
    case Op::ExtremeMeans: {
      const std::size_t k = n.count;
      if (a.rows() < k) {
        throw Error(ErrorKind::InsufficientBatch, "extreme_means: " + std::to_string(a.rows()) +
                                                      " rows < k=" + std::to_string(k));
      }
      ensure_shape(out, 2, a.cols());
      n.idx.assign(2 * k * a.cols(), 0);
      std::vector<std::size_t> order(a.rows());
      for (std::size_t c = 0; c < a.cols(); ++c) {
        std::iota(order.begin(), order.end(), std::size_t{0});
        auto less = [&](std::size_t x, std::size_t y) {
          const double vx = a(x, c);
          const double vy = a(y, c);
          return vx < vy || (vx == vy && x < y);
        };
        std::sort(order.begin(), order.end(), less);
        double lo = 0.0;
        double hi = 0.0;
        for (std::size_t t = 0; t < k; ++t) {
          const std::size_t low_row = order[t];
          const std::size_t high_row = order[a.rows() - 1 - t];
          lo += a(low_row, c);
          hi += a(high_row, c);
          n.idx[(2 * c) * k + t] = low_row;
          n.idx[(2 * c + 1) * k + t] = high_row;
        }
        out(0, c) = lo / static_cast<double>(k);
        out(1, c) = hi / static_cast<double>(k);
      }
      break;
    }
    case Op::Monomials: {
      if (!n.basis || n.basis->d() != a.cols()) n.basis.emplace(a.cols(), n.count);
      ensure_shape(out, a.rows(), n.basis->dim());
      for (std::size_t r = 0; r < a.rows(); ++r) n.basis->evaluate(a.row(r), out.row(r));
      break;
    }
    default:
      break;
  }
  if (!out.all_finite()) {
    throw Error(ErrorKind::Numeric, std::string("non-finite value produced by ") + op_name(n.op));
  }
}

void Tape::Impl::grad(Node& n) {
  const Matrix& g = n.adjoint;
  auto target = [&](std::size_t id) -> Matrix* {
    Node& p = nodes[id];
    return p.needs_grad ? &p.adjoint : nullptr;
  };
  const Matrix& a = nodes[n.a].value();
  switch (n.op) {
    case Op::MatMul: {
      const Matrix& b = nodes[n.b].value();
      if (Matrix* da = target(n.a)) {
        transpose_into(b, n.scratch);
        gemm(g, n.scratch, *da, true);
      }
      if (Matrix* db = target(n.b)) {
        transpose_into(a, n.scratch2);
        gemm(n.scratch2, g, *db, true);
      }
      break;
    }
    case Op::AddBias: {
      if (Matrix* da = target(n.a)) kernels::active().axpy(g.size(), 1.0, g.data(), da->data());
      if (Matrix* db = target(n.b)) {
        for (std::size_t r = 0; r < g.rows(); ++r) {
          for (std::size_t c = 0; c < g.cols(); ++c) (*db)(0, c) += g(r, c);
        }
      }
      break;
    }
    case Op::LeakyRelu:
      if (Matrix* da = target(n.a)) {
        for (std::size_t i = 0; i < g.size(); ++i) {
          da->data()[i] += a.data()[i] > 0.0 ? g.data()[i] : n.scalar * g.data()[i];
        }
      }
      break;
    case Op::Add:
      if (Matrix* da = target(n.a)) kernels::active().axpy(g.size(), 1.0, g.data(), da->data());
      if (Matrix* db = target(n.b)) kernels::active().axpy(g.size(), 1.0, g.data(), db->data());
      break;
    case Op::Sub:
      if (Matrix* da = target(n.a)) kernels::active().axpy(g.size(), 1.0, g.data(), da->data());
      if (Matrix* db = target(n.b)) kernels::active().axpy(g.size(), -1.0, g.data(), db->data());
      break;
    case Op::Mul: {
      const Matrix& b = nodes[n.b].value();
      if (Matrix* da = target(n.a)) {
        for (std::size_t i = 0; i < g.size(); ++i) da->data()[i] += g.data()[i] * b.data()[i];
      }
      if (Matrix* db = target(n.b)) {
        for (std::size_t i = 0; i < g.size(); ++i) db->data()[i] += g.data()[i] * a.data()[i];
      }
      break;
    }
    case Op::Scale:
      if (Matrix* da = target(n.a)) kernels::active().axpy(g.size(), n.scalar, g.data(), da->data());
      break;
    case Op::Square:
      if (Matrix* da = target(n.a)) {
        for (std::size_t i = 0; i < g.size(); ++i) da->data()[i] += 2.0 * a.data()[i] * g.data()[i];
      }
      break;
    case Op::Sum:
    case Op::Mean:
      if (Matrix* da = target(n.a)) {
        double s = g(0, 0);
        if (n.op == Op::Mean) s /= static_cast<double>(a.size());
        for (double& x : da->flat()) x += s;
      }
      break;
    case Op::Mse: {
      const Matrix& b = nodes[n.b].value();
      const double s = 2.0 * g(0, 0) / static_cast<double>(a.size());
      Matrix* da = target(n.a);
      Matrix* db = target(n.b);
      for (std::size_t i = 0; i < a.size(); ++i) {
        const double diff = s * (a.data()[i] - b.data()[i]);
        if (da) da->data()[i] += diff;
        if (db) db->data()[i] -= diff;
      }
      break;
    }
    case Op::ConcatCols: {
      const Matrix& b = nodes[n.b].value();
      Matrix* da = target(n.a);
      Matrix* db = target(n.b);
      for (std::size_t r = 0; r < g.rows(); ++r) {
        if (da) {
          for (std::size_t c = 0; c < a.cols(); ++c) (*da)(r, c) += g(r, c);
        }
        if (db) {
          for (std::size_t c = 0; c < b.cols(); ++c) (*db)(r, c) += g(r, a.cols() + c);
        }
      }
      break;
    }
    case Op::SliceCols:
      if (Matrix* da = target(n.a)) {
        for (std::size_t r = 0; r < g.rows(); ++r) {
          for (std::size_t j = 0; j < n.idx.size(); ++j) (*da)(r, n.idx[j]) += g(r, j);
        }
      }
      break;
    case Op::SliceRows:
      if (Matrix* da = target(n.a)) {
        kernels::active().axpy(g.size(), 1.0, g.data(), da->data() + n.count * a.cols());
      }
      break;
    case Op::PairwiseSqDist: {
      const Matrix& b = nodes[n.b].value();
      // ∂/∂a_i = 2 Σ_j G_ij (a_i − b_j);  ∂/∂b_j = 2 Σ_i G_ij (b_j − a_i).
      if (n.a == n.b) {
        // Both arguments are one node: fold G and Gᵀ into a single product.
        Matrix* da = target(n.a);
        if (da == nullptr) break;
        transpose_into(g, n.scratch);
        Matrix& sym = n.scratch;
        for (std::size_t i = 0; i < sym.size(); ++i) sym.data()[i] += g.data()[i];
        Matrix sa(a.rows(), a.cols());
        gemm(sym, a, sa, false);
        for (std::size_t i = 0; i < a.rows(); ++i) {
          double rs = 0.0;
          for (std::size_t j = 0; j < sym.cols(); ++j) rs += sym(i, j);
          for (std::size_t c = 0; c < a.cols(); ++c) (*da)(i, c) += 2.0 * (rs * a(i, c) - sa(i, c));
        }
        break;
      }
      if (Matrix* da = target(n.a)) {
        Matrix gb(a.rows(), a.cols());
        gemm(g, b, gb, false);
        for (std::size_t i = 0; i < a.rows(); ++i) {
          double rs = 0.0;
          for (std::size_t j = 0; j < g.cols(); ++j) rs += g(i, j);
          for (std::size_t c = 0; c < a.cols(); ++c) (*da)(i, c) += 2.0 * (rs * a(i, c) - gb(i, c));
        }
      }
      if (Matrix* db = target(n.b)) {
        transpose_into(g, n.scratch);
        const Matrix& gt = n.scratch;
        Matrix ga(b.rows(), b.cols());
        gemm(gt, a, ga, false);
        for (std::size_t j = 0; j < b.rows(); ++j) {
          double cs = 0.0;
          for (std::size_t i = 0; i < gt.cols(); ++i) cs += gt(j, i);
          for (std::size_t c = 0; c < b.cols(); ++c) (*db)(j, c) += 2.0 * (cs * b(j, c) - ga(j, c));
        }
      }
      break;
    }
    case Op::Exp:
      if (Matrix* da = target(n.a)) {
        for (std::size_t i = 0; i < g.size(); ++i) da->data()[i] += g.data()[i] * n.stored.data()[i];
      }
      break;
    case Op::Rbf:
      if (Matrix* da = target(n.a)) {
        const double f = -0.5 / n.sigma_sq;
        for (std::size_t i = 0; i < g.size(); ++i) {
          da->data()[i] += f * g.data()[i] * n.stored.data()[i];
        }
      }
      break;
    case Op::RbfWeightedSum:
      // Symmetric G = W∘K: ∂/∂z_i = −(2/σ²) Σ_j G_ij (z_i − z_j), stored as `scratch`.
      if (Matrix* da = target(n.a)) {
        kernels::active().axpy(da->size(), -2.0 * g(0, 0) / n.sigma_sq, n.scratch.data(),
                               da->data());
      }
      break;
    case Op::ExtremeMeans:
      if (Matrix* da = target(n.a)) {
        const std::size_t k = n.count;
        const double inv_k = 1.0 / static_cast<double>(k);
        for (std::size_t c = 0; c < a.cols(); ++c) {
          for (std::size_t t = 0; t < k; ++t) {
            (*da)(n.idx[(2 * c) * k + t], c) += g(0, c) * inv_k;
            (*da)(n.idx[(2 * c + 1) * k + t], c) += g(1, c) * inv_k;
          }
        }
      }
      break;
    case Op::Monomials:
      if (Matrix* da = target(n.a)) {
        for (std::size_t r = 0; r < a.rows(); ++r) {
          n.basis->backward(a.row(r), n.stored.row(r), g.row(r), da->row(r));
        }
      }
      break;
    default:
      break;
  }
}

void Tape::forward() {
  impl_->backward_done = false;
  for (auto& n : impl_->nodes) impl_->eval(n);
  impl_->forward_done = true;
}

void Tape::backward(Var loss) {
  if (!impl_->forward_done) throw Error(ErrorKind::State, "backward() called before forward()");
  Node& root = impl_->nodes.at(loss.id);
  if (root.value().rows() != 1 || root.value().cols() != 1) {
    throw Error(ErrorKind::Shape, "backward() needs a 1x1 loss");
  }
  for (std::size_t i = 0; i <= loss.id; ++i) {
    Node& n = impl_->nodes[i];
    if (!n.needs_grad) continue;
    const Matrix& v = n.value();
    ensure_shape(n.adjoint, v.rows(), v.cols());
    n.adjoint.fill(0.0);
  }
  if (!root.needs_grad) {
    impl_->backward_done = true;
    return;
  }
  root.adjoint(0, 0) = 1.0;
  for (std::size_t i = loss.id + 1; i-- > 0;) {
    Node& n = impl_->nodes[i];
    if (!n.needs_grad) continue;
    switch (n.op) {
      case Op::Input:
      case Op::Param:
      case Op::Const:
        continue;
      default:
        impl_->grad(n);
    }
  }
  impl_->backward_done = true;
}

const Matrix& Tape::value(Var v) const {
  if (!impl_->forward_done) throw Error(ErrorKind::State, "value() read before forward()");
  return impl_->at(v).value();
}

double Tape::scalar(Var v) const {
  const Matrix& m = value(v);
  if (m.rows() != 1 || m.cols() != 1) throw Error(ErrorKind::Shape, "scalar() on non-1x1 node");
  return m(0, 0);
}

const Matrix& Tape::grad(Var v) const {
  if (!impl_->backward_done) throw Error(ErrorKind::State, "grad() read before backward()");
  const Node& n = impl_->at(v);
  if (!n.needs_grad) throw Error(ErrorKind::State, "node does not carry a gradient");
  return n.adjoint;
}

double Tape::rbf_sigma_sq(Var v) const { return impl_->at(v).sigma_sq; }
bool Tape::rbf_degenerate(Var v) const { return impl_->at(v).degenerate; }
std::size_t Tape::node_count() const { return impl_->nodes.size(); }

double median_pairwise(const Matrix& sq_dist, bool same_sample) {
  std::vector<double> vals;
  if (same_sample) {
    vals.reserve(sq_dist.rows() * (sq_dist.rows() - 1) / 2);
    for (std::size_t i = 0; i < sq_dist.rows(); ++i) {
      for (std::size_t j = i + 1; j < sq_dist.cols(); ++j) vals.push_back(sq_dist(i, j));
    }
  } else {
    vals.assign(sq_dist.flat().begin(), sq_dist.flat().end());
  }
  return median_in_place(vals);
}

}  // namespace invae::ad

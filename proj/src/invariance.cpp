#include "invae/invariance.hpp"

#include <cmath>
#include <functional>
#include <string>

#include "invae/error.hpp"

namespace invae {
namespace {

void check_domains(const DomainRanges& ranges) {
  if (ranges.size() < 2) {
    throw Error(ErrorKind::Arity, "invariance penalties need at least two domains");
  }
  for (const auto& [b, e] : ranges) {
    if (e <= b) throw Error(ErrorKind::InsufficientBatch, "empty domain batch");
  }
}

Matrix stack(std::span<const Matrix> batches, DomainRanges& ranges) {
  std::vector<std::size_t> sizes;
  for (const auto& b : batches) sizes.push_back(b.rows());
  ranges = contiguous_ranges(sizes);
  return vstack(batches);
}

double evaluate(std::span<const Matrix> batches,
                const std::function<ad::Var(ad::Tape&, ad::Var, const DomainRanges&)>& build) {
  DomainRanges ranges;
  const Matrix z = stack(batches, ranges);
  ad::Tape tape;
  ad::Var x = tape.input("z");
  ad::Var loss = build(tape, x, ranges);
  tape.bind(x, z);
  tape.forward();
  return tape.scalar(loss);
}

}  // namespace

const char* to_string(PenaltyKind kind) {
  switch (kind) {
    case PenaltyKind::MinMax: return "minmax";
    case PenaltyKind::Mmd: return "mmd";
    case PenaltyKind::MinMaxPlusMmd: return "minmax+mmd";
  }
  return "?";
}

PenaltyKind penalty_kind_from_string(const std::string& name) {
  for (PenaltyKind k : {PenaltyKind::MinMax, PenaltyKind::Mmd, PenaltyKind::MinMaxPlusMmd}) {
    if (name == to_string(k)) return k;
  }
  throw Error(ErrorKind::Config, "unknown penalty kind '" + name + "'");
}

void validate(const PenaltyConfig& c) {
  if (c.top_k == 0) throw Error(ErrorKind::InvalidArgument, "top_k must be >= 1");
  if (!c.bandwidth.median && !(c.bandwidth.sigma > 0.0)) {
    throw Error(ErrorKind::InvalidArgument, "fixed bandwidth must be positive");
  }
  if (c.S_hat.empty()) throw Error(ErrorKind::InvalidArgument, "S_hat must be nonempty");
  if (!(c.lambda >= 0.0)) throw Error(ErrorKind::InvalidArgument, "lambda must be >= 0");
}

DomainRanges contiguous_ranges(std::span<const std::size_t> sizes) {
  DomainRanges ranges;
  std::size_t at = 0;
  for (std::size_t s : sizes) {
    ranges.emplace_back(at, at + s);
    at += s;
  }
  return ranges;
}

ad::Var minmax_penalty(ad::Tape& tape, ad::Var z, const DomainRanges& ranges,
                       const IndexSet& S_hat, std::size_t top_k) {
  check_domains(ranges);
  for (const auto& [b, e] : ranges) {
    if (e - b < top_k) {
      throw Error(ErrorKind::InsufficientBatch, "domain batch of " + std::to_string(e - b) +
                                                    " rows is smaller than top_k=" +
                                                    std::to_string(top_k));
    }
  }
  ad::Var zs = tape.slice_cols(z, S_hat);
  std::vector<ad::Var> extremes;
  for (const auto& [b, e] : ranges) {
    extremes.push_back(tape.extreme_means(tape.slice_rows(zs, b, e), top_k));
  }
  ad::Var total{};
  bool first = true;
  for (std::size_t p = 0; p < extremes.size(); ++p) {
    for (std::size_t q = p + 1; q < extremes.size(); ++q) {
      ad::Var term = tape.sum(tape.square(tape.sub(extremes[p], extremes[q])));
      total = first ? term : tape.add(total, term);
      first = false;
    }
  }
  return total;
}

ad::Var mmd_penalty(ad::Tape& tape, ad::Var z, const DomainRanges& ranges, const IndexSet& S_hat,
                    ad::Bandwidth bandwidth, ad::Var* kernel_node) {
  check_domains(ranges);
  // Σ_{p<q} (m_pp + m_qq − 2 m_pq) with m_pq the mean kernel value of block
  // (p, q) equals Σ_ij W_ij K_ij, W = (k−1)/n_p² on diagonal blocks and
  // −1/(n_p n_q) off them.
  const std::size_t total_rows = ranges.back().second;
  const double k = static_cast<double>(ranges.size());
  Matrix w(total_rows, total_rows);
  for (std::size_t p = 0; p < ranges.size(); ++p) {
    for (std::size_t q = 0; q < ranges.size(); ++q) {
      const double np = static_cast<double>(ranges[p].second - ranges[p].first);
      const double nq = static_cast<double>(ranges[q].second - ranges[q].first);
      const double value = p == q ? (k - 1.0) / (np * np) : -1.0 / (np * nq);
      for (std::size_t i = ranges[p].first; i < ranges[p].second; ++i) {
        for (std::size_t j = ranges[q].first; j < ranges[q].second; ++j) w(i, j) = value;
      }
    }
  }
  ad::Var zs = tape.slice_cols(z, S_hat);
  ad::Var kernel = tape.rbf_weighted_sum(zs, std::move(w), bandwidth);
  if (kernel_node != nullptr) *kernel_node = kernel;
  return kernel;
}

ad::Var total_penalty(ad::Tape& tape, ad::Var z, const DomainRanges& ranges,
                      const PenaltyConfig& config, ad::Var* kernel_node) {
  validate(config);
  switch (config.kind) {
    case PenaltyKind::MinMax:
      return minmax_penalty(tape, z, ranges, config.S_hat, config.top_k);
    case PenaltyKind::Mmd:
      return mmd_penalty(tape, z, ranges, config.S_hat, config.bandwidth, kernel_node);
    case PenaltyKind::MinMaxPlusMmd:
      return tape.add(minmax_penalty(tape, z, ranges, config.S_hat, config.top_k),
                      mmd_penalty(tape, z, ranges, config.S_hat, config.bandwidth, kernel_node));
  }
  return z;
}

double minmax_penalty(std::span<const Matrix> batches, const IndexSet& S_hat, std::size_t top_k) {
  return evaluate(batches, [&](ad::Tape& t, ad::Var z, const DomainRanges& r) {
    return minmax_penalty(t, z, r, S_hat, top_k);
  });
}

double mmd_rbf(const Matrix& X, const Matrix& Y, double sigma) {
  if (X.cols() != Y.cols()) throw Error(ErrorKind::Shape, "mmd_rbf: column counts differ");
  if (X.rows() == 0 || Y.rows() == 0) throw Error(ErrorKind::InsufficientBatch, "mmd_rbf: empty");
  if (!(sigma > 0.0)) throw Error(ErrorKind::InvalidArgument, "mmd_rbf: sigma must be positive");
  IndexSet all(X.cols());
  for (std::size_t i = 0; i < all.size(); ++i) all[i] = i;
  const Matrix both[] = {X, Y};
  return evaluate(both, [&](ad::Tape& t, ad::Var z, const DomainRanges& r) {
    return mmd_penalty(t, z, r, all, ad::Bandwidth{sigma, false});
  });
}

BandwidthChoice median_bandwidth_or_default(const Matrix& X, const Matrix& Y) {
  if (X.cols() != Y.cols()) throw Error(ErrorKind::Shape, "median_bandwidth: column counts differ");
  if (X.rows() + Y.rows() < 2) {
    throw Error(ErrorKind::InsufficientBatch, "median_bandwidth needs at least two points");
  }
  const Matrix both[] = {X, Y};
  const Matrix pooled = vstack(both);
  Matrix d2(pooled.rows(), pooled.rows());
  for (std::size_t i = 0; i < pooled.rows(); ++i) {
    for (std::size_t j = 0; j < pooled.rows(); ++j) {
      double s = 0.0;
      for (std::size_t c = 0; c < pooled.cols(); ++c) {
        const double diff = pooled(i, c) - pooled(j, c);
        s += diff * diff;
      }
      d2(i, j) = s;
    }
  }
  const double med = ad::median_pairwise(d2, true);
  if (!(med > 0.0)) return {1.0, true};
  return {std::sqrt(0.5 * med), false};
}

double median_bandwidth(const Matrix& X, const Matrix& Y) {
  const BandwidthChoice c = median_bandwidth_or_default(X, Y);
  if (c.degenerate) {
    throw Error(ErrorKind::DegenerateBandwidth, "all pooled points coincide");
  }
  return c.sigma;
}

double total_penalty(std::span<const Matrix> batches, const PenaltyConfig& config) {
  return evaluate(batches, [&](ad::Tape& t, ad::Var z, const DomainRanges& r) {
    return total_penalty(t, z, r, config);
  });
}

}  // namespace invae

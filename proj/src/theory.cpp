#include "invae/theory.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <string>

#include "invae/error.hpp"
#include "invae/linalg.hpp"
#include "invae/rng.hpp"

namespace invae::theory {
namespace {

void require_positive(double v, const char* name) {
  if (!(v > 0.0) || !std::isfinite(v)) {
    throw Error(ErrorKind::Domain, std::string(name) + " must be a positive finite number");
  }
}

bool contains(const IndexSet& set, std::size_t i) {
  return std::find(set.begin(), set.end(), i) != set.end();
}

// Every vertex of p is dominated by some vertex of q, strictly on U.
bool dominated(const Matrix& p, const Matrix& q, const IndexSet& U) {
  for (std::size_t a = 0; a < p.rows(); ++a) {
    bool found = false;
    for (std::size_t b = 0; b < q.rows() && !found; ++b) {
      bool ok = true;
      for (std::size_t c = 0; c < p.cols() && ok; ++c) {
        ok = contains(U, c) ? q(b, c) > p(a, c) : q(b, c) >= p(a, c);
      }
      found = ok;
    }
    if (!found) return false;
  }
  return true;
}

std::optional<std::pair<std::size_t, std::size_t>> certificate(const std::vector<Matrix>& verts,
                                                               const IndexSet& U) {
  for (std::size_t p = 0; p < verts.size(); ++p) {
    for (std::size_t q = 0; q < verts.size(); ++q) {
      if (p != q && dominated(verts[p], verts[q], U)) return std::make_pair(p, q);
    }
  }
  return std::nullopt;
}

void for_each_composition(std::size_t parts, std::size_t total,
                          const std::function<void(const std::vector<std::size_t>&)>& fn) {
  std::vector<std::size_t> c(parts, 0);
  std::function<void(std::size_t, std::size_t)> rec = [&](std::size_t i, std::size_t left) {
    if (i + 1 == parts) {
      c[i] = left;
      fn(c);
      return;
    }
    for (std::size_t v = 0; v <= left; ++v) {
      c[i] = v;
      rec(i + 1, left - v);
    }
  };
  rec(0, total);
}

}  // namespace

double multinode_t_bound(std::size_t d, double delta) {
  if (d == 0) throw Error(ErrorKind::Domain, "d must be >= 1");
  if (!(delta > 0.0 && delta < 1.0)) throw Error(ErrorKind::Domain, "delta must lie in (0, 1)");
  const double dd = static_cast<double>(d);
  return std::log(dd / delta) / std::log(1.0 / (1.0 - 1.0 / (2.0 * dd)));
}

double good_intervention_coverage_mc(std::size_t u_size, std::size_t t, std::size_t trials,
                                     std::uint64_t seed) {
  if (u_size < 2) throw Error(ErrorKind::InsufficientNodes, "U must have at least two nodes");
  if (trials == 0) throw Error(ErrorKind::InvalidArgument, "trials must be >= 1");
  if (t == 0) return 0.0;
  Rng rng(seed);
  const std::size_t w = 0;
  std::size_t covered = 0;
  for (std::size_t trial = 0; trial < trials; ++trial) {
    bool all = true;
    for (std::size_t s = 0; s < u_size; ++s) {
      if (s == w) continue;
      bool good = false;
      for (std::size_t it = 0; it < t; ++it) {
        std::size_t partner = rng.index(u_size - 1);
        if (partner >= s) ++partner;  // uniform over U \ {s}
        const bool same_direction = rng.bernoulli(0.5);
        good = good || (partner == w && same_direction);
      }
      all = all && good;
    }
    if (all) ++covered;
  }
  return static_cast<double>(covered) / static_cast<double>(trials);
}

double good_intervention_union_bound(std::size_t u_size, std::size_t t) {
  if (u_size < 2) throw Error(ErrorKind::InsufficientNodes, "U must have at least two nodes");
  const double m = static_cast<double>(u_size - 1);
  const double p = 1.0 / (2.0 * m);
  return 1.0 - m * std::pow(1.0 - p, static_cast<double>(t));
}

double covering_number(double s, double theta_max, double rho) {
  require_positive(s, "s");
  require_positive(theta_max, "theta_max");
  require_positive(rho, "rho");
  return std::pow(2.0 * theta_max * std::sqrt(s) / rho, s);
}

double gamma_domain_bound(const GammaParams& p) {
  require_positive(p.s, "s");
  require_positive(p.theta_max, "theta_max");
  require_positive(p.L, "L");
  require_positive(p.eta, "eta");
  require_positive(p.epsilon, "epsilon");
  require_positive(p.iota, "iota");
  require_positive(p.c1, "c1");
  require_positive(p.c2, "c2");
  require_positive(p.l, "l");
  require_positive(p.r, "r");
  require_positive(p.dimension, "dimension");
  if (!(p.delta > 0.0 && p.delta < 1.0)) throw Error(ErrorKind::Domain, "delta must lie in (0, 1)");
  const double rho = p.eta / (4.0 * p.L);
  const double nc = covering_number(p.s, p.theta_max, rho);
  const double a = p.c1 * std::pow(p.iota, p.l);
  const double b = p.c2 * std::pow(p.epsilon, p.dimension * p.r);
  if (!(a < 1.0)) throw Error(ErrorKind::Domain, "c1 * iota^l must be < 1");
  if (!(b < 1.0)) throw Error(ErrorKind::Domain, "c2 * epsilon^(d*r) must be < 1");
  return nc * std::log(2.0 * nc / p.delta) *
         (1.0 / std::log(1.0 / (1.0 - a)) + 1.0 / std::log(1.0 / (1.0 - b)));
}

double orthant_domain_count(std::size_t d) { return std::ldexp(1.0, static_cast<int>(d) + 1); }

double gamma_example_min(double theta, double a, double b) {
  if (!(0.0 <= a && a <= b && b <= 1.0)) {
    throw Error(ErrorKind::Domain, "interval must satisfy 0 <= a <= b <= 1");
  }
  const double gap = theta < a ? a - theta : (theta > b ? theta - b : 0.0);
  return gap * gap;
}

IntervalProbabilities interval_probabilities_mc(double alpha, double beta, double kappa,
                                                std::size_t draws, std::uint64_t seed) {
  if (draws == 0) throw Error(ErrorKind::InvalidArgument, "draws must be >= 1");
  Rng rng(seed);
  std::size_t within = 0;
  std::size_t covers = 0;
  for (std::size_t i = 0; i < draws; ++i) {
    const auto [lo, hi] = sample_interval_minmax(rng);
    if (lo >= alpha && hi <= beta) ++within;
    if (lo <= kappa && hi >= 1.0 - kappa) ++covers;
  }
  const double n = static_cast<double>(draws);
  return {static_cast<double>(within) / n, static_cast<double>(covers) / n};
}

IntervalProbabilities interval_probabilities_exact(double alpha, double beta, double kappa) {
  if (!(0.0 <= alpha && alpha <= beta && beta <= 1.0)) {
    throw Error(ErrorKind::Domain, "need 0 <= alpha <= beta <= 1");
  }
  if (!(0.0 <= kappa && kappa <= 0.5)) throw Error(ErrorKind::Domain, "need 0 <= kappa <= 1/2");
  return {(beta - alpha) * (beta - alpha), 2.0 * kappa * kappa};
}

Matrix support_vertices(const Support& support) {
  if (const auto* poly = std::get_if<PolytopeSupport>(&support)) return poly->vertices;
  const auto& box = std::get<SupportBox>(support);
  const std::size_t d = box.lo.size();
  if (box.hi.size() != d) throw Error(ErrorKind::Shape, "box lo/hi lengths differ");
  if (d >= 20) throw Error(ErrorKind::InvalidDimension, "box too high-dimensional to enumerate");
  const std::size_t corners = std::size_t{1} << d;
  Matrix v(corners, d);
  for (std::size_t m = 0; m < corners; ++m) {
    for (std::size_t i = 0; i < d; ++i) v(m, i) = (m >> i) & 1U ? box.hi[i] : box.lo[i];
  }
  return v;
}

std::optional<std::pair<std::size_t, std::size_t>> support_variability_certificate(
    const std::vector<Support>& supports, const IndexSet& U) {
  std::vector<Matrix> verts;
  for (const auto& s : supports) verts.push_back(support_vertices(s));
  return certificate(verts, U);
}

OrthantReport positive_orthant_oracle(const std::vector<Support>& supports, const IndexSet& S,
                                      const IndexSet& U, std::size_t grid_res, double tol,
                                      std::vector<int> signs) {
  if (supports.size() < 2) throw Error(ErrorKind::Arity, "need at least two domains");
  if (grid_res == 0) throw Error(ErrorKind::InvalidArgument, "grid_res must be >= 1");
  std::vector<Matrix> verts;
  for (const auto& s : supports) verts.push_back(support_vertices(s));
  const std::size_t d = verts.front().cols();
  for (const Matrix& v : verts) {
    if (v.cols() != d || v.rows() == 0) throw Error(ErrorKind::Shape, "inconsistent supports");
  }
  if (signs.empty()) signs.assign(d, 1);
  if (signs.size() != d) throw Error(ErrorKind::Shape, "sign vector length differs from d");
  for (int s : signs) {
    if (s != 1 && s != -1) throw Error(ErrorKind::InvalidArgument, "signs must be +1 or -1");
  }
  for (Matrix& v : verts) {
    for (std::size_t r = 0; r < v.rows(); ++r) {
      for (std::size_t c = 0; c < d; ++c) v(r, c) *= signs[c];
    }
  }

  // Shared extremes on S.
  for (std::size_t i : S) {
    auto extremes = [&](const Matrix& v) {
      double lo = v(0, i);
      double hi = v(0, i);
      for (std::size_t r = 1; r < v.rows(); ++r) {
        lo = std::min(lo, v(r, i));
        hi = std::max(hi, v(r, i));
      }
      return std::make_pair(lo, hi);
    };
    const auto ref = extremes(verts.front());
    for (const Matrix& v : verts) {
      const auto e = extremes(v);
      if (std::abs(e.first - ref.first) > tol || std::abs(e.second - ref.second) > tol) {
        throw Error(ErrorKind::Precondition,
                    "S component " + std::to_string(i) + " does not share extremes across domains");
      }
    }
  }
  const auto cert = certificate(verts, U);
  if (!cert) {
    throw Error(ErrorKind::Precondition, "no domain pair certifies support variability");
  }

  OrthantReport report;
  report.certificate = *cert;
  std::vector<double> a(d);
  std::vector<double> ref_max;
  std::vector<double> ref_min;
  for_each_composition(d, grid_res, [&](const std::vector<std::size_t>& c) {
    ++report.grid_points;
    for (std::size_t i = 0; i < d; ++i) a[i] = static_cast<double>(c[i]) / grid_res;
    bool invariant = true;
    double max0 = 0.0;
    double min0 = 0.0;
    for (std::size_t p = 0; p < verts.size() && invariant; ++p) {
      const Matrix& v = verts[p];
      double mx = -INFINITY;
      double mn = INFINITY;
      for (std::size_t r = 0; r < v.rows(); ++r) {
        double dot = 0.0;
        for (std::size_t i = 0; i < d; ++i) dot += a[i] * v(r, i);
        mx = std::max(mx, dot);
        mn = std::min(mn, dot);
      }
      if (p == 0) {
        max0 = mx;
        min0 = mn;
      } else {
        invariant = std::abs(mx - max0) <= tol && std::abs(mn - min0) <= tol;
      }
    }
    if (!invariant) return;
    ++report.invariant_points;
    double u_mass = 0.0;
    for (std::size_t r : U) u_mass += std::abs(a[r]);
    if (u_mass > tol) report.counterexamples.push_back(a);
  });
  report.pass = report.counterexamples.empty();
  return report;
}

RankCheckReport polytope_diff_rank_check(const std::vector<PolytopeSupport>& polytopes,
                                         const IndexSet& U, std::size_t budget,
                                         std::uint64_t seed) {
  if (budget == 0) throw Error(ErrorKind::Config, "enumeration budget must be >= 1");
  if (polytopes.size() < 2) throw Error(ErrorKind::Arity, "need at least two domains");
  const std::size_t d = polytopes.front().vertices.cols();
  for (const auto& p : polytopes) {
    if (p.vertices.cols() != d || p.vertices.rows() == 0) {
      throw Error(ErrorKind::Shape, "polytopes differ in dimension or are empty");
    }
  }
  const std::size_t k = polytopes.size();
  RankCheckReport report;

  double total = 1.0;
  for (const auto& p : polytopes) total *= static_cast<double>(p.vertices.rows());
  report.subsampled = total > static_cast<double>(budget);
  const std::size_t count =
      report.subsampled ? budget : static_cast<std::size_t>(std::llround(total));

  Rng rng(seed);
  std::vector<std::size_t> choice(k, 0);  // choice[0]: reference vertex of domain 0
  Matrix m(k - 1, d);
  report.rank_ok = true;
  for (std::size_t it = 0; it < count; ++it) {
    if (report.subsampled) {
      for (std::size_t j = 0; j < k; ++j) choice[j] = rng.index(polytopes[j].vertices.rows());
    }
    const Matrix& ref = polytopes[0].vertices;
    for (std::size_t r = 0; r + 1 < k; ++r) {
      const Matrix& v = polytopes[r + 1].vertices;
      for (std::size_t c = 0; c < d; ++c) m(r, c) = v(choice[r + 1], c) - ref(choice[0], c);
    }
    IndexSet nonzero;
    for (std::size_t c = 0; c < d; ++c) {
      bool any = false;
      for (std::size_t r = 0; r + 1 < k && !any; ++r) any = std::abs(m(r, c)) > 1e-12;
      if (any) nonzero.push_back(c);
    }
    ++report.matrices_checked;
    if (!nonzero.empty() &&
        linalg::numerical_rank(m.select_columns(nonzero), 1e-9) != nonzero.size()) {
      report.rank_ok = false;
      report.offending = m;
      break;
    }
    if (!report.subsampled) {
      // Mixed-radix increment over all vertex choices.
      for (std::size_t j = 0; j < k; ++j) {
        if (++choice[j] < polytopes[j].vertices.rows()) break;
        choice[j] = 0;
      }
    }
  }

  report.vertex_condition_ok = true;
  for (std::size_t j : U) {
    if (j >= d) throw Error(ErrorKind::InvalidArgument, "U index out of range");
    bool some_domain = false;
    const Matrix& ref = polytopes[0].vertices;
    for (std::size_t p = 1; p < k && !some_domain; ++p) {
      const Matrix& v = polytopes[p].vertices;
      bool disjoint = true;
      for (std::size_t a = 0; a < v.rows() && disjoint; ++a) {
        for (std::size_t b = 0; b < ref.rows() && disjoint; ++b) disjoint = v(a, j) != ref(b, j);
      }
      some_domain = disjoint;
    }
    report.vertex_condition_ok = report.vertex_condition_ok && some_domain;
  }
  report.ok = report.rank_ok && report.vertex_condition_ok;
  return report;
}

}  // namespace invae::theory

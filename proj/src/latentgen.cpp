#include "invae/latentgen.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <numeric>
#include <string>

#include "invae/error.hpp"

namespace invae {
namespace {

void require(bool cond, ErrorKind kind, const std::string& msg) {
  if (!cond) throw Error(kind, msg);
}

bool contains(const IndexSet& set, std::size_t v) {
  return std::find(set.begin(), set.end(), v) != set.end();
}

}  // namespace

IndexSet complement(const IndexSet& set, std::size_t d) {
  IndexSet out;
  for (std::size_t i = 0; i < d; ++i) {
    if (!contains(set, i)) out.push_back(i);
  }
  return out;
}

std::vector<std::size_t> ScmSpec::parents(std::size_t node) const {
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < d; ++i) {
    if (adjacency[i][node]) out.push_back(i);
  }
  return out;
}

std::vector<std::size_t> ScmSpec::children(std::size_t node) const {
  std::vector<std::size_t> out;
  for (std::size_t j = 0; j < d; ++j) {
    if (adjacency[node][j]) out.push_back(j);
  }
  return out;
}

IndexSet ScmSpec::terminal_nodes() const {
  IndexSet out;
  for (std::size_t i = 0; i < d; ++i) {
    if (children(i).empty()) out.push_back(i);
  }
  return out;
}

void validate(const ScmSpec& spec) {
  const std::size_t d = spec.d;
  require(spec.adjacency.size() == d && spec.weights.size() == d && spec.topo_order.size() == d &&
              spec.base_noise_var.size() == d,
          ErrorKind::InvalidArgument, "ScmSpec field sizes disagree with d");
  std::vector<std::size_t> position(d, d);
  for (std::size_t p = 0; p < d; ++p) {
    require(spec.topo_order[p] < d && position[spec.topo_order[p]] == d,
            ErrorKind::InvalidArgument, "topo_order is not a permutation");
    position[spec.topo_order[p]] = p;
  }
  for (std::size_t i = 0; i < d; ++i) {
    require(spec.adjacency[i].size() == d, ErrorKind::InvalidArgument, "adjacency not square");
    for (std::size_t j = 0; j < d; ++j) {
      if (spec.adjacency[i][j]) {
        require(position[i] < position[j], ErrorKind::InvalidArgument,
                "edge " + std::to_string(i) + "->" + std::to_string(j) + " violates topo_order");
        require(!(contains(spec.U, i) && !contains(spec.U, j)), ErrorKind::InvalidArgument,
                "child of U node " + std::to_string(i) + " is not in U");
      }
    }
    require(spec.base_noise_var[i] > 0.0, ErrorKind::InvalidArgument,
            "base_noise_var must be positive");
  }
  require(std::is_sorted(spec.S.begin(), spec.S.end()) && std::is_sorted(spec.U.begin(), spec.U.end()),
          ErrorKind::InvalidArgument, "S and U must be sorted");
  require(spec.U == complement(spec.S, d), ErrorKind::InvalidArgument, "U must equal [d] \\ S");
}

ScmSpec build_random_dag(std::size_t d, std::size_t s_size, double edge_prob, std::uint64_t seed,
                         const DagOptions& options) {
  require(d > 0, ErrorKind::InvalidDimension, "d must be positive");
  require(s_size <= d, ErrorKind::InvalidPartition, "S_size exceeds d");
  require(edge_prob >= 0.0 && edge_prob <= 1.0, ErrorKind::InvalidArgument,
          "edge_prob must lie in [0, 1]");

  for (std::size_t attempt = 0; attempt < options.max_attempts; ++attempt) {
    Rng rng(derive_seed(seed, attempt));
    ScmSpec spec;
    spec.d = d;
    spec.mechanism = options.mechanism;
    spec.adjacency.assign(d, std::vector<bool>(d, false));
    spec.weights.assign(d, std::vector<double>(d, 0.0));
    spec.base_noise_var.assign(d, options.noise_var);

    std::vector<std::size_t> nodes(d);
    std::iota(nodes.begin(), nodes.end(), std::size_t{0});
    rng.shuffle(nodes.begin(), nodes.end());
    spec.S.assign(nodes.begin(), nodes.begin() + static_cast<std::ptrdiff_t>(s_size));
    spec.U.assign(nodes.begin() + static_cast<std::ptrdiff_t>(s_size), nodes.end());
    std::sort(spec.S.begin(), spec.S.end());
    std::sort(spec.U.begin(), spec.U.end());

    // Topological order: a random order of S followed by a random order of U.
    std::vector<std::size_t> s_order = spec.S;
    std::vector<std::size_t> u_order = spec.U;
    rng.shuffle(s_order.begin(), s_order.end());
    rng.shuffle(u_order.begin(), u_order.end());
    spec.topo_order = s_order;
    spec.topo_order.insert(spec.topo_order.end(), u_order.begin(), u_order.end());

    for (std::size_t a = 0; a < d; ++a) {
      for (std::size_t b = a + 1; b < d; ++b) {
        if (rng.bernoulli(edge_prob)) {
          const std::size_t from = spec.topo_order[a];
          const std::size_t to = spec.topo_order[b];
          spec.adjacency[from][to] = true;
          spec.weights[to][from] = rng.uniform(options.weight_lo, options.weight_hi);
        }
      }
    }

    if (options.require_two_terminal_in_u) {
      const IndexSet term = spec.terminal_nodes();
      const auto in_u = std::count_if(term.begin(), term.end(),
                                      [&](std::size_t t) { return contains(spec.U, t); });
      if (in_u < 2) continue;
    }
    return spec;
  }
  throw Error(ErrorKind::GenerationFailure,
              "no DAG with two terminal U nodes after " + std::to_string(options.max_attempts) +
                  " attempts");
}

LatentBatch sample_scm(const ScmSpec& spec, const NoiseOverrides& overrides, std::size_t n,
                       std::uint64_t seed, std::size_t domain_id) {
  return sample_scm_coupled(spec, overrides, n, seed, seed, domain_id);
}

LatentBatch sample_scm_coupled(const ScmSpec& spec, const NoiseOverrides& overrides, std::size_t n,
                               std::uint64_t seed, std::uint64_t stable_seed,
                               std::size_t domain_id) {
  require(n >= 1, ErrorKind::InvalidArgument, "n must be at least 1");
  std::vector<double> stddev(spec.d);
  for (std::size_t i = 0; i < spec.d; ++i) stddev[i] = std::sqrt(spec.base_noise_var[i]);
  for (const auto& [node, var] : overrides) {
    require(node < spec.d, ErrorKind::InvalidArgument, "override node out of range");
    require(!contains(spec.S, node), ErrorKind::StableNodeIntervention,
            "node " + std::to_string(node) + " is in S");
    require(var > 0.0, ErrorKind::InvalidArgument, "override variance must be positive");
    stddev[node] = std::sqrt(var);
  }

  std::vector<std::vector<std::size_t>> parents(spec.d);
  for (std::size_t j = 0; j < spec.d; ++j) parents[j] = spec.parents(j);

  // Noise is drawn per node from its own stream, so the S block depends only
  // on stable_seed.
  Matrix noise(n, spec.d);
  for (std::size_t node = 0; node < spec.d; ++node) {
    Rng rng(derive_seed(contains(spec.S, node) ? stable_seed : seed, node));
    for (std::size_t r = 0; r < n; ++r) noise(r, node) = rng.normal(0.0, stddev[node]);
  }

  LatentBatch out{domain_id, Matrix(n, spec.d)};
  for (std::size_t r = 0; r < n; ++r) {
    auto z = out.Z.row(r);
    for (std::size_t node : spec.topo_order) {
      double drive = 0.0;
      for (std::size_t p : parents[node]) drive += spec.weights[node][p] * z[p];
      if (spec.mechanism == Mechanism::Tanh && !parents[node].empty()) drive = std::tanh(drive);
      z[node] = drive + noise(r, node);
    }
  }
  return out;
}

InterventionSchedule make_single_node_schedule(const ScmSpec& spec, double var_low,
                                               double var_high, std::uint64_t seed) {
  require(var_low > 0.0 && var_low < var_high, ErrorKind::InvalidArgument,
          "need 0 < var_low < var_high");
  require(!spec.U.empty(), ErrorKind::NothingToIntervene, "U is empty");
  Rng rng(seed);
  InterventionSchedule sched;
  sched.kind = ScheduleKind::SingleNode;
  sched.domains.emplace_back();
  for (std::size_t node : spec.U) {
    sched.domains.push_back({{node, rng.uniform(var_low, var_high)}});
  }
  return sched;
}

InterventionSchedule make_multinode_schedule(const ScmSpec& spec, std::size_t t, double var_low,
                                             double var_high, std::uint64_t seed) {
  require(var_low > 0.0 && var_low < var_high, ErrorKind::InvalidArgument,
          "need 0 < var_low < var_high");
  require(spec.U.size() >= 2, ErrorKind::InsufficientNodes, "multi-node schedule needs |U| >= 2");
  require(t >= 1, ErrorKind::InvalidArgument, "t must be at least 1");
  Rng rng(seed);
  InterventionSchedule sched;
  sched.kind = ScheduleKind::MultiNode;
  sched.t = t;
  sched.domains.emplace_back();
  const std::size_t u = spec.U.size();
  for (std::size_t a = 0; a < u; ++a) {
    for (std::size_t rep = 0; rep < t; ++rep) {
      std::size_t b = rng.index(u - 1);
      if (b >= a) ++b;
      const double va = rng.uniform(var_low, var_high);
      const double vb = rng.uniform(var_low, var_high);
      sched.domains.push_back({{spec.U[a], va}, {spec.U[b], vb}});
    }
  }
  return sched;
}

bool is_good_intervention(const NoiseOverrides& domain_overrides,
                          const std::vector<double>& base_noise_var, const IndexSet& terminal_nodes) {
  require(domain_overrides.size() == 2, ErrorKind::Arity, "good-intervention check needs 2 nodes");
  auto it = domain_overrides.begin();
  const auto [n1, v1] = *it++;
  const auto [n2, v2] = *it;
  require(n1 < base_noise_var.size() && n2 < base_noise_var.size(), ErrorKind::InvalidArgument,
          "override node out of range");
  const bool terminal = contains(terminal_nodes, n1) || contains(terminal_nodes, n2);
  const bool both_up = v1 > base_noise_var[n1] && v2 > base_noise_var[n2];
  const bool both_down = v1 < base_noise_var[n1] && v2 < base_noise_var[n2];
  return terminal && (both_up || both_down);
}

std::vector<SupportBox> sample_support_boxes(std::size_t d, const IndexSet& S, std::size_t k,
                                             double range_lo, double range_hi, std::uint64_t seed) {
  require(k >= 1, ErrorKind::InvalidArgument, "k must be at least 1");
  require(range_lo < range_hi, ErrorKind::InvalidArgument, "range_lo must be below range_hi");
  Rng rng(seed);
  std::vector<SupportBox> boxes(k);
  for (auto& box : boxes) {
    box.lo.assign(d, 0.0);
    box.hi.assign(d, 1.0);
    for (std::size_t i = 0; i < d; ++i) {
      if (contains(S, i)) continue;
      const double a = rng.uniform(range_lo, range_hi);
      const double b = rng.uniform(range_lo, range_hi);
      box.lo[i] = std::min(a, b);
      box.hi[i] = std::max(a, b);
    }
  }
  return boxes;
}

LatentBatch sample_box(const SupportBox& box, std::size_t n, std::uint64_t seed,
                       std::size_t domain_id) {
  require(n >= 1, ErrorKind::InvalidArgument, "n must be at least 1");
  require(box.lo.size() == box.hi.size(), ErrorKind::Shape, "box lo/hi length mismatch");
  const std::size_t d = box.lo.size();
  for (std::size_t i = 0; i < d; ++i) {
    require(box.lo[i] <= box.hi[i], ErrorKind::InvalidArgument, "box has lo > hi");
  }
  Rng rng(seed);
  LatentBatch out{domain_id, Matrix(n, d)};
  for (std::size_t r = 0; r < n; ++r) {
    for (std::size_t i = 0; i < d; ++i) {
      const double u = rng.uniform();
      out.Z(r, i) = box.lo[i] == box.hi[i] ? box.lo[i] : box.lo[i] + u * (box.hi[i] - box.lo[i]);
    }
  }
  return out;
}

LatentBatch apply_dynamic_scm(const LatentBatch& batch, const IndexSet& S, const IndexSet& U,
                              double p, std::uint64_t seed) {
  require(S.size() == U.size(), ErrorKind::Pairing, "|S| must equal |U| for pairing");
  require(p >= 0.0 && p <= 1.0, ErrorKind::InvalidArgument, "p must lie in [0, 1]");
  Rng rng(seed);
  LatentBatch out = batch;
  for (std::size_t r = 0; r < out.Z.rows(); ++r) {
    for (std::size_t m = 0; m < U.size(); ++m) {
      if (rng.uniform() < p) out.Z(r, U[m]) += out.Z(r, S[m]);
    }
  }
  return out;
}

std::pair<double, double> sample_interval_minmax(Rng& rng) {
  const double a = rng.uniform();
  const double b = rng.uniform();
  return {std::min(a, b), std::max(a, b)};
}

std::pair<double, double> sample_interval_minmax(std::uint64_t seed) {
  Rng rng(seed);
  return sample_interval_minmax(rng);
}

std::vector<PolytopeSupport> sample_polytope_supports(std::size_t d, const IndexSet& S,
                                                      std::size_t k, std::size_t m,
                                                      std::uint64_t seed) {
  require(m >= 2, ErrorKind::DegeneratePolytope, "a polytope needs at least 2 vertices");
  require(k >= 1, ErrorKind::InvalidArgument, "k must be at least 1");
  Rng rng(seed);
  std::vector<PolytopeSupport> out(k);
  for (auto& poly : out) {
    poly.vertices = Matrix(m, d);
    for (std::size_t i = 0; i < d; ++i) {
      for (std::size_t v = 0; v < m; ++v) poly.vertices(v, i) = rng.uniform();
      if (contains(S, i)) {
        const std::size_t lo_vertex = rng.index(m);
        std::size_t hi_vertex = rng.index(m - 1);
        if (hi_vertex >= lo_vertex) ++hi_vertex;
        poly.vertices(lo_vertex, i) = 0.0;
        poly.vertices(hi_vertex, i) = 1.0;
      }
    }
  }
  return out;
}

namespace {

using Point2 = std::array<double, 2>;

double cross(const Point2& o, const Point2& a, const Point2& b) {
  return (a[0] - o[0]) * (b[1] - o[1]) - (a[1] - o[1]) * (b[0] - o[0]);
}

std::vector<Point2> convex_hull(std::vector<Point2> pts) {
  std::sort(pts.begin(), pts.end());
  pts.erase(std::unique(pts.begin(), pts.end()), pts.end());
  if (pts.size() < 3) return pts;
  std::vector<Point2> hull(2 * pts.size());
  std::size_t k = 0;
  for (const auto& p : pts) {
    while (k >= 2 && cross(hull[k - 2], hull[k - 1], p) <= 0) --k;
    hull[k++] = p;
  }
  for (std::size_t i = pts.size() - 1, t = k + 1; i-- > 0;) {
    while (k >= t && cross(hull[k - 2], hull[k - 1], pts[i]) <= 0) --k;
    hull[k++] = pts[i];
  }
  hull.resize(k - 1);
  return hull;
}

}  // namespace

LatentBatch sample_polytope(const PolytopeSupport& polytope, std::size_t n, std::uint64_t seed,
                            std::size_t domain_id) {
  require(n >= 1, ErrorKind::InvalidArgument, "n must be at least 1");
  const Matrix& v = polytope.vertices;
  require(v.rows() >= 2, ErrorKind::DegeneratePolytope, "a polytope needs at least 2 vertices");
  require(v.all_finite(), ErrorKind::InvalidArgument, "vertex coordinates must be finite");
  const std::size_t d = v.cols();
  Rng rng(seed);
  LatentBatch out{domain_id, Matrix(n, d)};

  if (d == 1) {
    const auto col = v.column(0);
    const auto [lo, hi] = std::minmax_element(col.begin(), col.end());
    for (std::size_t r = 0; r < n; ++r) out.Z(r, 0) = rng.uniform(*lo, *hi);
    return out;
  }

  if (d == 2) {
    std::vector<Point2> pts(v.rows());
    for (std::size_t i = 0; i < v.rows(); ++i) pts[i] = {v(i, 0), v(i, 1)};
    const auto hull = convex_hull(pts);
    std::vector<double> cum;
    double total = 0.0;
    for (std::size_t i = 1; i + 1 < hull.size(); ++i) {
      total += 0.5 * std::abs(cross(hull[0], hull[i], hull[i + 1]));
      cum.push_back(total);
    }
    for (std::size_t r = 0; r < n; ++r) {
      if (total <= 0.0) {
        // Collinear hull: uniform on the segment between its extremes.
        const auto& a = hull.front();
        const auto& b = hull.back();
        const double u = rng.uniform();
        out.Z(r, 0) = a[0] + u * (b[0] - a[0]);
        out.Z(r, 1) = a[1] + u * (b[1] - a[1]);
        continue;
      }
      const double pick = rng.uniform(0.0, total);
      std::size_t tri = static_cast<std::size_t>(
          std::lower_bound(cum.begin(), cum.end(), pick) - cum.begin());
      tri = std::min(tri, cum.size() - 1);
      const auto& a = hull[0];
      const auto& b = hull[tri + 1];
      const auto& c = hull[tri + 2];
      const double s = std::sqrt(rng.uniform());
      const double t = rng.uniform();
      const double wa = 1.0 - s;
      const double wb = s * (1.0 - t);
      const double wc = s * t;
      out.Z(r, 0) = wa * a[0] + wb * b[0] + wc * c[0];
      out.Z(r, 1) = wa * a[1] + wb * b[1] + wc * c[1];
    }
    return out;
  }

  std::vector<double> w(v.rows());
  for (std::size_t r = 0; r < n; ++r) {
    double sum = 0.0;
    for (auto& wi : w) {
      wi = -std::log(1.0 - rng.uniform());
      sum += wi;
    }
    for (std::size_t i = 0; i < d; ++i) {
      double acc = 0.0;
      for (std::size_t m = 0; m < v.rows(); ++m) acc += w[m] * v(m, i);
      out.Z(r, i) = acc / sum;
    }
  }
  return out;
}

std::optional<std::pair<std::size_t, std::size_t>> check_support_variability(
    const std::vector<SupportBox>& boxes, const IndexSet& U) {
  require(boxes.size() >= 2, ErrorKind::InvalidArgument, "need at least two domains");
  const std::size_t d = boxes.front().hi.size();
  for (std::size_t p = 0; p < boxes.size(); ++p) {
    for (std::size_t q = 0; q < boxes.size(); ++q) {
      if (p == q) continue;
      bool ok = true;
      for (std::size_t i = 0; i < d && ok; ++i) {
        const double a = boxes[p].hi[i];
        const double b = boxes[q].hi[i];
        ok = contains(U, i) ? b > a : b >= a;
      }
      if (ok) return std::make_pair(p, q);
    }
  }
  return std::nullopt;
}

}  // namespace invae

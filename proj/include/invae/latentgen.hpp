#pragma once

// Multi-domain latent generators: acyclic SCMs with noise-variance
// interventions, random support boxes, the dynamic-SCM offset, and polytope
// supports.

#include <cstdint>
#include <map>
#include <optional>
#include <utility>
#include <vector>

#include "invae/matrix.hpp"
#include "invae/rng.hpp"

namespace invae {

using IndexSet = std::vector<std::size_t>;

enum class Mechanism { Linear, Tanh };

struct ScmSpec {
  std::size_t d = 0;
  std::vector<std::vector<bool>> adjacency;  // adjacency[i][j]: edge i → j
  std::vector<std::size_t> topo_order;
  std::vector<std::vector<double>> weights;  // weights[j][i]: weight of parent i in node j
  Mechanism mechanism = Mechanism::Linear;
  std::vector<double> base_noise_var;
  IndexSet S;
  IndexSet U;

  std::vector<std::size_t> parents(std::size_t node) const;
  std::vector<std::size_t> children(std::size_t node) const;
  /// Nodes without children.
  IndexSet terminal_nodes() const;
};

/// Throws InvalidArgument naming the first violated ScmSpec invariant.
void validate(const ScmSpec& spec);

using NoiseOverrides = std::map<std::size_t, double>;

enum class ScheduleKind { SingleNode, MultiNode };

struct InterventionSchedule {
  std::vector<NoiseOverrides> domains;  // domains[0] is observational (empty)
  ScheduleKind kind = ScheduleKind::SingleNode;
  std::size_t t = 0;
};

struct SupportBox {
  std::vector<double> lo;
  std::vector<double> hi;
};

struct PolytopeSupport {
  Matrix vertices;  // M × d
};

struct LatentBatch {
  std::size_t domain_id = 0;
  Matrix Z;  // n × d
};

struct DagOptions {
  Mechanism mechanism = Mechanism::Linear;
  double weight_lo = 0.5;
  double weight_hi = 1.5;
  double noise_var = 1.0;
  /// Resample until U contains at least two terminal nodes (multi-node use).
  bool require_two_terminal_in_u = false;
  std::size_t max_attempts = 1000;
};

/// S nodes precede U nodes in the topological order, so U → S edges cannot
/// occur and every child of a U node is in U.
ScmSpec build_random_dag(std::size_t d, std::size_t s_size, double edge_prob, std::uint64_t seed,
                         const DagOptions& options = {});

LatentBatch sample_scm(const ScmSpec& spec, const NoiseOverrides& overrides, std::size_t n,
                       std::uint64_t seed, std::size_t domain_id = 0);

/// Like sample_scm, but noise for S nodes comes from `stable_seed`. Passing
/// the same stable_seed for every domain gives all domains the same S block
/// (S nodes have no U parents and are never intervened on).
LatentBatch sample_scm_coupled(const ScmSpec& spec, const NoiseOverrides& overrides, std::size_t n,
                               std::uint64_t seed, std::uint64_t stable_seed,
                               std::size_t domain_id = 0);

InterventionSchedule make_single_node_schedule(const ScmSpec& spec, double var_low,
                                               double var_high, std::uint64_t seed);

InterventionSchedule make_multinode_schedule(const ScmSpec& spec, std::size_t t, double var_low,
                                             double var_high, std::uint64_t seed);

/// One node terminal and both overridden variances moved in the same strict
/// direction relative to base.
bool is_good_intervention(const NoiseOverrides& domain_overrides,
                          const std::vector<double>& base_noise_var, const IndexSet& terminal_nodes);

/// S axes fixed to [0, 1]; U axes get sorted pairs of Uniform[range_lo, range_hi].
std::vector<SupportBox> sample_support_boxes(std::size_t d, const IndexSet& S, std::size_t k,
                                             double range_lo, double range_hi, std::uint64_t seed);

LatentBatch sample_box(const SupportBox& box, std::size_t n, std::uint64_t seed,
                       std::size_t domain_id = 0);

/// With probability p per sample and U component, adds the paired S component
/// (pairing by position in S and U).
LatentBatch apply_dynamic_scm(const LatentBatch& batch, const IndexSet& S, const IndexSet& U,
                              double p, std::uint64_t seed);

/// (min(A, B), max(A, B)) for independent A, B ~ Uniform[0, 1].
std::pair<double, double> sample_interval_minmax(std::uint64_t seed);
std::pair<double, double> sample_interval_minmax(Rng& rng);

std::vector<PolytopeSupport> sample_polytope_supports(std::size_t d, const IndexSet& S,
                                                      std::size_t k, std::size_t m,
                                                      std::uint64_t seed);

/// Points inside the convex hull of the vertices. Exactly uniform for d ≤ 2
/// (interval / triangulated hull); for d > 2, Dirichlet(1) mixtures of the
/// vertices, which stay inside the hull but are not uniform.
LatentBatch sample_polytope(const PolytopeSupport& polytope, std::size_t n, std::uint64_t seed,
                            std::size_t domain_id = 0);

/// First ordered pair (p, q) with hi_q ⪰ hi_p, strictly on U.
std::optional<std::pair<std::size_t, std::size_t>> check_support_variability(
    const std::vector<SupportBox>& boxes, const IndexSet& U);

IndexSet complement(const IndexSet& set, std::size_t d);

}  // namespace invae

#pragma once

// Multi-domain datasets: generation from a DatasetSpec and the on-disk
// directory format (manifest.json, domain_<j>_z.csv, domain_<j>_x.csv,
// mixing.json, G.csv).
//
// Each domain holds n_train + n_val rows; the trailing n_val rows are the
// held-out split. The S block of z is drawn once and shared by every domain,
// so S-marginals agree across domains sample for sample.

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "invae/latentgen.hpp"
#include "invae/matrix.hpp"
#include "invae/mixing.hpp"

namespace invae {

enum class MixingKind { Linear, Polynomial };
enum class LatentKind { Independent, Dscm, SingleNodeScm, MultiNodeScm };

const char* to_string(MixingKind kind);
const char* to_string(LatentKind kind);
MixingKind mixing_kind_from_string(const std::string& name);
LatentKind latent_kind_from_string(const std::string& name);

struct DatasetSpec {
  MixingKind mixing = MixingKind::Linear;
  LatentKind latent = LatentKind::Independent;
  std::size_t d = 8;
  /// Domain count for box latents. SCM latents derive it from the schedule.
  std::size_t k = 16;
  std::size_t n_train = 5000;
  std::size_t n_val = 1000;
  std::size_t degree = 2;
  /// Observation width; 0 picks 2d for linear and 200 for polynomial mixing.
  std::size_t obs_dim = 0;
  /// |S|; 0 picks d/2. Box latents make the first s_size coordinates stable,
  /// SCM latents take S from the sampled graph.
  std::size_t s_size = 0;
  double range_lo = -5.0;
  double range_hi = 5.0;
  double dscm_p = 0.5;
  double edge_prob = 0.5;
  double var_low = 0.5;
  double var_high = 2.0;
  std::size_t t = 1;  // multi-node repetitions per node
  std::uint64_t seed = 0;

  std::size_t observation_width() const;
  std::size_t stable_size() const;
};

void validate(const DatasetSpec& spec);

struct MultiDomainDataset {
  DatasetSpec spec;
  IndexSet S;
  IndexSet U;
  PolynomialMixing mixing;
  std::vector<Matrix> Z;  // per domain, (n_train + n_val) × d
  std::vector<Matrix> X;  // per domain, (n_train + n_val) × n
  std::optional<ScmSpec> scm;
  std::optional<InterventionSchedule> schedule;
  std::vector<SupportBox> boxes;

  std::size_t domains() const { return Z.size(); }
  std::vector<Matrix> train_X() const;
  std::vector<Matrix> train_Z() const;
  /// Held-out rows of every domain, stacked in domain order.
  Matrix val_X() const;
  Matrix val_Z() const;
};

MultiDomainDataset generate_dataset(const DatasetSpec& spec);

void write_dataset(const MultiDomainDataset& data, const std::filesystem::path& dir);
MultiDomainDataset read_dataset(const std::filesystem::path& dir);

/// Comma-separated rows, every value printed with 17 significant digits.
void write_csv_matrix(const Matrix& m, const std::filesystem::path& path);
/// Throws ParseError with the byte offset of the first malformed value.
Matrix read_csv_matrix(const std::filesystem::path& path);
Matrix parse_csv_matrix(const std::string& text);

std::string format_g17(double v);

}  // namespace invae

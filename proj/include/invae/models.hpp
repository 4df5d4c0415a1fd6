#pragma once

// Encoder/decoder architectures.
//
//   LinearAutoencoder   z = x·E,                     x̂ = z·D           (no bias)
//   MlpPolynomial       z = MLP(x) [n, n/2, n/2, d], x̂ = φ_p(z)·Hᵀ      (no bias,
//                       LeakyReLU(0.5) after the two hidden layers)
//   LinearPolynomial    z = x·E,                     x̂ = φ_p(z)·Hᵀ
//   Stage2Mlp           encoder [d, w, w, w, d] and decoder [d, w, w, w, d],
//                       bias on, LeakyReLU(0.2) on hidden layers
//
// LinearPolynomial is the exact-inverse architecture for polynomial mixings
// with full-rank G: z is the degree-1 block of G⁺x, a linear function of x.

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "invae/matrix.hpp"
#include "invae/mixing.hpp"
#include "invae/tape.hpp"

namespace invae {

enum class ArchKind { LinearAutoencoder, MlpPolynomial, LinearPolynomial, Stage2Mlp };

const char* to_string(ArchKind kind);
ArchKind arch_kind_from_string(const std::string& name);

struct Architecture {
  ArchKind kind = ArchKind::LinearAutoencoder;
  std::size_t input_dim = 0;
  std::size_t latent_dim = 0;
  std::size_t degree = 1;   // polynomial decoders
  std::size_t width = 200;  // Stage2Mlp hidden width

  friend bool operator==(const Architecture&, const Architecture&) = default;
};

Architecture linear_autoencoder(std::size_t n, std::size_t d);
Architecture mlp_polynomial(std::size_t n, std::size_t d, std::size_t degree);
Architecture linear_polynomial(std::size_t n, std::size_t d, std::size_t degree);
Architecture stage2_mlp(std::size_t d_in, std::size_t width = 200);

struct LayerShape {
  std::size_t rows = 0;
  std::size_t cols = 0;
  bool encoder = true;
};

/// Parameter tensors in storage order. Weights are in × out (applied as
/// x·W); biases are 1 × out; a polynomial decoder stores Hᵀ (D × n).
std::vector<LayerShape> parameter_shapes(const Architecture& arch);
std::size_t parameter_count(const Architecture& arch);

struct TrainingMetadata {
  std::uint64_t seed = 0;
  std::size_t steps = 0;
  std::size_t epochs = 0;
  double final_recon = 0.0;
  double final_penalty = 0.0;
  std::map<std::string, std::string> extra;

  friend bool operator==(const TrainingMetadata&, const TrainingMetadata&) = default;
};

class Autoencoder {
 public:
  Autoencoder() = default;
  /// Parameters uniform in ±1/√fan_in per tensor, deterministic per seed.
  Autoencoder(Architecture arch, std::uint64_t seed);
  /// Takes ownership of explicit parameters; shapes must match.
  Autoencoder(Architecture arch, std::vector<Matrix> params);

  const Architecture& arch() const noexcept { return arch_; }
  std::vector<Matrix>& params() noexcept { return params_; }
  const std::vector<Matrix>& params() const noexcept { return params_; }
  std::vector<Matrix*> param_ptrs();

  std::vector<double> flat_params() const;
  void set_flat_params(std::span<const double> flat);

  /// Polynomial decoders only: the n × D coefficient matrix H.
  Matrix decoder_H() const;

  /// Graph building. `vars` must come from attach() on the same tape.
  std::vector<ad::Var> attach(ad::Tape& tape);
  ad::Var encode(ad::Tape& tape, const std::vector<ad::Var>& vars, ad::Var x) const;
  ad::Var decode(ad::Tape& tape, const std::vector<ad::Var>& vars, ad::Var z) const;

  /// Inference in data space: encode() standardizes its input and decode()
  /// undoes the standardization when input statistics are set.
  Matrix encode(const Matrix& X) const;
  Matrix decode(const Matrix& Z) const;
  Matrix reconstruct(const Matrix& X) const;

  /// (X − mean) / scale per column, then ·input_whiten when set; identity
  /// when no statistics are set.
  Matrix standardize(const Matrix& X) const;
  Matrix unstandardize(const Matrix& X) const;

  TrainingMetadata metadata;
  std::vector<double> input_mean;
  std::vector<double> input_scale;
  Matrix input_whiten;    // empty or input_dim × input_dim
  Matrix input_unwhiten;

 private:
  std::size_t encoder_tensors() const;

  Architecture arch_;
  std::vector<Matrix> params_;
};

std::vector<double> init_params(const Architecture& arch, std::uint64_t seed);

void save_checkpoint(const Autoencoder& model, const std::filesystem::path& path);
/// Throws ParseError (with byte offset) on malformed JSON, Schema on
/// missing/invalid fields or when `expected` is given and differs, Io when the
/// file cannot be read.
Autoencoder load_checkpoint(const std::filesystem::path& path,
                            const std::optional<Architecture>& expected = std::nullopt);

std::string checkpoint_to_json(const Autoencoder& model);
Autoencoder checkpoint_from_json(const std::string& text,
                                 const std::optional<Architecture>& expected = std::nullopt);

/// Exact-inverse autoencoder for a mixing with full column rank: encoder is
/// the least-squares inverse fitted on (Z, X) samples, decoder is G itself.
/// Degree-1 mixings give a LinearAutoencoder, higher degrees a
/// LinearPolynomial.
Autoencoder oracle_autoencoder(const PolynomialMixing& mixing, const Matrix& Z, const Matrix& X);

}  // namespace invae

#include "invae/models.hpp"

#include <charconv>
#include <cmath>
#include <fstream>
#include <sstream>

#include <nlohmann/json.hpp>

#include "invae/error.hpp"
#include "invae/linalg.hpp"
#include "invae/rng.hpp"

namespace invae {
namespace {

using nlohmann::json;

constexpr double kStage1Slope = 0.5;
constexpr double kStage2Slope = 0.2;
constexpr const char* kFormat = "invae-checkpoint";

bool polynomial_decoder(ArchKind kind) {
  return kind == ArchKind::MlpPolynomial || kind == ArchKind::LinearPolynomial;
}

void check_arch(const Architecture& a) {
  if (a.input_dim == 0 || a.latent_dim == 0) {
    throw Error(ErrorKind::InvalidDimension, "architecture dimensions must be positive");
  }
  if (polynomial_decoder(a.kind) && a.degree == 0) {
    throw Error(ErrorKind::InvalidArgument, "polynomial decoder degree must be >= 1");
  }
  if (a.kind == ArchKind::MlpPolynomial && a.input_dim < 2) {
    throw Error(ErrorKind::InvalidDimension, "MLP encoder needs input_dim >= 2");
  }
  if (a.kind == ArchKind::Stage2Mlp && (a.width == 0 || a.input_dim != a.latent_dim)) {
    throw Error(ErrorKind::InvalidDimension, "Stage2Mlp needs width > 0 and latent = input dim");
  }
}

std::string format_double(double v) {
  char buf[32];
  auto res = std::to_chars(buf, buf + sizeof(buf), v, std::chars_format::general, 17);
  return std::string(buf, res.ptr);
}

}  // namespace

const char* to_string(ArchKind kind) {
  switch (kind) {
    case ArchKind::LinearAutoencoder: return "linear_autoencoder";
    case ArchKind::MlpPolynomial: return "mlp_polynomial";
    case ArchKind::LinearPolynomial: return "linear_polynomial";
    case ArchKind::Stage2Mlp: return "stage2_mlp";
  }
  return "?";
}

ArchKind arch_kind_from_string(const std::string& name) {
  for (ArchKind k : {ArchKind::LinearAutoencoder, ArchKind::MlpPolynomial,
                     ArchKind::LinearPolynomial, ArchKind::Stage2Mlp}) {
    if (name == to_string(k)) return k;
  }
  throw Error(ErrorKind::Schema, "unknown architecture '" + name + "'");
}

Architecture linear_autoencoder(std::size_t n, std::size_t d) {
  return {ArchKind::LinearAutoencoder, n, d, 1, 0};
}
Architecture mlp_polynomial(std::size_t n, std::size_t d, std::size_t degree) {
  return {ArchKind::MlpPolynomial, n, d, degree, 0};
}
Architecture linear_polynomial(std::size_t n, std::size_t d, std::size_t degree) {
  return {ArchKind::LinearPolynomial, n, d, degree, 0};
}
Architecture stage2_mlp(std::size_t d_in, std::size_t width) {
  return {ArchKind::Stage2Mlp, d_in, d_in, 1, width};
}

std::vector<LayerShape> parameter_shapes(const Architecture& a) {
  check_arch(a);
  const std::size_t n = a.input_dim;
  const std::size_t d = a.latent_dim;
  switch (a.kind) {
    case ArchKind::LinearAutoencoder:
      return {{n, d, true}, {d, n, false}};
    case ArchKind::MlpPolynomial: {
      const std::size_t h = n / 2;
      return {{n, h, true}, {h, h, true}, {h, d, true}, {monomial_dim(d, a.degree), n, false}};
    }
    case ArchKind::LinearPolynomial:
      return {{n, d, true}, {monomial_dim(d, a.degree), n, false}};
    case ArchKind::Stage2Mlp: {
      const std::size_t w = a.width;
      std::vector<LayerShape> shapes;
      for (bool enc : {true, false}) {
        const std::size_t dims[] = {n, w, w, w, n};
        for (std::size_t l = 0; l < 4; ++l) {
          shapes.push_back({dims[l], dims[l + 1], enc});
          shapes.push_back({1, dims[l + 1], enc});
        }
      }
      return shapes;
    }
  }
  return {};
}

std::size_t parameter_count(const Architecture& arch) {
  std::size_t total = 0;
  for (const auto& s : parameter_shapes(arch)) total += s.rows * s.cols;
  return total;
}

std::vector<double> init_params(const Architecture& arch, std::uint64_t seed) {
  const auto shapes = parameter_shapes(arch);
  std::vector<double> flat;
  flat.reserve(parameter_count(arch));
  Rng rng(seed);
  // A bias draws its bound from the fan-in of the weight just before it.
  std::size_t fan_in = 1;
  for (const auto& s : shapes) {
    if (s.rows != 1 || arch.kind != ArchKind::Stage2Mlp) fan_in = s.rows;
    const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
    for (std::size_t i = 0; i < s.rows * s.cols; ++i) flat.push_back(rng.uniform(-bound, bound));
  }
  return flat;
}

Autoencoder::Autoencoder(Architecture arch, std::uint64_t seed) : arch_(arch) {
  for (const auto& s : parameter_shapes(arch_)) params_.emplace_back(s.rows, s.cols);
  set_flat_params(init_params(arch_, seed));
  metadata.seed = seed;
}

Autoencoder::Autoencoder(Architecture arch, std::vector<Matrix> params)
    : arch_(arch), params_(std::move(params)) {
  const auto shapes = parameter_shapes(arch_);
  if (shapes.size() != params_.size()) {
    throw Error(ErrorKind::Shape, "parameter tensor count does not match architecture");
  }
  for (std::size_t i = 0; i < shapes.size(); ++i) {
    if (params_[i].rows() != shapes[i].rows || params_[i].cols() != shapes[i].cols) {
      throw Error(ErrorKind::Shape, "parameter tensor " + std::to_string(i) + " has wrong shape");
    }
  }
}

std::vector<Matrix*> Autoencoder::param_ptrs() {
  std::vector<Matrix*> out;
  for (auto& p : params_) out.push_back(&p);
  return out;
}

std::vector<double> Autoencoder::flat_params() const {
  std::vector<double> flat;
  for (const auto& p : params_) flat.insert(flat.end(), p.flat().begin(), p.flat().end());
  return flat;
}

void Autoencoder::set_flat_params(std::span<const double> flat) {
  std::size_t total = 0;
  for (const auto& p : params_) total += p.size();
  if (flat.size() != total) {
    throw Error(ErrorKind::Shape, "flat parameter vector has length " +
                                      std::to_string(flat.size()) + ", expected " +
                                      std::to_string(total));
  }
  std::size_t off = 0;
  for (auto& p : params_) {
    std::copy_n(flat.begin() + static_cast<std::ptrdiff_t>(off), p.size(), p.data());
    off += p.size();
  }
}

Matrix Autoencoder::decoder_H() const {
  if (!polynomial_decoder(arch_.kind)) {
    throw Error(ErrorKind::InvalidArgument, "architecture has no polynomial decoder");
  }
  return params_.back().transposed();
}

std::size_t Autoencoder::encoder_tensors() const {
  switch (arch_.kind) {
    case ArchKind::LinearAutoencoder: return 1;
    case ArchKind::MlpPolynomial: return 3;
    case ArchKind::LinearPolynomial: return 1;
    case ArchKind::Stage2Mlp: return 8;
  }
  return 0;
}

std::vector<ad::Var> Autoencoder::attach(ad::Tape& tape) {
  std::vector<ad::Var> vars;
  for (auto& p : params_) vars.push_back(tape.param(&p));
  return vars;
}

ad::Var Autoencoder::encode(ad::Tape& tape, const std::vector<ad::Var>& v, ad::Var x) const {
  switch (arch_.kind) {
    case ArchKind::LinearAutoencoder:
    case ArchKind::LinearPolynomial:
      return tape.matmul(x, v[0]);
    case ArchKind::MlpPolynomial: {
      ad::Var h = tape.leaky_relu(tape.matmul(x, v[0]), kStage1Slope);
      h = tape.leaky_relu(tape.matmul(h, v[1]), kStage1Slope);
      return tape.matmul(h, v[2]);
    }
    case ArchKind::Stage2Mlp: {
      ad::Var h = x;
      for (std::size_t l = 0; l < 4; ++l) {
        h = tape.add_bias(tape.matmul(h, v[2 * l]), v[2 * l + 1]);
        if (l < 3) h = tape.leaky_relu(h, kStage2Slope);
      }
      return h;
    }
  }
  return x;
}

ad::Var Autoencoder::decode(ad::Tape& tape, const std::vector<ad::Var>& v, ad::Var z) const {
  const std::size_t e = encoder_tensors();
  switch (arch_.kind) {
    case ArchKind::LinearAutoencoder:
      return tape.matmul(z, v[e]);
    case ArchKind::MlpPolynomial:
    case ArchKind::LinearPolynomial:
      return tape.matmul(tape.monomials(z, arch_.degree), v[e]);
    case ArchKind::Stage2Mlp: {
      ad::Var h = z;
      for (std::size_t l = 0; l < 4; ++l) {
        h = tape.add_bias(tape.matmul(h, v[e + 2 * l]), v[e + 2 * l + 1]);
        if (l < 3) h = tape.leaky_relu(h, kStage2Slope);
      }
      return h;
    }
  }
  return z;
}

Matrix Autoencoder::encode(const Matrix& X) const {
  if (X.cols() != arch_.input_dim) throw Error(ErrorKind::Shape, "encode: wrong input width");
  ad::Tape tape;
  std::vector<ad::Var> vars;
  for (const auto& p : params_) vars.push_back(tape.constant(p));
  ad::Var x = tape.input("x");
  ad::Var z = encode(tape, vars, x);
  const Matrix input = standardize(X);
  tape.bind(x, input);
  tape.forward();
  return tape.value(z);
}

Matrix Autoencoder::decode(const Matrix& Z) const {
  if (Z.cols() != arch_.latent_dim) throw Error(ErrorKind::Shape, "decode: wrong latent width");
  ad::Tape tape;
  std::vector<ad::Var> vars;
  for (const auto& p : params_) vars.push_back(tape.constant(p));
  ad::Var z = tape.input("z");
  ad::Var x = decode(tape, vars, z);
  tape.bind(z, Z);
  tape.forward();
  return unstandardize(tape.value(x));
}

Matrix Autoencoder::reconstruct(const Matrix& X) const { return decode(encode(X)); }

Matrix Autoencoder::standardize(const Matrix& X) const {
  if (input_mean.empty()) return X;
  if (input_mean.size() != X.cols() || input_scale.size() != X.cols()) {
    throw Error(ErrorKind::Shape, "standardize: statistics width differs from input");
  }
  Matrix out(X.rows(), X.cols());
  for (std::size_t r = 0; r < X.rows(); ++r) {
    for (std::size_t c = 0; c < X.cols(); ++c) out(r, c) = (X(r, c) - input_mean[c]) / input_scale[c];
  }
  return input_whiten.empty() ? out : matmul(out, input_whiten);
}

Matrix Autoencoder::unstandardize(const Matrix& X) const {
  if (input_mean.empty()) return X;
  if (input_mean.size() != X.cols() || input_scale.size() != X.cols()) {
    throw Error(ErrorKind::Shape, "unstandardize: statistics width differs from input");
  }
  Matrix out = input_unwhiten.empty() ? X : matmul(X, input_unwhiten);
  for (std::size_t r = 0; r < X.rows(); ++r) {
    for (std::size_t c = 0; c < X.cols(); ++c) out(r, c) = out(r, c) * input_scale[c] + input_mean[c];
  }
  return out;
}

std::string checkpoint_to_json(const Autoencoder& model) {
  const Architecture& a = model.arch();
  json j;
  j["format"] = kFormat;
  j["version"] = 1;
  j["arch"] = {{"kind", to_string(a.kind)},
               {"input_dim", a.input_dim},
               {"latent_dim", a.latent_dim},
               {"degree", a.degree},
               {"width", a.width}};
  const auto& m = model.metadata;
  j["metadata"] = {{"seed", m.seed},
                   {"steps", m.steps},
                   {"epochs", m.epochs},
                   {"final_recon", m.final_recon},
                   {"final_penalty", m.final_penalty},
                   {"extra", m.extra}};
  j["input_mean"] = model.input_mean;
  j["input_scale"] = model.input_scale;
  if (!model.input_whiten.empty()) {
    auto rows = [](const Matrix& m) {
      std::vector<std::vector<double>> out(m.rows());
      for (std::size_t r = 0; r < m.rows(); ++r) { const auto row = m.row(r); out[r].assign(row.begin(), row.end()); }
      return out;
    };
    j["input_whiten"] = rows(model.input_whiten);
    j["input_unwhiten"] = rows(model.input_unwhiten);
  }
  j["params"] = "@PARAMS@";
  std::string text = j.dump(1);
  std::string params = "[";
  const auto flat = model.flat_params();
  for (std::size_t i = 0; i < flat.size(); ++i) {
    if (i > 0) params += i % 8 == 0 ? ",\n  " : ", ";
    params += format_double(flat[i]);
  }
  params += "]";
  text.replace(text.find("\"@PARAMS@\""), 10, params);
  return text + "\n";
}

Autoencoder checkpoint_from_json(const std::string& text,
                                 const std::optional<Architecture>& expected) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::parse_error& e) {
    throw ParseError(e.byte > 0 ? e.byte - 1 : 0, e.what());
  }
  try {
    if (j.at("format").get<std::string>() != kFormat) {
      throw Error(ErrorKind::Schema, "not an invae checkpoint");
    }
    const json& ja = j.at("arch");
    Architecture arch;
    arch.kind = arch_kind_from_string(ja.at("kind").get<std::string>());
    arch.input_dim = ja.at("input_dim").get<std::size_t>();
    arch.latent_dim = ja.at("latent_dim").get<std::size_t>();
    arch.degree = ja.at("degree").get<std::size_t>();
    arch.width = ja.at("width").get<std::size_t>();
    if (expected && !(*expected == arch)) {
      throw Error(ErrorKind::Schema, std::string("checkpoint architecture ") + to_string(arch.kind) +
                                         " does not match the expected architecture");
    }
    const auto flat = j.at("params").get<std::vector<double>>();
    if (flat.size() != parameter_count(arch)) {
      throw Error(ErrorKind::Schema, "checkpoint has " + std::to_string(flat.size()) +
                                         " parameters, architecture needs " +
                                         std::to_string(parameter_count(arch)));
    }
    Autoencoder model(arch, std::uint64_t{0});
    model.set_flat_params(flat);
    const json& jm = j.at("metadata");
    model.metadata.seed = jm.at("seed").get<std::uint64_t>();
    model.metadata.steps = jm.at("steps").get<std::size_t>();
    model.metadata.epochs = jm.at("epochs").get<std::size_t>();
    model.metadata.final_recon = jm.at("final_recon").get<double>();
    model.metadata.final_penalty = jm.at("final_penalty").get<double>();
    model.metadata.extra = jm.at("extra").get<std::map<std::string, std::string>>();
    model.input_mean = j.at("input_mean").get<std::vector<double>>();
    model.input_scale = j.at("input_scale").get<std::vector<double>>();
    if (!model.input_mean.empty() && (model.input_mean.size() != arch.input_dim ||
                                      model.input_scale.size() != arch.input_dim)) {
      throw Error(ErrorKind::Schema, "input statistics do not match input_dim");
    }
    if (j.contains("input_whiten")) {
      auto read = [&](const char* key) {
        const auto rows = j.at(key).get<std::vector<std::vector<double>>>();
        Matrix m(rows.size(), arch.input_dim);
        for (std::size_t r = 0; r < rows.size(); ++r) {
          if (rows[r].size() != arch.input_dim) throw Error(ErrorKind::Schema, std::string(key) + " is not square");
          for (std::size_t c = 0; c < arch.input_dim; ++c) m(r, c) = rows[r][c];
        }
        if (m.rows() != arch.input_dim) throw Error(ErrorKind::Schema, std::string(key) + " does not match input_dim");
        return m;
      };
      if (model.input_mean.empty()) throw Error(ErrorKind::Schema, "whitening without input statistics");
      model.input_whiten = read("input_whiten");
      model.input_unwhiten = read("input_unwhiten");
    }
    return model;
  } catch (const json::exception& e) {
    throw Error(ErrorKind::Schema, e.what());
  } catch (const Error& e) {
    if (e.kind() == ErrorKind::InvalidDimension || e.kind() == ErrorKind::InvalidArgument) {
      throw Error(ErrorKind::Schema, e.what());
    }
    throw;
  }
}

void save_checkpoint(const Autoencoder& model, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error(ErrorKind::Io, "cannot write " + path.string());
  out << checkpoint_to_json(model);
  if (!out) throw Error(ErrorKind::Io, "write failed for " + path.string());
}

Autoencoder load_checkpoint(const std::filesystem::path& path,
                            const std::optional<Architecture>& expected) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorKind::Io, "cannot read " + path.string());
  std::stringstream buf;
  buf << in.rdbuf();
  return checkpoint_from_json(buf.str(), expected);
}

Autoencoder oracle_autoencoder(const PolynomialMixing& mixing, const Matrix& Z, const Matrix& X) {
  if (Z.rows() != X.rows() || Z.cols() != mixing.d || X.cols() != mixing.n) {
    throw Error(ErrorKind::Shape, "oracle_autoencoder: sample shapes do not match the mixing");
  }
  Matrix enc = linalg::lstsq(X, Z).coef;  // n × d
  if (mixing.p == 1) {
    Matrix dec(mixing.d, mixing.n);
    for (std::size_t i = 0; i < mixing.d; ++i) {
      for (std::size_t r = 0; r < mixing.n; ++r) dec(i, r) = mixing.G(r, i + 1);
    }
    return Autoencoder(linear_autoencoder(mixing.n, mixing.d), {std::move(enc), std::move(dec)});
  }
  return Autoencoder(linear_polynomial(mixing.n, mixing.d, mixing.p),
                     {std::move(enc), mixing.G.transposed()});
}

}  // namespace invae

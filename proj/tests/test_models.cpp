#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <fstream>

#include "invae/linalg.hpp"
#include "invae/mixing.hpp"
#include "invae/models.hpp"
#include "test_util.hpp"

using namespace invae;
using invae::ad::Tape;
using invae::ad::Var;
using invae::testing::random_matrix;

namespace {

double max_fd_error(Autoencoder& model, const Matrix& X) {
  Tape t;
  auto vars = model.attach(t);
  Var x = t.constant(X);
  Var loss = t.mse(model.decode(t, vars, model.encode(t, vars, x)), x);
  t.forward();
  t.backward(loss);
  std::vector<Matrix> grads;
  for (Var v : vars) grads.push_back(t.grad(v));
  const double h = 1e-5;
  double worst = 0.0;
  for (std::size_t k = 0; k < model.params().size(); ++k) {
    Matrix& p = model.params()[k];
    for (std::size_t i = 0; i < p.size(); ++i) {
      const double saved = p.data()[i];
      p.data()[i] = saved + h;
      t.forward();
      const double up = t.scalar(loss);
      p.data()[i] = saved - h;
      t.forward();
      const double down = t.scalar(loss);
      p.data()[i] = saved;
      const double num = (up - down) / (2 * h);
      const double an = grads[k].data()[i];
      worst = std::max(worst, std::abs(num - an) / std::max({std::abs(num), std::abs(an), 1e-3}));
    }
  }
  return worst;
}

double mse(const Matrix& a, const Matrix& b) {
  double s = 0;
  for (std::size_t i = 0; i < a.size(); ++i) s += (a.data()[i] - b.data()[i]) * (a.data()[i] - b.data()[i]);
  return s / static_cast<double>(a.size());
}

std::filesystem::path temp_dir(const std::string& name) {
  auto p = std::filesystem::temp_directory_path() / ("invae_models_" + name);
  std::filesystem::remove_all(p);
  std::filesystem::create_directories(p);
  return p;
}

}  // namespace

TEST(ModelsGrad, EveryArchitecture) {
  const Architecture archs[] = {linear_autoencoder(6, 3), mlp_polynomial(6, 2, 2),
                                mlp_polynomial(8, 3, 3), linear_polynomial(5, 2, 3),
                                stage2_mlp(3, 7)};
  for (const auto& arch : archs) {
    Autoencoder m(arch, 11);
    Matrix X = random_matrix(9, arch.input_dim, 12);
    EXPECT_LT(max_fd_error(m, X), 1e-4) << to_string(arch.kind);
  }
}

TEST(Models, ParameterShapes) {
  EXPECT_EQ(parameter_count(linear_autoencoder(16, 8)), 2u * 16 * 8);
  auto mlp = parameter_shapes(mlp_polynomial(200, 6, 2));
  ASSERT_EQ(mlp.size(), 4u);
  EXPECT_EQ(mlp[0].cols, 100u);
  EXPECT_EQ(mlp[2].cols, 6u);
  EXPECT_EQ(mlp[3].rows, 28u);
  EXPECT_EQ(parameter_shapes(stage2_mlp(6)).size(), 16u);
}

TEST(Models, InitDeterminismAndBounds) {
  const auto arch = mlp_polynomial(20, 4, 2);
  auto a = init_params(arch, 3), b = init_params(arch, 3), c = init_params(arch, 4);
  EXPECT_EQ(a, b);
  std::size_t differ = 0;
  for (std::size_t i = 0; i < a.size(); ++i) differ += a[i] != c[i];
  EXPECT_GT(differ, a.size() * 99 / 100);
  std::size_t offset = 0;
  for (const auto& s : parameter_shapes(arch)) {
    const double bound = 1.0 / std::sqrt(static_cast<double>(s.rows));
    for (std::size_t i = 0; i < s.rows * s.cols; ++i) EXPECT_LE(std::abs(a[offset + i]), bound);
    offset += s.rows * s.cols;
  }
}

TEST(Models, InverseLinearReconstructsExactly) {
  Matrix W = random_matrix(4, 4, 1);
  for (std::size_t i = 0; i < 4; ++i) W(i, i) += 3.0;
  Autoencoder m(linear_autoencoder(4, 4), {W, linalg::inverse(W)});
  Matrix X = random_matrix(20, 4, 2);
  EXPECT_LT(max_abs_diff(m.reconstruct(X), X), 1e-10);
}

TEST(Models, RandomInitShapesAndFinite) {
  for (const auto& arch : {mlp_polynomial(200, 6, 2), stage2_mlp(6), linear_autoencoder(16, 8)}) {
    Autoencoder m(arch, 5);
    Matrix X = random_matrix(30, arch.input_dim, 6);
    Matrix Z = m.encode(X);
    EXPECT_EQ(Z.cols(), arch.latent_dim);
    Matrix R = m.reconstruct(X);
    EXPECT_EQ(R.rows(), 30u);
    EXPECT_EQ(R.cols(), arch.input_dim);
    EXPECT_TRUE(R.all_finite());
  }
  Autoencoder m(linear_autoencoder(4, 2), 1);
  EXPECT_ERROR_KIND(m.encode(Matrix(3, 5)), ErrorKind::Shape);
}

TEST(Models, PolynomialDecoderLinearInH) {
  Autoencoder a(linear_polynomial(5, 2, 2), 1), b(linear_polynomial(5, 2, 2), 2);
  Autoencoder sum = a;
  for (std::size_t i = 0; i < sum.params()[1].size(); ++i)
    sum.params()[1].data()[i] += b.params()[1].data()[i];
  Matrix Z = random_matrix(7, 2, 3);
  Matrix da = a.decode(Z), db = b.decode(Z);
  for (std::size_t i = 0; i < da.size(); ++i) da.data()[i] += db.data()[i];
  EXPECT_LT(max_abs_diff(sum.decode(Z), da), 1e-12);
}

TEST(Models, OracleIsExactInverse) {
  Matrix Z = random_matrix(500, 3, 4, 0, 1);
  for (std::size_t p : {1u, 2u, 3u}) {
    PolynomialMixing g = p == 1 ? make_linear_mixing(3, 6, 5) : make_random_mixing(3, 40, p, 5);
    Matrix X = apply_mixing(g, Z);
    Autoencoder o = oracle_autoencoder(g, Z, X);
    EXPECT_LT(mse(o.reconstruct(X), X), 1e-12) << p;
    EXPECT_LT(max_abs_diff(o.encode(X), Z), 1e-8) << p;
    if (p > 1) EXPECT_LT(max_abs_diff(o.decoder_H(), g.G), 1e-15);
  }
}

TEST(Checkpoint, RoundTripBitwise) {
  Autoencoder m(mlp_polynomial(10, 3, 2), 9);
  m.input_mean = std::vector<double>(10, 0.1);
  m.input_scale = std::vector<double>(10, 1.0 / 3.0);
  m.metadata.steps = 17;
  m.metadata.final_recon = 0.1 + 0.2;
  m.metadata.extra["penalty"] = "minmax";
  auto dir = temp_dir("roundtrip");
  save_checkpoint(m, dir / "m.ckpt");
  Autoencoder back = load_checkpoint(dir / "m.ckpt", m.arch());
  EXPECT_EQ(back.flat_params(), m.flat_params());
  EXPECT_EQ(back.metadata, m.metadata);
  EXPECT_EQ(back.input_mean, m.input_mean);
  EXPECT_EQ(back.input_scale, m.input_scale);
  Matrix X = random_matrix(12, 10, 1);
  EXPECT_EQ(mse(back.reconstruct(X), X), mse(m.reconstruct(X), X));
}

TEST(Checkpoint, Corruption) {
  Autoencoder m(linear_autoencoder(4, 2), 1);
  const std::string text = checkpoint_to_json(m);
  try {
    checkpoint_from_json(text.substr(0, text.size() / 2));
    FAIL() << "truncated checkpoint accepted";
  } catch (const ParseError& e) {
    EXPECT_LE(e.offset(), text.size() / 2);
  }
  EXPECT_ERROR_KIND(checkpoint_from_json(text, linear_autoencoder(4, 3)), ErrorKind::Schema);
  EXPECT_ERROR_KIND(checkpoint_from_json("{\"format\":\"nope\"}"), ErrorKind::Schema);
  EXPECT_ERROR_KIND(load_checkpoint("/nonexistent/dir/x.ckpt"), ErrorKind::Io);
}

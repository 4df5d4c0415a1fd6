#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <fstream>

#include "invae/dataset.hpp"
#include "invae/linalg.hpp"
#include "test_util.hpp"

using namespace invae;
namespace fs = std::filesystem;

namespace {

fs::path scratch(const std::string& name) {
  fs::path p = fs::temp_directory_path() / ("invae_test_dataset_" + name);
  fs::remove_all(p);
  return p;
}

DatasetSpec small(MixingKind mixing, LatentKind latent) {
  DatasetSpec s;
  s.mixing = mixing;
  s.latent = latent;
  s.d = 4;
  s.k = 5;
  s.n_train = 60;
  s.n_val = 20;
  s.degree = 2;
  s.obs_dim = mixing == MixingKind::Linear ? 8 : 20;
  s.seed = 3;
  return s;
}

void expect_bitwise(const Matrix& a, const Matrix& b) {
  ASSERT_EQ(a.rows(), b.rows());
  ASSERT_EQ(a.cols(), b.cols());
  for (std::size_t i = 0; i < a.size(); ++i) ASSERT_EQ(a.data()[i], b.data()[i]) << i;
}

}  // namespace

TEST(Spec, Defaults) {
  DatasetSpec s;
  s.d = 6;
  EXPECT_EQ(s.observation_width(), 12u);
  EXPECT_EQ(s.stable_size(), 3u);
  s.mixing = MixingKind::Polynomial;
  EXPECT_EQ(s.observation_width(), 200u);
}

TEST(Spec, Validation) {
  DatasetSpec s;
  s.d = 0;
  EXPECT_ERROR_KIND(validate(s), ErrorKind::Config);
  DatasetSpec t;
  t.latent = LatentKind::Dscm;
  t.d = 4;
  t.s_size = 1;
  EXPECT_ERROR_KIND(validate(t), ErrorKind::Config);
  DatasetSpec u;
  u.range_lo = 1;
  u.range_hi = 1;
  EXPECT_ERROR_KIND(validate(u), ErrorKind::Config);
  EXPECT_ERROR_KIND(mixing_kind_from_string("cubic"), ErrorKind::Config);
  EXPECT_EQ(latent_kind_from_string(to_string(LatentKind::MultiNodeScm)), LatentKind::MultiNodeScm);
}

TEST(Generate, ShapesAndSplits) {
  auto data = generate_dataset(small(MixingKind::Linear, LatentKind::Independent));
  ASSERT_EQ(data.domains(), 5u);
  EXPECT_EQ((data.S), (IndexSet{0, 1}));
  EXPECT_EQ((data.U), (IndexSet{2, 3}));
  for (std::size_t j = 0; j < 5; ++j) {
    EXPECT_EQ(data.Z[j].rows(), 80u);
    EXPECT_EQ(data.X[j].cols(), 8u);
  }
  EXPECT_EQ(data.train_X()[2].rows(), 60u);
  const Matrix vz = data.val_Z();
  EXPECT_EQ(vz.rows(), 100u);
  // val rows are the tail of each domain
  EXPECT_EQ(vz(20, 3), data.Z[1](60, 3));
  EXPECT_EQ(vz(99, 0), data.Z[4](79, 0));
}

TEST(Generate, StableBlockShared) {
  for (auto latent : {LatentKind::Independent, LatentKind::Dscm}) {
    auto data = generate_dataset(small(MixingKind::Linear, latent));
    for (std::size_t j = 1; j < data.domains(); ++j)
      for (std::size_t r = 0; r < 80; ++r)
        for (std::size_t s : data.S) ASSERT_EQ(data.Z[j](r, s), data.Z[0](r, s));
  }
}

TEST(Generate, BoxSupports) {
  auto data = generate_dataset(small(MixingKind::Linear, LatentKind::Independent));
  for (std::size_t j = 0; j < data.domains(); ++j) {
    const auto& b = data.boxes[j];
    for (std::size_t r = 0; r < 80; ++r)
      for (std::size_t c = 0; c < 4; ++c) {
        EXPECT_GE(data.Z[j](r, c), b.lo[c]);
        EXPECT_LE(data.Z[j](r, c), b.hi[c]);
      }
  }
}

TEST(Generate, ObservationsAreMixedLatents) {
  for (auto mixing : {MixingKind::Linear, MixingKind::Polynomial}) {
    auto data = generate_dataset(small(mixing, LatentKind::Dscm));
    for (std::size_t j = 0; j < data.domains(); ++j) {
      Matrix x = apply_mixing(data.mixing, data.Z[j]);
      expect_bitwise(x, data.X[j]);
    }
  }
}

TEST(Generate, LinearMixingInjective) {
  auto data = generate_dataset(small(MixingKind::Linear, LatentKind::Independent));
  EXPECT_EQ(linalg::numerical_rank(data.mixing.G), 4u);
}

TEST(Generate, Deterministic) {
  auto spec = small(MixingKind::Polynomial, LatentKind::Dscm);
  auto a = generate_dataset(spec);
  auto b = generate_dataset(spec);
  for (std::size_t j = 0; j < a.domains(); ++j) expect_bitwise(a.X[j], b.X[j]);
  spec.seed = 4;
  auto c = generate_dataset(spec);
  EXPECT_NE(a.X[0](0, 0), c.X[0](0, 0));
}

TEST(Generate, ScmLatents) {
  auto spec = small(MixingKind::Linear, LatentKind::SingleNodeScm);
  auto data = generate_dataset(spec);
  ASSERT_TRUE(data.scm.has_value());
  ASSERT_TRUE(data.schedule.has_value());
  EXPECT_EQ(data.domains(), data.schedule->domains.size());
  EXPECT_EQ(data.spec.k, data.domains());
  EXPECT_EQ(data.S, data.scm->S);
  EXPECT_EQ(data.U, data.scm->U);
  for (std::size_t j = 1; j < data.domains(); ++j)
    for (std::size_t s : data.S) ASSERT_EQ(data.Z[j](7, s), data.Z[0](7, s));
  spec.latent = LatentKind::MultiNodeScm;
  spec.t = 2;
  auto multi = generate_dataset(spec);
  EXPECT_GT(multi.domains(), 1u);
  for (const Matrix& z : multi.Z) EXPECT_TRUE(z.all_finite());
}

TEST(Csv, ExactRoundTrip) {
  Matrix m{{0.1, -1e-300, 1.0 / 3.0}, {std::nextafter(1.0, 2.0), 12345678901234567.0, -0.0}};
  auto p = scratch("csv");
  fs::create_directories(p);
  write_csv_matrix(m, p / "m.csv");
  expect_bitwise(read_csv_matrix(p / "m.csv"), m);
  fs::remove_all(p);
  EXPECT_EQ(format_g17(0.5), "0.5");
}

TEST(Csv, ParseErrorsCarryOffsets) {
  try {
    parse_csv_matrix("1,2\n3,x\n");
    FAIL();
  } catch (const ParseError& e) {
    EXPECT_EQ(e.offset(), 6u);
  }
  try {
    parse_csv_matrix("1,2\n3\n");
    FAIL();
  } catch (const ParseError& e) {
    EXPECT_EQ(e.offset(), 4u);
  }
  EXPECT_ERROR_KIND(read_csv_matrix("/nonexistent/invae.csv"), ErrorKind::Io);
}

TEST(Disk, RoundTripAllKinds) {
  for (auto latent : {LatentKind::Independent, LatentKind::Dscm, LatentKind::SingleNodeScm}) {
    for (auto mixing : {MixingKind::Linear, MixingKind::Polynomial}) {
      auto data = generate_dataset(small(mixing, latent));
      auto dir = scratch("rt");
      write_dataset(data, dir);
      EXPECT_TRUE(fs::exists(dir / "manifest.json"));
      EXPECT_TRUE(fs::exists(dir / "domain_0_z.csv"));
      EXPECT_TRUE(fs::exists(dir / "G.csv"));
      auto back = read_dataset(dir);
      ASSERT_EQ(back.domains(), data.domains());
      EXPECT_EQ(back.S, data.S);
      EXPECT_EQ(back.spec.seed, data.spec.seed);
      EXPECT_EQ(back.scm.has_value(), data.scm.has_value());
      expect_bitwise(back.mixing.G, data.mixing.G);
      for (std::size_t j = 0; j < data.domains(); ++j) {
        expect_bitwise(back.Z[j], data.Z[j]);
        expect_bitwise(back.X[j], data.X[j]);
      }
      fs::remove_all(dir);
    }
  }
}

TEST(Disk, SchemaErrors) {
  auto data = generate_dataset(small(MixingKind::Linear, LatentKind::Independent));
  auto dir = scratch("schema");
  write_dataset(data, dir);
  std::ofstream(dir / "domain_1_x.csv") << "1,2\n";
  EXPECT_ERROR_KIND(read_dataset(dir), ErrorKind::Schema);
  std::ofstream(dir / "manifest.json") << "{\"format\": \"other\"}";
  EXPECT_ERROR_KIND(read_dataset(dir), ErrorKind::Schema);
  fs::remove_all(dir);
  EXPECT_ERROR_KIND(read_dataset(dir), ErrorKind::Io);
}

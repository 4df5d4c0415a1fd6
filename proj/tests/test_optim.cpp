#include <gtest/gtest.h>

#include <cmath>

#include "invae/optim.hpp"
#include "test_util.hpp"

using namespace invae;

namespace {

void step(AdamState& s, Matrix& w, const Matrix& g) {
  Matrix* p[] = {&w};
  const Matrix* gp[] = {&g};
  adam_step(s, p, gp);
}

}  // namespace

TEST(Adam, ZeroGradientLeavesParams) {
  Matrix w{{1.0, -2.0}};
  Matrix* p[] = {&w};
  AdamState s = make_adam_state(p, 1e-3);
  for (int i = 0; i < 5; ++i) step(s, w, Matrix(1, 2));
  EXPECT_EQ(w, (Matrix{{1.0, -2.0}}));
}

TEST(Adam, FirstStepIsSignTimesLr) {
  Matrix w{{0.0, 0.0, 0.0}};
  Matrix* p[] = {&w};
  AdamState s = make_adam_state(p, 0.01);
  step(s, w, Matrix{{5.0, -0.3, 100.0}});
  EXPECT_NEAR(w(0, 0), -0.01, 1e-9);
  EXPECT_NEAR(w(0, 1), 0.01, 1e-8);
  EXPECT_NEAR(w(0, 2), -0.01, 1e-9);
  EXPECT_EQ(s.step, 1u);
}

TEST(Adam, ConvergesOnQuadratic) {
  Matrix w{{0.0}};
  Matrix* p[] = {&w};
  AdamState s = make_adam_state(p, 0.1);
  for (int i = 0; i < 200; ++i) step(s, w, Matrix{{2.0 * (w(0, 0) - 3.0)}});
  EXPECT_LT(std::abs(w(0, 0) - 3.0), 0.1);
}

TEST(Adam, ShapeMismatch) {
  Matrix w{{0.0}};
  Matrix* p[] = {&w};
  AdamState s = make_adam_state(p);
  EXPECT_ERROR_KIND(step(s, w, Matrix(1, 2)), ErrorKind::Shape);
}

TEST(Plateau, DecreasingKeepsLr) {
  PlateauSchedule s;
  for (int i = 0; i < 100; ++i) EXPECT_EQ(plateau_update(s, 100.0 - i), 1e-3);
}

TEST(Plateau, ElevenFlatEpochsHalveOnce) {
  PlateauSchedule s;
  double lr = 0;
  int drops = 0;
  double prev = s.lr;
  for (int i = 0; i < 11; ++i) {
    lr = plateau_update(s, 1.0);
    drops += lr < prev;
    prev = lr;
  }
  EXPECT_EQ(drops, 1);
  EXPECT_DOUBLE_EQ(lr, 5e-4);
}

TEST(Plateau, FloorAndSpacing) {
  PlateauSchedule s;
  std::vector<int> drop_epochs;
  double prev = s.lr;
  for (int i = 0; i < 100; ++i) {
    const double lr = plateau_update(s, 1.0);
    EXPECT_LE(lr, prev);
    EXPECT_GE(lr, 1e-4);
    if (lr < prev) drop_epochs.push_back(i);
    prev = lr;
  }
  EXPECT_DOUBLE_EQ(prev, 1e-4);
  ASSERT_GE(drop_epochs.size(), 2u);
  for (std::size_t i = 1; i < drop_epochs.size(); ++i)
    EXPECT_GE(drop_epochs[i] - drop_epochs[i - 1], 10);
}

TEST(Plateau, RejectsNonFinite) {
  PlateauSchedule s;
  EXPECT_ERROR_KIND(plateau_update(s, NAN), ErrorKind::Numeric);
}

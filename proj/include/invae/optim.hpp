#pragma once

#include <cstddef>
#include <limits>
#include <span>
#include <vector>

#include "invae/matrix.hpp"

namespace invae {

struct AdamState {
  std::size_t step = 0;
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  std::vector<Matrix> m;
  std::vector<Matrix> v;
};

/// Zero moments shaped like `params`.
AdamState make_adam_state(std::span<Matrix* const> params, double lr = 1e-3);

/// One bias-corrected Adam update, in place.
void adam_step(AdamState& state, std::span<Matrix* const> params,
               std::span<const Matrix* const> grads);

/// Reduce-on-plateau learning rate. An epoch counts as an improvement when its
/// loss is strictly below the best seen so far. After `patience` epochs
/// without improvement (outside cooldown) lr ← max(lr·factor, min_lr) and a
/// cooldown of `cooldown` epochs starts, during which the bad-epoch count
/// stays at zero.
struct PlateauSchedule {
  double lr = 1e-3;
  double factor = 0.5;
  std::size_t patience = 10;
  std::size_t cooldown = 10;
  double min_lr = 1e-4;

  double best = std::numeric_limits<double>::infinity();
  std::size_t bad_epochs = 0;
  std::size_t cooldown_left = 0;
};

/// Feeds one epoch loss; returns the (possibly reduced) lr.
double plateau_update(PlateauSchedule& schedule, double epoch_loss);

}  // namespace invae

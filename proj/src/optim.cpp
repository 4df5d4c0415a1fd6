#include "invae/optim.hpp"

#include <algorithm>
#include <cmath>

#include "invae/error.hpp"

namespace invae {

AdamState make_adam_state(std::span<Matrix* const> params, double lr) {
  if (!(lr > 0.0)) throw Error(ErrorKind::InvalidArgument, "learning rate must be positive");
  AdamState state;
  state.lr = lr;
  for (const Matrix* p : params) {
    state.m.emplace_back(p->rows(), p->cols());
    state.v.emplace_back(p->rows(), p->cols());
  }
  return state;
}

void adam_step(AdamState& state, std::span<Matrix* const> params,
               std::span<const Matrix* const> grads) {
  if (params.size() != grads.size() || params.size() != state.m.size()) {
    throw Error(ErrorKind::Shape, "adam_step: parameter/gradient/state count mismatch");
  }
  ++state.step;
  const double t = static_cast<double>(state.step);
  const double c1 = 1.0 - std::pow(state.beta1, t);
  const double c2 = 1.0 - std::pow(state.beta2, t);
  const double b1 = state.beta1;
  const double b2 = state.beta2;
  for (std::size_t i = 0; i < params.size(); ++i) {
    Matrix& p = *params[i];
    const Matrix& g = *grads[i];
    Matrix& m = state.m[i];
    Matrix& v = state.v[i];
    if (g.rows() != p.rows() || g.cols() != p.cols() || m.rows() != p.rows() ||
        m.cols() != p.cols()) {
      throw Error(ErrorKind::Shape, "adam_step: gradient shape differs from parameter");
    }
    double* pd = p.data();
    const double* gd = g.data();
    double* md = m.data();
    double* vd = v.data();
    for (std::size_t j = 0; j < p.size(); ++j) {
      md[j] = b1 * md[j] + (1.0 - b1) * gd[j];
      vd[j] = b2 * vd[j] + (1.0 - b2) * gd[j] * gd[j];
      const double m_hat = md[j] / c1;
      const double v_hat = vd[j] / c2;
      pd[j] -= state.lr * m_hat / (std::sqrt(v_hat) + state.eps);
    }
  }
}

double plateau_update(PlateauSchedule& s, double epoch_loss) {
  if (!std::isfinite(epoch_loss)) {
    throw Error(ErrorKind::Numeric, "plateau_update: non-finite epoch loss");
  }
  if (epoch_loss < s.best) {
    s.best = epoch_loss;
    s.bad_epochs = 0;
  } else {
    ++s.bad_epochs;
  }
  if (s.cooldown_left > 0) {
    --s.cooldown_left;
    s.bad_epochs = 0;
  }
  if (s.bad_epochs >= s.patience && s.lr > s.min_lr) {
    s.lr = std::max(s.lr * s.factor, s.min_lr);
    s.cooldown_left = s.cooldown;
    s.bad_epochs = 0;
  }
  return s.lr;
}

}  // namespace invae

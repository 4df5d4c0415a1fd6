#include "invae/trainer.hpp"

#include <chrono>
#include <cmath>
#include <fstream>

#include "invae/error.hpp"
#include "invae/linalg.hpp"
#include "invae/rng.hpp"

namespace invae {
namespace {

/// Per-domain sampling without replacement, reshuffling a domain's order
/// whenever it is exhausted.
class DomainSampler {
 public:
  DomainSampler(std::span<const Matrix> domains, std::size_t batch_size, std::uint64_t seed)
      : domains_(domains), rng_(seed) {
    const std::size_t k = domains.size();
    for (std::size_t j = 0; j < k; ++j) {
      counts_.push_back(batch_size / k + (j < batch_size % k ? 1 : 0));
      order_.push_back(std::vector<std::size_t>(domains[j].rows()));
      for (std::size_t i = 0; i < order_[j].size(); ++i) order_[j][i] = i;
      rng_.shuffle(order_[j].begin(), order_[j].end());
      cursor_.push_back(0);
    }
    batch_.resize(batch_size, domains.front().cols());
  }

  const std::vector<std::size_t>& counts() const { return counts_; }

  const Matrix& next() {
    std::size_t row = 0;
    for (std::size_t j = 0; j < domains_.size(); ++j) {
      const Matrix& src = domains_[j];
      for (std::size_t t = 0; t < counts_[j]; ++t) {
        if (cursor_[j] == order_[j].size()) {
          rng_.shuffle(order_[j].begin(), order_[j].end());
          cursor_[j] = 0;
        }
        const auto from = src.row(order_[j][cursor_[j]++]);
        std::copy(from.begin(), from.end(), batch_.row(row++).begin());
      }
    }
    return batch_;
  }

 private:
  std::span<const Matrix> domains_;
  Rng rng_;
  std::vector<std::size_t> counts_;
  std::vector<std::vector<std::size_t>> order_;
  std::vector<std::size_t> cursor_;
  Matrix batch_;
};

}  // namespace

void validate(const TrainConfig& c, std::size_t domains) {
  if (c.max_steps == 0) throw Error(ErrorKind::Config, "max_steps must be >= 1");
  if (c.steps_per_epoch == 0) throw Error(ErrorKind::Config, "steps_per_epoch must be >= 1");
  if (!(c.lr0 > 0.0)) throw Error(ErrorKind::Config, "lr0 must be positive");
  if (domains == 0) throw Error(ErrorKind::InvalidArgument, "no training domains");
  if (c.whiten && !c.standardize) throw Error(ErrorKind::Config, "whiten needs standardize");
  if (c.whiten && !(c.whiten_floor > 0.0)) throw Error(ErrorKind::Config, "whiten_floor must be positive");
  if (c.batch_size < domains) {
    throw Error(ErrorKind::Config, "batch_size must give every domain at least one row");
  }
  if (c.use_penalty) {
    if (domains < 2) {
      throw Error(ErrorKind::CannotEnforceInvariance,
                  "invariance needs at least two domains, got " + std::to_string(domains));
    }
    validate(c.penalty);
    if (c.batch_size < 2 * c.penalty.top_k) {
      throw Error(ErrorKind::Config, "batch_size must be at least 2 * top_k");
    }
  }
}

void TrainLog::write_csv(const std::filesystem::path& path) const {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw Error(ErrorKind::Io, "cannot write " + path.string());
  out.precision(17);
  out << "step,recon_loss,penalty,lr\n";
  for (std::size_t i = 0; i < recon.size(); ++i) {
    out << i << ',' << recon[i] << ',' << penalty[i] << ',' << lr[i] << '\n';
  }
  if (!out) throw Error(ErrorKind::Io, "write failed for " + path.string());
}

void column_stats(std::span<const Matrix> domains, std::vector<double>& mean,
                  std::vector<double>& scale) {
  const std::size_t cols = domains.front().cols();
  mean.assign(cols, 0.0);
  scale.assign(cols, 0.0);
  std::size_t rows = 0;
  for (const Matrix& m : domains) {
    if (m.cols() != cols) throw Error(ErrorKind::Shape, "domains differ in column count");
    for (std::size_t r = 0; r < m.rows(); ++r) {
      for (std::size_t c = 0; c < cols; ++c) mean[c] += m(r, c);
    }
    rows += m.rows();
  }
  for (double& v : mean) v /= static_cast<double>(rows);
  for (const Matrix& m : domains) {
    for (std::size_t r = 0; r < m.rows(); ++r) {
      for (std::size_t c = 0; c < cols; ++c) {
        const double diff = m(r, c) - mean[c];
        scale[c] += diff * diff;
      }
    }
  }
  for (double& v : scale) {
    v = std::sqrt(v / static_cast<double>(rows));
    if (!(v > 0.0)) v = 1.0;
  }
}

TrainResult train(Autoencoder model, std::span<const Matrix> domains, const TrainConfig& config) {
  validate(config, domains.size());
  for (const Matrix& m : domains) {
    if (m.cols() != model.arch().input_dim) {
      throw Error(ErrorKind::Shape, "domain width " + std::to_string(m.cols()) +
                                        " does not match model input " +
                                        std::to_string(model.arch().input_dim));
    }
    if (m.rows() == 0) throw Error(ErrorKind::InvalidArgument, "empty training domain");
    if (!m.all_finite()) throw Error(ErrorKind::Numeric, "training data contains NaN/Inf");
  }
  const auto start = std::chrono::steady_clock::now();

  std::vector<Matrix> standardized;
  std::span<const Matrix> data = domains;
  if (config.standardize) {
    column_stats(domains, model.input_mean, model.input_scale);
    model.input_whiten = Matrix();
    model.input_unwhiten = Matrix();
    for (const Matrix& m : domains) standardized.push_back(model.standardize(m));
    if (config.whiten) {
      const Matrix pooled = vstack(standardized);
      Matrix cov = matmul(pooled.transposed(), pooled);
      for (double& v : cov.flat()) v /= static_cast<double>(pooled.rows());
      const linalg::Whitening w = linalg::zca_whitening(cov, config.whiten_floor);
      model.input_whiten = w.forward;
      model.input_unwhiten = w.inverse;
      for (Matrix& m : standardized) m = matmul(m, w.forward);
    }
    data = standardized;
  } else {
    model.input_mean.clear();
    model.input_scale.clear();
    model.input_whiten = Matrix();
    model.input_unwhiten = Matrix();
  }

  DomainSampler sampler(data, config.batch_size, derive_seed(config.seed, 1));

  ad::Tape tape;
  const std::vector<ad::Var> params = model.attach(tape);
  ad::Var x = tape.input("x");
  ad::Var z = model.encode(tape, params, x);
  ad::Var recon = tape.mse(model.decode(tape, params, z), x);
  ad::Var loss = recon;
  ad::Var penalty{};
  ad::Var kernel{};
  const bool tracks_kernel = config.use_penalty && config.penalty.kind != PenaltyKind::MinMax &&
                             config.penalty.bandwidth.median;
  if (config.use_penalty) {
    const DomainRanges ranges = contiguous_ranges(sampler.counts());
    penalty = total_penalty(tape, z, ranges, config.penalty, &kernel);
    loss = tape.add(recon, tape.scale(penalty, config.penalty.lambda));
  }

  std::vector<Matrix*> param_ptrs = model.param_ptrs();
  std::vector<const Matrix*> grads;
  AdamState adam = make_adam_state(param_ptrs, config.lr0);
  PlateauSchedule schedule = config.schedule;
  schedule.lr = config.lr0;

  TrainLog log;
  log.recon.reserve(config.max_steps);
  log.penalty.reserve(config.max_steps);
  log.lr.reserve(config.max_steps);
  double epoch_sum = 0.0;
  std::size_t epochs = 0;
  for (std::size_t step = 0; step < config.max_steps; ++step) {
    tape.bind(x, sampler.next());
    try {
      tape.forward();
    } catch (const Error& e) {
      if (e.kind() == ErrorKind::Numeric) throw DivergenceError(step, e.what());
      throw;
    }
    const double total = tape.scalar(loss);
    if (!std::isfinite(total)) throw DivergenceError(step, "non-finite loss");
    tape.backward(loss);
    grads.clear();
    for (ad::Var v : params) grads.push_back(&tape.grad(v));
    for (const Matrix* g : grads) {
      if (!g->all_finite()) throw DivergenceError(step, "non-finite gradient");
    }
    log.recon.push_back(tape.scalar(recon));
    log.penalty.push_back(config.use_penalty ? tape.scalar(penalty) : 0.0);
    log.lr.push_back(adam.lr);
    if (tracks_kernel && tape.rbf_degenerate(kernel)) ++log.bandwidth_fallbacks;
    adam_step(adam, param_ptrs, grads);

    epoch_sum += total;
    if ((step + 1) % config.steps_per_epoch == 0) {
      adam.lr = plateau_update(schedule, epoch_sum / static_cast<double>(config.steps_per_epoch));
      epoch_sum = 0.0;
      ++epochs;
    }
  }

  log.wall_seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  model.metadata.seed = config.seed;
  model.metadata.steps = log.steps();
  model.metadata.epochs = epochs;
  model.metadata.final_recon = log.recon.back();
  model.metadata.final_penalty = log.penalty.back();
  return {std::move(model), std::move(log)};
}

TrainResult train_stage1(std::span<const Matrix> domains, const Architecture& arch,
                         TrainConfig config) {
  config.use_penalty = false;
  Autoencoder model(arch, derive_seed(config.seed, 0));
  TrainResult result = train(std::move(model), domains, config);
  result.model.metadata.extra["stage"] = "1";
  return result;
}

TrainResult train_stage2(std::span<const Matrix> encoded_domains, TrainConfig config) {
  if (encoded_domains.size() < 2) {
    throw Error(ErrorKind::CannotEnforceInvariance, "stage 2 needs at least two domains");
  }
  config.use_penalty = true;
  const std::size_t d_in = encoded_domains.front().cols();
  Autoencoder model(stage2_mlp(d_in), derive_seed(config.seed, 0));
  TrainResult result = train(std::move(model), encoded_domains, config);
  result.model.metadata.extra["stage"] = "2";
  return result;
}

TrainResult train_linear_joint(std::span<const Matrix> domains, std::size_t d,
                               TrainConfig config) {
  if (domains.empty()) throw Error(ErrorKind::InvalidArgument, "no training domains");
  Autoencoder model(linear_autoencoder(domains.front().cols(), d), derive_seed(config.seed, 0));
  TrainResult result = train(std::move(model), domains, config);
  result.model.metadata.extra["stage"] = "joint";
  return result;
}

}  // namespace invae

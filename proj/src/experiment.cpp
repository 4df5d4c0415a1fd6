#include "invae/experiment.hpp"

#include <atomic>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <mutex>
#include <sstream>
#include <thread>

#include <nlohmann/json.hpp>

#include "invae/error.hpp"
#include "invae/rng.hpp"

namespace invae {
namespace {

using nlohmann::json;

constexpr std::uint64_t kTrainStream = 0x7a11;
// Linear Stage 2 behind a polynomial Stage 1 is still far from converged at 2000 Adam steps.
constexpr std::size_t kPolyStage2Steps = 20000;

template <typename T>
T field(const json& value, const std::string& name) {
  try {
    return value.get<T>();
  } catch (const json::exception& e) {
    throw Error(ErrorKind::Config, "field '" + name + "': " + e.what());
  }
}

void write_text(const std::filesystem::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error(ErrorKind::Io, "cannot write " + path.string());
  out << text;
}

std::filesystem::path make_dir(const std::filesystem::path& dir) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw Error(ErrorKind::Io, "cannot create " + dir.string() + ": " + ec.message());
  return dir;
}

IndexSet first_indices(std::size_t m) {
  IndexSet out(m);
  for (std::size_t i = 0; i < m; ++i) out[i] = i;
  return out;
}

std::string fixed2(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.2f", v);
  return buf;
}

}  // namespace

void validate(const ExperimentConfig& c) {
  validate(c.data);
  if (c.seeds.empty()) throw Error(ErrorKind::Config, "field 'seeds': must be nonempty");
  if (c.data.latent != LatentKind::SingleNodeScm && c.data.latent != LatentKind::MultiNodeScm &&
      c.data.k < 2) {
    throw Error(ErrorKind::Config, "field 'k': invariance training needs k >= 2");
  }
  if (c.batch_size < 2 * c.top_k) {
    throw Error(ErrorKind::Config, "field 'batch_size': must be at least 2 * top_k");
  }
  if (c.steps == 0) throw Error(ErrorKind::Config, "field 'steps': must be >= 1");
  if (c.data.mixing == MixingKind::Polynomial && c.stage1_steps == 0) {
    throw Error(ErrorKind::Config, "field 'stage1_steps': must be >= 1");
  }
  if (!(c.lr > 0.0)) throw Error(ErrorKind::Config, "field 'lr': must be positive");
  if (!(c.lambda >= 0.0)) throw Error(ErrorKind::Config, "field 'lambda': must be >= 0");
  if (c.bandwidth && !(*c.bandwidth > 0.0)) {
    throw Error(ErrorKind::Config, "field 'bandwidth': must be positive");
  }
  if (c.top_k == 0) throw Error(ErrorKind::Config, "field 'top_k': must be >= 1");
}

ExperimentConfig experiment_config_from_json(const std::string& text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::parse_error& e) {
    throw ParseError(e.byte > 0 ? e.byte - 1 : 0, e.what());
  }
  if (!j.is_object()) throw Error(ErrorKind::Config, "config must be a JSON object");
  ExperimentConfig c;
  DatasetSpec& s = c.data;
  for (const auto& [key, v] : j.items()) {
    if (key == "mixing") {
      s.mixing = mixing_kind_from_string(field<std::string>(v, key));
    } else if (key == "latent") {
      s.latent = latent_kind_from_string(field<std::string>(v, key));
    } else if (key == "d") {
      s.d = field<std::size_t>(v, key);
    } else if (key == "k") {
      s.k = field<std::size_t>(v, key);
    } else if (key == "n_train") {
      s.n_train = field<std::size_t>(v, key);
    } else if (key == "n_val") {
      s.n_val = field<std::size_t>(v, key);
    } else if (key == "degree") {
      s.degree = field<std::size_t>(v, key);
    } else if (key == "obs_dim") {
      s.obs_dim = field<std::size_t>(v, key);
    } else if (key == "s_size") {
      s.s_size = field<std::size_t>(v, key);
    } else if (key == "range_lo") {
      s.range_lo = field<double>(v, key);
    } else if (key == "range_hi") {
      s.range_hi = field<double>(v, key);
    } else if (key == "dscm_p") {
      s.dscm_p = field<double>(v, key);
    } else if (key == "edge_prob") {
      s.edge_prob = field<double>(v, key);
    } else if (key == "var_low") {
      s.var_low = field<double>(v, key);
    } else if (key == "var_high") {
      s.var_high = field<double>(v, key);
    } else if (key == "t") {
      s.t = field<std::size_t>(v, key);
    } else if (key == "penalty") {
      try {
        c.penalty = penalty_kind_from_string(field<std::string>(v, key));
      } catch (const Error& e) {
        throw Error(ErrorKind::Config, "field 'penalty': " + std::string(e.what()));
      }
    } else if (key == "lambda") {
      c.lambda = field<double>(v, key);
    } else if (key == "top_k") {
      c.top_k = field<std::size_t>(v, key);
    } else if (key == "bandwidth") {
      if (v.is_null() || (v.is_string() && v.get<std::string>() == "median")) {
        c.bandwidth.reset();
      } else {
        c.bandwidth = field<double>(v, key);
      }
    } else if (key == "seeds") {
      c.seeds = field<std::vector<std::uint64_t>>(v, key);
    } else if (key == "batch_size") {
      c.batch_size = field<std::size_t>(v, key);
    } else if (key == "steps") {
      c.steps = field<std::size_t>(v, key);
    } else if (key == "stage1_steps") {
      c.stage1_steps = field<std::size_t>(v, key);
    } else if (key == "lr") {
      c.lr = field<double>(v, key);
    } else if (key == "stage1_arch") {
      const auto name = field<std::string>(v, key);
      if (name == "linear-polynomial") {
        c.stage1_arch = Stage1Arch::LinearPolynomial;
      } else if (name == "mlp-polynomial") {
        c.stage1_arch = Stage1Arch::MlpPolynomial;
      } else {
        throw Error(ErrorKind::Config, "field 'stage1_arch': expected linear-polynomial or mlp-polynomial");
      }
    } else if (key == "stage1_whiten") {
      c.stage1_whiten = field<bool>(v, key);
    } else if (key == "stage2_arch") {
      const auto name = field<std::string>(v, key);
      if (name == "linear") {
        c.stage2_arch = Stage2Arch::Linear;
      } else if (name == "mlp") {
        c.stage2_arch = Stage2Arch::Mlp;
      } else {
        throw Error(ErrorKind::Config, "field 'stage2_arch': expected linear or mlp");
      }
    } else if (key == "out") {
      c.out = field<std::string>(v, key);
    } else {
      throw Error(ErrorKind::Config, "field '" + key + "': unknown key");
    }
  }
  validate(c);
  return c;
}

ExperimentConfig load_experiment_config(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorKind::Io, "cannot read config " + path.string());
  std::stringstream buf;
  buf << in.rdbuf();
  return experiment_config_from_json(buf.str());
}

std::string to_json(const ExperimentConfig& c) {
  const DatasetSpec& s = c.data;
  json j;
  j["mixing"] = to_string(s.mixing);
  j["latent"] = to_string(s.latent);
  j["d"] = s.d;
  j["k"] = s.k;
  j["n_train"] = s.n_train;
  j["n_val"] = s.n_val;
  j["degree"] = s.degree;
  j["obs_dim"] = s.observation_width();
  j["s_size"] = s.stable_size();
  j["range_lo"] = s.range_lo;
  j["range_hi"] = s.range_hi;
  j["dscm_p"] = s.dscm_p;
  j["edge_prob"] = s.edge_prob;
  j["var_low"] = s.var_low;
  j["var_high"] = s.var_high;
  j["t"] = s.t;
  j["penalty"] = to_string(c.penalty);
  j["lambda"] = c.lambda;
  j["top_k"] = c.top_k;
  j["bandwidth"] = c.bandwidth ? json(*c.bandwidth) : json("median");
  j["seeds"] = c.seeds;
  j["batch_size"] = c.batch_size;
  j["steps"] = c.steps;
  j["stage1_steps"] = c.stage1_steps;
  j["stage1_arch"] = to_string(c.stage1_arch);
  j["stage1_whiten"] = c.stage1_whiten;
  j["stage2_arch"] = to_string(c.stage2_arch);
  j["lr"] = c.lr;
  j["out"] = c.out.string();
  return j.dump(2) + "\n";
}

const char* to_string(Stage1Arch arch) {
  return arch == Stage1Arch::LinearPolynomial ? "linear-polynomial" : "mlp-polynomial";
}

const char* to_string(Stage2Arch arch) { return arch == Stage2Arch::Linear ? "linear" : "mlp"; }

std::string dgp_label(const DatasetSpec& spec) {
  return std::string(to_string(spec.mixing)) + "-" + to_string(spec.latent);
}

DatasetSpec dataset_for_seed(const ExperimentConfig& config, std::uint64_t seed) {
  DatasetSpec spec = config.data;
  spec.seed = seed;
  return spec;
}

TrainConfig penalty_train_config(const ExperimentConfig& c, const DatasetSpec& spec,
                                 std::uint64_t seed) {
  TrainConfig t;
  t.batch_size = c.batch_size;
  t.max_steps = c.steps;
  t.lr0 = c.lr;
  t.seed = derive_seed(seed, kTrainStream);
  t.penalty.kind = c.penalty;
  t.penalty.S_hat = first_indices(spec.stable_size());
  t.penalty.top_k = c.top_k;
  t.penalty.lambda = c.lambda;
  if (c.bandwidth) {
    t.penalty.bandwidth = {*c.bandwidth, false};
  } else if (spec.mixing == MixingKind::Linear) {
    t.penalty.bandwidth = {1.0, true};
  } else {
    t.penalty.bandwidth = {1.0, false};
  }
  return t;
}

TrainConfig stage1_train_config(const ExperimentConfig& c, std::uint64_t seed) {
  TrainConfig t;
  t.batch_size = c.batch_size;
  t.max_steps = c.stage1_steps;
  t.lr0 = c.lr;
  t.seed = derive_seed(derive_seed(seed, kTrainStream), 1);
  t.use_penalty = false;
  t.whiten = c.stage1_whiten;
  return t;
}

Matrix Pipeline::encode(const Matrix& X) const {
  if (stage1) return invariant.encode(stage1->encode(X));
  return invariant.encode(X);
}

Matrix Pipeline::affine_stage(const Matrix& X) const {
  return stage1 ? stage1->encode(X) : invariant.encode(X);
}

Pipeline train_pipeline(const ExperimentConfig& config, const MultiDomainDataset& data,
                        std::uint64_t seed) {
  const std::vector<Matrix> train_X = data.train_X();
  const TrainConfig penalty_cfg = penalty_train_config(config, data.spec, seed);
  Pipeline p;
  p.S_hat = penalty_cfg.penalty.S_hat;
  if (data.spec.mixing == MixingKind::Linear) {
    TrainResult joint = train_linear_joint(train_X, data.spec.d, penalty_cfg);
    joint.model.metadata.extra["penalty"] = to_string(config.penalty);
    p.invariant = std::move(joint.model);
    p.logs.push_back(std::move(joint.log));
    return p;
  }
  const std::size_t n = data.spec.observation_width();
  const Architecture arch = config.stage1_arch == Stage1Arch::LinearPolynomial
                                ? linear_polynomial(n, data.spec.d, data.spec.degree)
                                : mlp_polynomial(n, data.spec.d, data.spec.degree);
  TrainResult s1 = train_stage1(train_X, arch, stage1_train_config(config, seed));
  std::vector<Matrix> encoded;
  encoded.reserve(train_X.size());
  for (const Matrix& x : train_X) encoded.push_back(s1.model.encode(x));
  TrainResult s2 = config.stage2_arch == Stage2Arch::Linear
                       ? train_linear_joint(encoded, data.spec.d, penalty_cfg)
                       : train_stage2(encoded, penalty_cfg);
  s2.model.metadata.extra["penalty"] = to_string(config.penalty);
  p.stage1 = std::move(s1.model);
  p.invariant = std::move(s2.model);
  p.logs.push_back(std::move(s1.log));
  p.logs.push_back(std::move(s2.log));
  return p;
}

EvalReport evaluate_pipeline(const Pipeline& pipeline, const MultiDomainDataset& data,
                             PenaltyKind penalty, std::uint64_t seed) {
  EvalReport report;
  report.keys["dgp"] = dgp_label(data.spec);
  report.keys["penalty"] = to_string(penalty);
  report.keys["d"] = std::to_string(data.spec.d);
  report.keys["k"] = std::to_string(data.domains());
  report.keys["seed"] = std::to_string(seed);
  report.S_hat = pipeline.S_hat;

  const Matrix val_X = data.val_X();
  const Matrix val_Z = data.val_Z();
  const Matrix z_hat = pipeline.encode(val_X);
  R2Options options;
  options.seed = derive_seed(seed, 2);
  const BlockScores scores =
      block_identification(z_hat, val_Z, data.S, data.U, pipeline.S_hat, options);
  report.r2_S = scores.r2_S;
  report.r2_U = scores.r2_U;
  report.affine = affine_fit(pipeline.affine_stage(val_X), val_Z);

  // Per-domain residual: penalty between domain 0 and domain j on held-out rows.
  PenaltyConfig pc;
  pc.kind = penalty;
  pc.S_hat = pipeline.S_hat;
  pc.bandwidth = {1.0, data.spec.mixing == MixingKind::Linear};
  const std::size_t n_val = data.spec.n_val;
  std::vector<Matrix> per_domain;
  for (std::size_t j = 0; j < data.domains(); ++j) {
    per_domain.push_back(z_hat.row_range(j * n_val, (j + 1) * n_val));
  }
  report.domain_penalty.assign(data.domains(), 0.0);
  if (n_val >= pc.top_k) {
    for (std::size_t j = 1; j < data.domains(); ++j) {
      const Matrix pair[2] = {per_domain[0], per_domain[j]};
      report.domain_penalty[j] = total_penalty(pair, pc);
    }
  }
  return report;
}

CellResult run_cell(const ExperimentConfig& config, std::uint64_t seed,
                    const std::optional<std::filesystem::path>& run_dir) {
  const auto start = std::chrono::steady_clock::now();
  const MultiDomainDataset data = generate_dataset(dataset_for_seed(config, seed));
  const Pipeline pipeline = train_pipeline(config, data, seed);
  CellResult result;
  result.report = evaluate_pipeline(pipeline, data, config.penalty, seed);
  if (run_dir) {
    make_dir(*run_dir);
    if (pipeline.stage1) {
      save_checkpoint(*pipeline.stage1, *run_dir / "stage1.ckpt");
      save_checkpoint(pipeline.invariant, *run_dir / "stage2.ckpt");
      pipeline.logs[0].write_csv(*run_dir / "stage1_log.csv");
      pipeline.logs[1].write_csv(*run_dir / "stage2_log.csv");
    } else {
      save_checkpoint(pipeline.invariant, *run_dir / "model.ckpt");
      pipeline.logs[0].write_csv(*run_dir / "train_log.csv");
    }
    write_text(*run_dir / "report.json", to_json(result.report));
  }
  result.wall_seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return result;
}

Scale scale_from_string(const std::string& name) {
  if (name == "smoke") return Scale::Smoke;
  if (name == "desk") return Scale::Desk;
  if (name == "full") return Scale::Full;
  throw Error(ErrorKind::Config, "field 'scale': unknown scale '" + name + "'");
}

const char* to_string(Scale scale) {
  switch (scale) {
    case Scale::Smoke: return "smoke";
    case Scale::Desk: return "desk";
    case Scale::Full: return "full";
  }
  return "?";
}

std::vector<ExperimentConfig> table_grid(const std::string& table_id, Scale scale) {
  ExperimentConfig base;
  switch (scale) {
    case Scale::Smoke:
      base.data.n_train = 400;
      base.data.n_val = 200;
      base.seeds = {0};
      base.batch_size = 256;
      base.steps = 100;
      base.stage1_steps = 100;
      break;
    case Scale::Desk:
      base.data.n_train = 5000;
      base.data.n_val = 1000;
      base.seeds = {0, 1, 2};
      break;
    case Scale::Full:
      base.data.n_train = 10000;
      base.data.n_val = 2000;
      base.seeds = {0, 1, 2, 3, 4};
      break;
  }
  const bool smoke = scale == Scale::Smoke;
  const PenaltyKind penalties[] = {PenaltyKind::MinMax, PenaltyKind::Mmd,
                                   PenaltyKind::MinMaxPlusMmd};
  const LatentKind latents[] = {LatentKind::Independent, LatentKind::Dscm};

  std::vector<ExperimentConfig> grid;
  if (table_id == "linear-main" || table_id == "poly-main") {
    const bool linear = table_id == "linear-main";
    for (LatentKind latent : latents) {
      for (PenaltyKind penalty : penalties) {
        ExperimentConfig c = base;
        c.data.latent = latent;
        c.penalty = penalty;
        c.data.k = 16;
        if (linear) {
          c.data.mixing = MixingKind::Linear;
          c.data.d = smoke ? 8 : 32;
        } else {
          c.data.mixing = MixingKind::Polynomial;
          c.data.d = scale == Scale::Full ? 14 : (smoke ? 4 : 6);
          c.data.degree = scale == Scale::Full ? 3 : 2;
          if (!smoke) c.steps = kPolyStage2Steps;
        }
        grid.push_back(c);
      }
    }
  } else if (table_id == "domains-sweep") {
    std::vector<MixingKind> mixings{MixingKind::Linear};
    if (scale == Scale::Full) mixings.push_back(MixingKind::Polynomial);
    for (MixingKind mixing : mixings) {
      for (std::size_t k : {std::size_t{2}, std::size_t{16}}) {
        ExperimentConfig c = base;
        c.data.mixing = mixing;
        c.data.latent = LatentKind::Dscm;
        c.penalty = PenaltyKind::MinMaxPlusMmd;
        c.data.k = k;
        if (mixing == MixingKind::Linear) {
          c.data.d = smoke ? 8 : 32;
        } else {
          c.data.d = 14;
          c.data.degree = 3;
          c.steps = kPolyStage2Steps;
        }
        grid.push_back(c);
      }
    }
  } else {
    throw Error(ErrorKind::Config,
                "unknown table id '" + table_id + "' (linear-main, poly-main, domains-sweep)");
  }
  return grid;
}

double mean(const std::vector<double>& v) {
  if (v.empty()) return std::nan("");
  double s = 0.0;
  for (double x : v) s += x;
  return s / static_cast<double>(v.size());
}

double standard_error(const std::vector<double>& v) {
  if (v.size() < 2) return 0.0;
  const double m = mean(v);
  double ss = 0.0;
  for (double x : v) ss += (x - m) * (x - m);
  const double n = static_cast<double>(v.size());
  return std::sqrt(ss / (n - 1.0)) / std::sqrt(n);
}

std::string format_pair(const TableRow& row) {
  return "(" + fixed2(mean(row.r2_S)) + "±" + fixed2(standard_error(row.r2_S)) + ", " +
         fixed2(mean(row.r2_U)) + "±" + fixed2(standard_error(row.r2_U)) + ")";
}

std::string table_csv(const std::vector<TableRow>& rows) {
  std::string out = std::string(kTableCsvHeader) + "\n";
  for (const TableRow& r : rows) {
    out += r.mixing + "," + r.latent + "," + r.penalty + "," + std::to_string(r.d) + "," +
           std::to_string(r.k) + "," + std::to_string(r.n) + "," +
           std::to_string(r.r2_S.size()) + "," + format_g17(mean(r.r2_S)) + "," +
           format_g17(standard_error(r.r2_S)) + "," + format_g17(mean(r.r2_U)) + "," +
           format_g17(standard_error(r.r2_U)) + ",\"" + format_pair(r) + "\"\n";
  }
  return out;
}

std::size_t effective_jobs(std::size_t requested) {
  const char* env = std::getenv("INVAE_DETERMINISTIC");
  if (env != nullptr && std::string(env) == "1") return 1;
  return requested == 0 ? 1 : requested;
}

std::vector<TableRow> reproduce_table(const std::string& table_id, Scale scale,
                                      const std::filesystem::path& out, std::size_t jobs) {
  const std::vector<ExperimentConfig> grid = table_grid(table_id, scale);
  struct Task {
    std::size_t cell;
    std::uint64_t seed;
  };
  std::vector<Task> tasks;
  for (std::size_t c = 0; c < grid.size(); ++c) {
    for (std::uint64_t s : grid[c].seeds) tasks.push_back({c, s});
  }
  make_dir(out);
  std::vector<std::optional<CellResult>> results(tasks.size());
  std::vector<std::exception_ptr> errors(tasks.size());
  std::atomic<std::size_t> next{0};

  auto worker = [&]() {
    for (std::size_t i = next++; i < tasks.size(); i = next++) {
      const ExperimentConfig& c = grid[tasks[i].cell];
      const std::filesystem::path dir =
          out / table_id /
          (dgp_label(c.data) + "_" + to_string(c.penalty) + "_k" + std::to_string(c.data.k)) /
          ("seed_" + std::to_string(tasks[i].seed));
      try {
        results[i] = run_cell(c, tasks[i].seed, dir);
      } catch (...) {
        errors[i] = std::current_exception();
      }
    }
  };
  const std::size_t n_threads = std::min(effective_jobs(jobs), tasks.size());
  std::vector<std::thread> threads;
  for (std::size_t t = 1; t < n_threads; ++t) threads.emplace_back(worker);
  worker();
  for (std::thread& t : threads) t.join();
  for (const std::exception_ptr& e : errors) {
    if (e) std::rethrow_exception(e);
  }

  std::vector<TableRow> rows(grid.size());
  for (std::size_t c = 0; c < grid.size(); ++c) {
    rows[c].mixing = to_string(grid[c].data.mixing);
    rows[c].latent = to_string(grid[c].data.latent);
    rows[c].penalty = to_string(grid[c].penalty);
    rows[c].d = grid[c].data.d;
    rows[c].k = grid[c].data.k;
    rows[c].n = grid[c].data.n_train;
  }
  const std::filesystem::path cells_csv = out / "cells.csv";
  std::filesystem::remove(cells_csv);
  for (std::size_t i = 0; i < tasks.size(); ++i) {
    rows[tasks[i].cell].r2_S.push_back(results[i]->report.r2_S);
    rows[tasks[i].cell].r2_U.push_back(results[i]->report.r2_U);
    append_csv_row(cells_csv, results[i]->report);
  }
  write_text(out / (table_id + ".csv"), table_csv(rows));
  return rows;
}

}  // namespace invae

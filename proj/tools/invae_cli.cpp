// invae: generate datasets, train, evaluate, reproduce tables, run theory checks.

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "invae/dataset.hpp"
#include "invae/error.hpp"
#include "invae/eval.hpp"
#include "invae/experiment.hpp"
#include "invae/latentgen.hpp"
#include "invae/models.hpp"
#include "invae/rng.hpp"
#include "invae/theory.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace invae;

namespace {

constexpr int kExitConfig = 2;
constexpr int kExitDivergence = 3;
constexpr int kExitIo = 4;

int exit_code_for(const Error& e) {
  switch (e.kind()) {
    case ErrorKind::Io:
      return kExitIo;
    case ErrorKind::TrainingDiverged:
    case ErrorKind::Numeric:
      return kExitDivergence;
    default:
      return kExitConfig;
  }
}

struct CommonFlags {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::string out;
  std::size_t jobs = 1;
  std::string scale = "desk";
};

void add_common(CLI::App* cmd, CommonFlags& f) {
  cmd->add_option("--config", f.config, "Experiment config (JSON)");
  cmd->add_option("--seed", f.seed, "Seed; overrides the config's seed list");
  cmd->add_option("--out", f.out, "Output directory");
  cmd->add_option("--jobs", f.jobs, "Worker threads")->check(CLI::PositiveNumber);
  cmd->add_option("--scale", f.scale, "desk | full | smoke")
      ->check(CLI::IsMember({"desk", "full", "smoke"}));
}

ExperimentConfig config_from(const CommonFlags& f) {
  ExperimentConfig c = f.config.empty() ? ExperimentConfig{} : load_experiment_config(f.config);
  if (f.seed) c.seeds = {*f.seed};
  if (!f.out.empty()) c.out = f.out;
  return c;
}

// Dataset on disk must describe the data the config asks for.
void check_manifest(const ExperimentConfig& c, const MultiDomainDataset& data) {
  const DatasetSpec& want = c.data;
  const DatasetSpec& have = data.spec;
  auto mismatch = [](const std::string& name, const std::string& a, const std::string& b) {
    throw Error(ErrorKind::Config, "field '" + name + "': config has " + a +
                                       ", dataset manifest has " + b);
  };
  if (want.mixing != have.mixing) mismatch("mixing", to_string(want.mixing), to_string(have.mixing));
  if (want.latent != have.latent) mismatch("latent", to_string(want.latent), to_string(have.latent));
  if (want.d != have.d) mismatch("d", std::to_string(want.d), std::to_string(have.d));
  if (want.observation_width() != have.observation_width()) {
    mismatch("obs_dim", std::to_string(want.observation_width()),
             std::to_string(have.observation_width()));
  }
  const bool boxes = want.latent == LatentKind::Independent || want.latent == LatentKind::Dscm;
  if (boxes && want.k != have.k) mismatch("k", std::to_string(want.k), std::to_string(have.k));
  if (want.mixing == MixingKind::Polynomial && want.degree != have.degree) {
    mismatch("degree", std::to_string(want.degree), std::to_string(have.degree));
  }
  if (want.stable_size() != have.stable_size()) {
    mismatch("s_size", std::to_string(want.stable_size()), std::to_string(have.stable_size()));
  }
}

json theory_report(json inputs, double value, bool pass, json counterexamples = json::array()) {
  return {{"inputs", std::move(inputs)},
          {"value", value},
          {"pass", pass},
          {"counterexamples", std::move(counterexamples)}};
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Multi-domain causal representation learning under distributional invariances"};
  app.require_subcommand(1);
  app.set_help_all_flag("--help-all", "Help for every subcommand");

  // generate
  CommonFlags gen;
  auto* generate = app.add_subcommand("generate", "Write a multi-domain dataset");
  add_common(generate, gen);

  // train
  CommonFlags tr;
  std::string train_dataset;
  auto* train = app.add_subcommand("train", "Train on a dataset directory");
  add_common(train, tr);
  train->add_option("--dataset", train_dataset, "Dataset directory")->required();

  // evaluate
  CommonFlags ev;
  std::string eval_ckpt, eval_stage1, eval_dataset;
  auto* evaluate = app.add_subcommand("evaluate", "Score a checkpoint on a dataset");
  add_common(evaluate, ev);
  evaluate->add_option("--checkpoint", eval_ckpt, "Invariant (joint or Stage-2) checkpoint")
      ->required();
  evaluate->add_option("--stage1", eval_stage1, "Stage-1 checkpoint for two-stage pipelines");
  evaluate->add_option("--dataset", eval_dataset, "Dataset directory")->required();

  // run
  CommonFlags rn;
  auto* run = app.add_subcommand("run", "Generate, train and evaluate every seed of a config");
  add_common(run, rn);

  // aggregate
  std::string agg_csv;
  auto* aggregate = app.add_subcommand("aggregate", "Mean ± standard error over seeds");
  aggregate->add_option("--csv", agg_csv, "Per-seed evaluation CSV")->required();

  // reproduce
  CommonFlags rp;
  std::string table_id;
  auto* reproduce = app.add_subcommand("reproduce", "Run a table's grid");
  add_common(reproduce, rp);
  reproduce->add_option("--table", table_id, "linear-main | poly-main | domains-sweep")
      ->required();

  // theory
  auto* theory = app.add_subcommand("theory", "Identification calculators and checks");
  theory->require_subcommand(1);

  std::size_t tb_d = 4;
  double tb_delta = 0.1;
  auto* t_bound = theory->add_subcommand("t-bound", "Interventions per node for multi-node coverage");
  t_bound->add_option("--d", tb_d, "Number of unstable nodes");
  t_bound->add_option("--delta", tb_delta, "Failure probability");

  theory::GammaParams gp;
  auto* gamma = theory->add_subcommand("gamma-bound", "Domains needed for Γ^c identification");
  gamma->add_option("--s", gp.s, "Parameter dimension");
  gamma->add_option("--theta-max", gp.theta_max, "Parameter radius");
  gamma->add_option("--L", gp.L, "Lipschitz constant");
  gamma->add_option("--eta", gp.eta, "Gap");
  gamma->add_option("--epsilon", gp.epsilon, "Support variability width");
  gamma->add_option("--iota", gp.iota, "Support coverage width");
  gamma->add_option("--c1", gp.c1, "Coverage constant");
  gamma->add_option("--c2", gp.c2, "Variability constant");
  gamma->add_option("--l", gp.l, "Coverage exponent");
  gamma->add_option("--r", gp.r, "Variability exponent");
  gamma->add_option("--delta", gp.delta, "Failure probability");
  gamma->add_option("--dimension", gp.dimension, "Latent dimension of the general form");

  std::size_t lm_u = 3, lm_t = 5, lm_trials = 100000;
  std::uint64_t lm_seed = 0;
  auto* lemma = theory->add_subcommand("lemma-mc", "Monte Carlo of good-intervention coverage");
  lemma->add_option("--u", lm_u, "|U|");
  lemma->add_option("--t", lm_t, "Interventions per node");
  lemma->add_option("--trials", lm_trials, "Trials");
  lemma->add_option("--seed", lm_seed, "Seed");

  double ip_alpha = 0.2, ip_beta = 0.8, ip_kappa = 0.2;
  std::size_t ip_draws = 100000;
  std::uint64_t ip_seed = 0;
  auto* interval = theory->add_subcommand("interval-probs", "Random interval support probabilities");
  interval->add_option("--alpha", ip_alpha, "Lower end");
  interval->add_option("--beta", ip_beta, "Upper end");
  interval->add_option("--kappa", ip_kappa, "Coverage margin");
  interval->add_option("--draws", ip_draws, "Draws");
  interval->add_option("--seed", ip_seed, "Seed");

  std::size_t or_d = 3, or_instances = 20, or_grid = 50, or_k = 4;
  std::uint64_t or_seed = 0;
  auto* orthant = theory->add_subcommand("orthant-oracle", "Brute-force support invariance check");
  orthant->add_option("--d", or_d, "Latent dimension")->check(CLI::Range(2, 4));
  orthant->add_option("--k", or_k, "Domains per instance");
  orthant->add_option("--instances", or_instances, "Random instances");
  orthant->add_option("--grid-res", or_grid, "Simplex grid resolution");
  orthant->add_option("--seed", or_seed, "Seed");

  double ex_theta = 0.0, ex_a = 0.25, ex_b = 0.3125;
  auto* example = theory->add_subcommand("gamma-example", "Worked Γ example minimum");
  example->add_option("--theta", ex_theta, "θ");
  example->add_option("--a", ex_a, "Interval start");
  example->add_option("--b", ex_b, "Interval end");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kExitConfig;
  }

  try {
    if (*generate) {
      const ExperimentConfig c = config_from(gen);
      validate(c);
      const std::uint64_t seed = c.seeds.front();
      const fs::path out = gen.out.empty() ? c.out / ("data_seed_" + std::to_string(seed)) : fs::path(gen.out);
      const MultiDomainDataset data = generate_dataset(dataset_for_seed(c, seed));
      write_dataset(data, out);
      std::cout << json{{"dataset", out.string()},
                        {"domains", data.domains()},
                        {"obs_dim", data.spec.observation_width()}}
                       .dump()
                << "\n";
    } else if (*train) {
      const ExperimentConfig c = config_from(tr);
      validate(c);
      const MultiDomainDataset data = read_dataset(train_dataset);
      check_manifest(c, data);
      const std::uint64_t seed = c.seeds.front();
      const fs::path out = tr.out.empty() ? c.out / ("seed_" + std::to_string(seed)) : fs::path(tr.out);
      std::error_code ec;
      fs::create_directories(out, ec);
      if (ec) throw Error(ErrorKind::Io, "cannot create " + out.string());
      const Pipeline p = train_pipeline(c, data, seed);
      json summary;
      if (p.stage1) {
        save_checkpoint(*p.stage1, out / "stage1.ckpt");
        save_checkpoint(p.invariant, out / "stage2.ckpt");
        p.logs[0].write_csv(out / "stage1_log.csv");
        p.logs[1].write_csv(out / "stage2_log.csv");
        summary["checkpoints"] = {(out / "stage1.ckpt").string(), (out / "stage2.ckpt").string()};
      } else {
        save_checkpoint(p.invariant, out / "model.ckpt");
        p.logs[0].write_csv(out / "train_log.csv");
        summary["checkpoints"] = {(out / "model.ckpt").string()};
      }
      summary["final_recon"] = p.invariant.metadata.final_recon;
      summary["final_penalty"] = p.invariant.metadata.final_penalty;
      std::cout << summary.dump() << "\n";
    } else if (*evaluate) {
      const MultiDomainDataset data = read_dataset(eval_dataset);
      Pipeline p;
      p.invariant = load_checkpoint(eval_ckpt);
      if (!eval_stage1.empty()) p.stage1 = load_checkpoint(eval_stage1);
      const std::size_t expected_in = p.stage1 ? p.stage1->arch().input_dim : p.invariant.arch().input_dim;
      if (expected_in != data.spec.observation_width()) {
        throw Error(ErrorKind::Config, "checkpoint input width " + std::to_string(expected_in) +
                                           " does not match dataset width " +
                                           std::to_string(data.spec.observation_width()));
      }
      for (std::size_t i = 0; i < data.S.size(); ++i) p.S_hat.push_back(i);
      const auto& extra = p.invariant.metadata.extra;
      const PenaltyKind penalty = extra.count("penalty") ? penalty_kind_from_string(extra.at("penalty"))
                                                         : PenaltyKind::MinMaxPlusMmd;
      const std::uint64_t seed = ev.seed ? *ev.seed : p.invariant.metadata.seed;
      const EvalReport report = evaluate_pipeline(p, data, penalty, seed);
      const fs::path out = ev.out.empty() ? fs::path(eval_ckpt).parent_path() : fs::path(ev.out);
      std::error_code ec;
      fs::create_directories(out, ec);
      if (ec) throw Error(ErrorKind::Io, "cannot create " + out.string());
      std::ofstream(out / "report.json") << to_json(report);
      append_csv_row(out / "eval.csv", report);
      std::cout << to_json(report);
    } else if (*run) {
      const ExperimentConfig c = config_from(rn);
      validate(c);
      TableRow row;
      row.mixing = to_string(c.data.mixing);
      row.latent = to_string(c.data.latent);
      row.penalty = to_string(c.penalty);
      row.d = c.data.d;
      row.k = c.data.k;
      row.n = c.data.n_train;
      for (std::uint64_t seed : c.seeds) {
        const CellResult r = run_cell(c, seed, c.out / ("seed_" + std::to_string(seed)));
        append_csv_row(c.out / "eval.csv", r.report);
        row.r2_S.push_back(r.report.r2_S);
        row.r2_U.push_back(r.report.r2_U);
        std::cerr << "seed " << seed << ": r2_S " << r.report.r2_S << " r2_U " << r.report.r2_U
                  << " (" << r.wall_seconds << " s)\n";
      }
      std::cout << table_csv({row});
    } else if (*aggregate) {
      std::ifstream in(agg_csv);
      if (!in) throw Error(ErrorKind::Io, "cannot read " + agg_csv);
      std::string line;
      std::getline(in, line);
      if (line != kEvalCsvHeader) throw Error(ErrorKind::Schema, "unexpected CSV header: " + line);
      std::vector<std::string> order;
      std::map<std::string, TableRow> rows;
      while (std::getline(in, line)) {
        if (line.empty()) continue;
        std::vector<std::string> f;
        std::stringstream ss(line);
        for (std::string cell; std::getline(ss, cell, ',');) f.push_back(cell);
        if (f.size() != 9) throw Error(ErrorKind::Schema, "malformed row: " + line);
        const std::string key = f[0] + "," + f[1] + "," + f[2] + "," + f[3];
        if (!rows.count(key)) order.push_back(key);
        TableRow& r = rows[key];
        const auto dash = f[0].find('-');
        r.mixing = f[0].substr(0, dash);
        r.latent = f[0].substr(dash + 1);
        r.penalty = f[1];
        r.d = std::stoul(f[2]);
        r.k = std::stoul(f[3]);
        r.r2_S.push_back(std::stod(f[5]));
        r.r2_U.push_back(std::stod(f[6]));
      }
      std::vector<TableRow> ordered;
      for (const auto& k : order) ordered.push_back(rows[k]);
      std::cout << table_csv(ordered);
    } else if (*reproduce) {
      const Scale scale = scale_from_string(rp.scale);
      const fs::path out = rp.out.empty() ? fs::path("runs") / rp.scale : fs::path(rp.out);
      const auto rows = reproduce_table(table_id, scale, out, rp.jobs);
      std::cout << table_csv(rows);
    } else if (*theory) {
      json report;
      if (*t_bound) {
        const double t = theory::multinode_t_bound(tb_d, tb_delta);
        report = theory_report({{"d", tb_d}, {"delta", tb_delta}}, t, std::isfinite(t));
        report["t_ceil"] = std::ceil(t);
      } else if (*gamma) {
        const double v = theory::gamma_domain_bound(gp);
        report = theory_report({{"s", gp.s}, {"theta_max", gp.theta_max}, {"L", gp.L},
                                {"eta", gp.eta}, {"epsilon", gp.epsilon}, {"iota", gp.iota},
                                {"c1", gp.c1}, {"c2", gp.c2}, {"l", gp.l}, {"r", gp.r},
                                {"delta", gp.delta}, {"dimension", gp.dimension}},
                               v, std::isfinite(v));
      } else if (*lemma) {
        const double p = theory::good_intervention_coverage_mc(lm_u, lm_t, lm_trials, lm_seed);
        const double floor = theory::good_intervention_union_bound(lm_u, lm_t);
        report = theory_report({{"u", lm_u}, {"t", lm_t}, {"trials", lm_trials}, {"seed", lm_seed}},
                               p, p >= floor);
        report["union_bound"] = floor;
      } else if (*interval) {
        const auto mc = theory::interval_probabilities_mc(ip_alpha, ip_beta, ip_kappa, ip_draws, ip_seed);
        const auto ex = theory::interval_probabilities_exact(ip_alpha, ip_beta, ip_kappa);
        const bool pass = std::abs(mc.within - ex.within) <= 0.01 && std::abs(mc.covers - ex.covers) <= 0.005;
        report = theory_report({{"alpha", ip_alpha}, {"beta", ip_beta}, {"kappa", ip_kappa},
                                {"draws", ip_draws}, {"seed", ip_seed}},
                               mc.within, pass);
        report["within"] = {{"empirical", mc.within}, {"exact", ex.within}};
        report["covers"] = {{"empirical", mc.covers}, {"exact", ex.covers}};
      } else if (*orthant) {
        json failures = json::array();
        std::size_t passed = 0, redrawn = 0;
        IndexSet S, U;
        for (std::size_t i = 0; i < or_d; ++i) (i < or_d / 2 ? S : U).push_back(i);
        for (std::size_t inst = 0; inst < or_instances; ++inst) {
          // Draw until the instance meets the variability hypothesis.
          std::vector<SupportBox> boxes;
          for (std::uint64_t attempt = 0;; ++attempt) {
            if (attempt == 1000) {
              throw Error(ErrorKind::Precondition, "no instance with a variability certificate");
            }
            boxes = sample_support_boxes(or_d, S, or_k, -5.0, 5.0,
                                         derive_seed(derive_seed(or_seed, inst), attempt));
            if (check_support_variability(boxes, U)) break;
            ++redrawn;
          }
          std::vector<theory::Support> supports(boxes.begin(), boxes.end());
          try {
            const auto r = theory::positive_orthant_oracle(supports, S, U, or_grid, 1e-6);
            if (r.pass) {
              ++passed;
            } else {
              failures.push_back({{"instance", inst}, {"directions", r.counterexamples}});
            }
          } catch (const Error& e) {
            if (e.kind() != ErrorKind::Precondition) throw;
            failures.push_back({{"instance", inst}, {"precondition", e.what()}});
          }
        }
        report = theory_report({{"d", or_d}, {"k", or_k}, {"instances", or_instances},
                                {"grid_res", or_grid}, {"seed", or_seed}},
                               static_cast<double>(passed), passed == or_instances, failures);
        report["redrawn"] = redrawn;
      } else if (*example) {
        const double v = theory::gamma_example_min(ex_theta, ex_a, ex_b);
        report = theory_report({{"theta", ex_theta}, {"a", ex_a}, {"b", ex_b}}, v, std::isfinite(v));
      }
      std::cout << report.dump(2) << "\n";
    }
  } catch (const Error& e) {
    std::cerr << "invae: " << to_string(e.kind()) << ": " << e.what() << "\n";
    return exit_code_for(e);
  } catch (const std::exception& e) {
    std::cerr << "invae: " << e.what() << "\n";
    return kExitConfig;
  }
  return 0;
}

#include "invae/eval.hpp"

#include <cmath>
#include <fstream>
#include <sstream>

#include <nlohmann/json.hpp>

#include "invae/error.hpp"
#include "invae/linalg.hpp"
#include "invae/rng.hpp"

namespace invae {
namespace {

Matrix with_intercept(const Matrix& x, std::span<const std::size_t> rows) {
  Matrix out(rows.size(), x.cols() + 1);
  for (std::size_t i = 0; i < rows.size(); ++i) {
    out(i, 0) = 1.0;
    for (std::size_t c = 0; c < x.cols(); ++c) out(i, c + 1) = x(rows[i], c);
  }
  return out;
}

double r2_score(const Matrix& pred, const Matrix& truth) {
  double total = 0.0;
  for (std::size_t c = 0; c < truth.cols(); ++c) {
    double mean = 0.0;
    for (std::size_t r = 0; r < truth.rows(); ++r) mean += truth(r, c);
    mean /= static_cast<double>(truth.rows());
    double sse = 0.0;
    double sst = 0.0;
    for (std::size_t r = 0; r < truth.rows(); ++r) {
      const double e = truth(r, c) - pred(r, c);
      const double t = truth(r, c) - mean;
      sse += e * e;
      sst += t * t;
    }
    if (!(sst > 0.0)) {
      throw Error(ErrorKind::DegenerateTarget, "target column " + std::to_string(c) +
                                                   " is constant on the scoring rows");
    }
    total += 1.0 - sse / sst;
  }
  return total / static_cast<double>(truth.cols());
}

std::string fmt(double v) {
  std::ostringstream os;
  os.precision(17);
  os << v;
  return os.str();
}

}  // namespace

R2Result linear_r2_detailed(const Matrix& features, const Matrix& targets, R2Options options) {
  const std::size_t n = features.rows();
  if (targets.rows() != n) throw Error(ErrorKind::Shape, "linear_r2: row counts differ");
  if (targets.cols() == 0) throw Error(ErrorKind::InvalidArgument, "linear_r2: no targets");
  if (n <= features.cols() + 1) {
    throw Error(ErrorKind::InvalidArgument, "linear_r2 needs more rows than features + 1");
  }
  for (std::size_t c = 0; c < targets.cols(); ++c) {
    bool constant = true;
    for (std::size_t r = 1; r < n && constant; ++r) constant = targets(r, c) == targets(0, c);
    if (constant) {
      throw Error(ErrorKind::DegenerateTarget, "target column " + std::to_string(c) + " is constant");
    }
  }

  std::vector<std::size_t> train_rows;
  std::vector<std::size_t> test_rows;
  if (options.split) {
    const auto perm = permutation(n, options.seed);
    const auto n_test = static_cast<std::size_t>(std::llround(options.test_fraction * n));
    if (n_test == 0 || n - n_test <= features.cols() + 1) {
      throw Error(ErrorKind::InvalidArgument, "linear_r2: split leaves too few rows");
    }
    train_rows.assign(perm.begin(), perm.end() - static_cast<std::ptrdiff_t>(n_test));
    test_rows.assign(perm.end() - static_cast<std::ptrdiff_t>(n_test), perm.end());
  } else {
    train_rows.resize(n);
    for (std::size_t i = 0; i < n; ++i) train_rows[i] = i;
    test_rows = train_rows;
  }

  const auto fit = linalg::lstsq(with_intercept(features, train_rows),
                                 targets.select_rows(train_rows));
  const Matrix pred = matmul(with_intercept(features, test_rows), fit.coef);
  return {r2_score(pred, targets.select_rows(test_rows)), fit.rank_deficient};
}

double linear_r2(const Matrix& features, const Matrix& targets, R2Options options) {
  return linear_r2_detailed(features, targets, options).r2;
}

BlockScores block_identification(const Matrix& z_hat, const Matrix& z, const IndexSet& S,
                                 const IndexSet& U, const IndexSet& S_hat, R2Options options) {
  if (z_hat.rows() != z.rows()) throw Error(ErrorKind::Shape, "block_identification: row mismatch");
  if (S_hat.empty() || S.empty()) {
    throw Error(ErrorKind::InvalidArgument, "block_identification needs nonempty S and S_hat");
  }
  const Matrix features = z_hat.select_columns(S_hat);
  BlockScores scores;
  scores.r2_S = linear_r2(features, z.select_columns(S), options);
  if (!U.empty()) scores.r2_U = linear_r2(features, z.select_columns(U), options);
  return scores;
}

AffineFit affine_fit(const Matrix& z_hat, const Matrix& z) {
  if (z_hat.rows() != z.rows()) throw Error(ErrorKind::Shape, "affine_fit: row mismatch");
  const std::size_t n = z.rows();
  if (n <= z.cols() + 1) throw Error(ErrorKind::InvalidArgument, "affine_fit needs n > d + 1");
  std::vector<std::size_t> rows(n);
  for (std::size_t i = 0; i < n; ++i) rows[i] = i;
  const Matrix design = with_intercept(z, rows);
  const auto fit = linalg::lstsq(design, z_hat);  // (d+1) × d_hat
  AffineFit out;
  out.rank_deficient = fit.rank_deficient;
  out.A = Matrix(z_hat.cols(), z.cols());
  out.c.assign(z_hat.cols(), 0.0);
  for (std::size_t j = 0; j < z_hat.cols(); ++j) {
    out.c[j] = fit.coef(0, j);
    for (std::size_t i = 0; i < z.cols(); ++i) out.A(j, i) = fit.coef(i + 1, j);
  }
  out.fit_r2 = r2_score(matmul(design, fit.coef), z_hat);
  out.cond = linalg::condition_number(out.A);
  return out;
}

SelectionResult select_S_hat(std::size_t start_size,
                             const std::function<SearchTrial(const IndexSet&)>& train_fn,
                             double feasibility_tol, double recon_tol) {
  if (!(feasibility_tol > 0.0)) {
    throw Error(ErrorKind::InvalidArgument, "feasibility_tol must be positive");
  }
  SelectionResult result;
  for (std::size_t m = start_size; m >= 1; --m) {
    IndexSet candidate(m);
    for (std::size_t i = 0; i < m; ++i) candidate[i] = i;
    const SearchTrial trial = train_fn(candidate);
    result.trials.emplace_back(m, trial);
    if (trial.recon <= recon_tol && trial.penalty <= feasibility_tol) {
      result.S_hat = std::move(candidate);
      return result;
    }
  }
  result.infeasible = true;
  return result;
}

std::string to_json(const EvalReport& r) {
  nlohmann::json j;
  j["keys"] = r.keys;
  j["r2_S"] = r.r2_S;
  if (std::isfinite(r.r2_U)) {
    j["r2_U"] = r.r2_U;
  } else {
    j["r2_U"] = nullptr;
  }
  j["S_hat"] = r.S_hat;
  j["domain_penalty"] = r.domain_penalty;
  if (r.affine) {
    std::vector<std::vector<double>> rows;
    for (std::size_t i = 0; i < r.affine->A.rows(); ++i) {
      const auto row = r.affine->A.row(i);
      rows.emplace_back(row.begin(), row.end());
    }
    j["affine"] = {{"A", rows},
                   {"c", r.affine->c},
                   {"fit_r2", r.affine->fit_r2},
                   {"cond", std::isfinite(r.affine->cond) ? nlohmann::json(r.affine->cond)
                                                          : nlohmann::json(nullptr)},
                   {"rank_deficient", r.affine->rank_deficient}};
  }
  return j.dump(2) + "\n";
}

std::string csv_row(const EvalReport& r) {
  auto key = [&](const char* name) {
    const auto it = r.keys.find(name);
    return it == r.keys.end() ? std::string() : it->second;
  };
  std::string row = key("dgp") + "," + key("penalty") + "," + key("d") + "," + key("k") + "," +
                    key("seed") + "," + fmt(r.r2_S) + "," + fmt(r.r2_U) + ",";
  if (r.affine) {
    row += fmt(r.affine->fit_r2) + "," + fmt(r.affine->cond);
  } else {
    row += ",";
  }
  return row;
}

void append_csv_row(const std::filesystem::path& path, const EvalReport& report) {
  std::error_code ec;
  const bool fresh = !std::filesystem::exists(path, ec) || std::filesystem::file_size(path, ec) == 0;
  std::ofstream out(path, std::ios::app);
  if (!out) throw Error(ErrorKind::Io, "cannot append to " + path.string());
  if (fresh) out << kEvalCsvHeader << '\n';
  out << csv_row(report) << '\n';
  if (!out) throw Error(ErrorKind::Io, "write failed for " + path.string());
}

}  // namespace invae

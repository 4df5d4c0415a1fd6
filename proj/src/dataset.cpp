#include "invae/dataset.hpp"

#include <charconv>
#include <fstream>
#include <sstream>

#include <nlohmann/json.hpp>

#include "invae/error.hpp"
#include "invae/rng.hpp"

namespace invae {
namespace {

using nlohmann::json;

namespace tag {
constexpr std::uint64_t kMixing = 1;
constexpr std::uint64_t kBoxes = 2;
constexpr std::uint64_t kStable = 3;
constexpr std::uint64_t kDag = 4;
constexpr std::uint64_t kSchedule = 5;
constexpr std::uint64_t kDomain = 100;
constexpr std::uint64_t kDynamic = 10000;
}  // namespace tag

std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorKind::Io, "cannot read " + path.string());
  std::stringstream buf;
  buf << in.rdbuf();
  return buf.str();
}

void write_file(const std::filesystem::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error(ErrorKind::Io, "cannot write " + path.string());
  out << text;
  if (!out) throw Error(ErrorKind::Io, "write failed for " + path.string());
}

json parse_json(const std::string& text) {
  try {
    return json::parse(text);
  } catch (const json::parse_error& e) {
    throw ParseError(e.byte > 0 ? e.byte - 1 : 0, e.what());
  }
}

std::string domain_file(std::size_t j, const char* what) {
  return "domain_" + std::to_string(j) + "_" + what + ".csv";
}

Matrix rows_of(const Matrix& m, std::size_t begin, std::size_t end) { return m.row_range(begin, end); }

}  // namespace

const char* to_string(MixingKind kind) {
  return kind == MixingKind::Linear ? "linear" : "polynomial";
}

const char* to_string(LatentKind kind) {
  switch (kind) {
    case LatentKind::Independent: return "independent";
    case LatentKind::Dscm: return "dscm";
    case LatentKind::SingleNodeScm: return "single-node-scm";
    case LatentKind::MultiNodeScm: return "multi-node-scm";
  }
  return "?";
}

MixingKind mixing_kind_from_string(const std::string& name) {
  if (name == "linear") return MixingKind::Linear;
  if (name == "polynomial") return MixingKind::Polynomial;
  throw Error(ErrorKind::Config, "unknown mixing '" + name + "'");
}

LatentKind latent_kind_from_string(const std::string& name) {
  for (LatentKind k : {LatentKind::Independent, LatentKind::Dscm, LatentKind::SingleNodeScm,
                       LatentKind::MultiNodeScm}) {
    if (name == to_string(k)) return k;
  }
  throw Error(ErrorKind::Config, "unknown latent distribution '" + name + "'");
}

std::size_t DatasetSpec::observation_width() const {
  if (obs_dim != 0) return obs_dim;
  return mixing == MixingKind::Linear ? 2 * d : 200;
}

std::size_t DatasetSpec::stable_size() const { return s_size != 0 ? s_size : d / 2; }

void validate(const DatasetSpec& s) {
  auto fail = [](const std::string& field, const std::string& why) {
    throw Error(ErrorKind::Config, "field '" + field + "': " + why);
  };
  if (s.d == 0) fail("d", "must be >= 1");
  if (s.n_train == 0) fail("n_train", "must be >= 1");
  if (s.stable_size() > s.d) fail("s_size", "exceeds d");
  if (s.stable_size() == 0) fail("s_size", "must be >= 1");
  if (s.mixing == MixingKind::Polynomial && s.degree == 0) fail("degree", "must be >= 1");
  if (s.mixing == MixingKind::Linear && s.observation_width() < s.d) {
    fail("obs_dim", "linear mixing needs obs_dim >= d");
  }
  if (s.latent == LatentKind::Independent || s.latent == LatentKind::Dscm) {
    if (s.k == 0) fail("k", "must be >= 1");
    if (!(s.range_lo < s.range_hi)) fail("range_lo", "must be below range_hi");
  }
  if (s.latent == LatentKind::Dscm && 2 * s.stable_size() != s.d) {
    fail("s_size", "dynamic SCM pairs S with U and needs |S| = |U|");
  }
  if (s.latent == LatentKind::Dscm && !(s.dscm_p >= 0.0 && s.dscm_p <= 1.0)) {
    fail("dscm_p", "must be a probability");
  }
  if (s.latent == LatentKind::MultiNodeScm && s.t == 0) fail("t", "must be >= 1");
}

std::vector<Matrix> MultiDomainDataset::train_X() const {
  std::vector<Matrix> out;
  for (const Matrix& m : X) out.push_back(rows_of(m, 0, spec.n_train));
  return out;
}

std::vector<Matrix> MultiDomainDataset::train_Z() const {
  std::vector<Matrix> out;
  for (const Matrix& m : Z) out.push_back(rows_of(m, 0, spec.n_train));
  return out;
}

Matrix MultiDomainDataset::val_X() const {
  std::vector<Matrix> parts;
  for (const Matrix& m : X) parts.push_back(rows_of(m, spec.n_train, m.rows()));
  return vstack(parts);
}

Matrix MultiDomainDataset::val_Z() const {
  std::vector<Matrix> parts;
  for (const Matrix& m : Z) parts.push_back(rows_of(m, spec.n_train, m.rows()));
  return vstack(parts);
}

MultiDomainDataset generate_dataset(const DatasetSpec& spec) {
  validate(spec);
  MultiDomainDataset data;
  data.spec = spec;
  const std::size_t d = spec.d;
  const std::size_t rows = spec.n_train + spec.n_val;
  const std::size_t s_size = spec.stable_size();
  for (std::size_t i = 0; i < d; ++i) (i < s_size ? data.S : data.U).push_back(i);

  const std::size_t n = spec.observation_width();
  const std::uint64_t mix_seed = derive_seed(spec.seed, tag::kMixing);
  if (spec.mixing == MixingKind::Linear) {
    data.mixing = make_linear_mixing(d, n, mix_seed);
  } else {
    const bool feasible = n >= monomial_dim(d, spec.degree);
    data.mixing = make_random_mixing(d, n, spec.degree, mix_seed,
                                     feasible ? RankPolicy::Strict : RankPolicy::AllowDeficient);
  }

  if (spec.latent == LatentKind::Independent || spec.latent == LatentKind::Dscm) {
    data.boxes = sample_support_boxes(d, data.S, spec.k, spec.range_lo, spec.range_hi,
                                      derive_seed(spec.seed, tag::kBoxes));
    SupportBox unit{std::vector<double>(s_size, 0.0), std::vector<double>(s_size, 1.0)};
    const Matrix stable = sample_box(unit, rows, derive_seed(spec.seed, tag::kStable)).Z;
    for (std::size_t j = 0; j < spec.k; ++j) {
      LatentBatch batch =
          sample_box(data.boxes[j], rows, derive_seed(spec.seed, tag::kDomain + j), j);
      for (std::size_t r = 0; r < rows; ++r) {
        for (std::size_t c = 0; c < s_size; ++c) batch.Z(r, data.S[c]) = stable(r, c);
      }
      if (spec.latent == LatentKind::Dscm) {
        batch = apply_dynamic_scm(batch, data.S, data.U, spec.dscm_p,
                                  derive_seed(spec.seed, tag::kDynamic + j));
      }
      data.Z.push_back(std::move(batch.Z));
    }
  } else {
    DagOptions options;
    options.require_two_terminal_in_u = spec.latent == LatentKind::MultiNodeScm;
    data.scm = build_random_dag(d, s_size, spec.edge_prob, derive_seed(spec.seed, tag::kDag),
                                options);
    data.S = data.scm->S;
    data.U = data.scm->U;
    const std::uint64_t sched_seed = derive_seed(spec.seed, tag::kSchedule);
    data.schedule =
        spec.latent == LatentKind::SingleNodeScm
            ? make_single_node_schedule(*data.scm, spec.var_low, spec.var_high, sched_seed)
            : make_multinode_schedule(*data.scm, spec.t, spec.var_low, spec.var_high, sched_seed);
    data.spec.k = data.schedule->domains.size();
    const std::uint64_t stable_seed = derive_seed(spec.seed, tag::kStable);
    for (std::size_t j = 0; j < data.schedule->domains.size(); ++j) {
      data.Z.push_back(sample_scm_coupled(*data.scm, data.schedule->domains[j], rows,
                                          derive_seed(spec.seed, tag::kDomain + j), stable_seed, j)
                           .Z);
    }
  }
  for (const Matrix& z : data.Z) data.X.push_back(apply_mixing(data.mixing, z));
  return data;
}

std::string format_g17(double v) {
  char buf[32];
  const auto res = std::to_chars(buf, buf + sizeof(buf), v, std::chars_format::general, 17);
  return std::string(buf, res.ptr);
}

void write_csv_matrix(const Matrix& m, const std::filesystem::path& path) {
  std::string text;
  text.reserve(m.size() * 24);
  for (std::size_t r = 0; r < m.rows(); ++r) {
    for (std::size_t c = 0; c < m.cols(); ++c) {
      if (c > 0) text += ',';
      text += format_g17(m(r, c));
    }
    text += '\n';
  }
  write_file(path, text);
}

Matrix parse_csv_matrix(const std::string& text) {
  std::vector<double> values;
  std::size_t cols = 0;
  std::size_t rows = 0;
  std::size_t pos = 0;
  const std::size_t len = text.size();
  while (pos < len) {
    if (text[pos] == '\n') {  // blank line
      ++pos;
      continue;
    }
    std::size_t row_cols = 0;
    const std::size_t row_start = pos;
    while (true) {
      double v = 0.0;
      const auto res = std::from_chars(text.data() + pos, text.data() + len, v);
      if (res.ec != std::errc()) throw ParseError(pos, "expected a number");
      pos = static_cast<std::size_t>(res.ptr - text.data());
      values.push_back(v);
      ++row_cols;
      if (pos < len && text[pos] == '\r') ++pos;
      if (pos >= len || text[pos] == '\n') {
        if (pos < len) ++pos;
        break;
      }
      if (text[pos] != ',') throw ParseError(pos, "expected ',' or end of line");
      ++pos;
    }
    if (rows == 0) {
      cols = row_cols;
    } else if (row_cols != cols) {
      throw ParseError(row_start, "row " + std::to_string(rows) + " has " +
                                      std::to_string(row_cols) + " values, expected " +
                                      std::to_string(cols));
    }
    ++rows;
  }
  return Matrix(rows, cols, std::move(values));
}

Matrix read_csv_matrix(const std::filesystem::path& path) {
  return parse_csv_matrix(read_file(path));
}

void write_dataset(const MultiDomainDataset& data, const std::filesystem::path& dir) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw Error(ErrorKind::Io, "cannot create " + dir.string() + ": " + ec.message());
  const DatasetSpec& s = data.spec;

  json m;
  m["format"] = "invae-dataset";
  m["version"] = 1;
  m["dgp"] = {{"mixing", to_string(s.mixing)}, {"latent", to_string(s.latent)}};
  m["d"] = s.d;
  m["k"] = data.domains();
  m["n_train"] = s.n_train;
  m["n_val"] = s.n_val;
  m["degree"] = s.degree;
  m["obs_dim"] = s.observation_width();
  m["S"] = data.S;
  m["U"] = data.U;
  m["params"] = {{"range_lo", s.range_lo}, {"range_hi", s.range_hi}, {"dscm_p", s.dscm_p},
                 {"edge_prob", s.edge_prob}, {"var_low", s.var_low}, {"var_high", s.var_high},
                 {"t", s.t}};
  m["seeds"] = {{"dataset", s.seed}, {"mixing", data.mixing.seed}};
  m["mixing"] = "mixing.json";
  json boxes = json::array();
  for (const auto& b : data.boxes) boxes.push_back({{"lo", b.lo}, {"hi", b.hi}});
  m["boxes"] = boxes;
  if (data.scm) {
    const ScmSpec& scm = *data.scm;
    json adj = json::array();
    for (const auto& row : scm.adjacency) {
      std::vector<int> bits(row.begin(), row.end());
      adj.push_back(bits);
    }
    m["scm"] = {{"adjacency", adj},
                {"topo_order", scm.topo_order},
                {"weights", scm.weights},
                {"mechanism", scm.mechanism == Mechanism::Linear ? "linear" : "tanh"},
                {"base_noise_var", scm.base_noise_var}};
  }
  if (data.schedule) {
    json domains = json::array();
    for (const auto& o : data.schedule->domains) {
      json entry = json::object();
      for (const auto& [node, var] : o) entry[std::to_string(node)] = var;
      domains.push_back(entry);
    }
    m["schedule"] = {
        {"kind", data.schedule->kind == ScheduleKind::SingleNode ? "single-node" : "multi-node"},
        {"t", data.schedule->t},
        {"domains", domains}};
  }
  json files = json::array();
  for (std::size_t j = 0; j < data.domains(); ++j) {
    files.push_back({{"z", domain_file(j, "z")}, {"x", domain_file(j, "x")}});
    write_csv_matrix(data.Z[j], dir / domain_file(j, "z"));
    write_csv_matrix(data.X[j], dir / domain_file(j, "x"));
  }
  m["files"] = files;
  write_file(dir / "manifest.json", m.dump(2) + "\n");

  json mix = {{"d", data.mixing.d},
              {"n", data.mixing.n},
              {"p", data.mixing.p},
              {"seed", data.mixing.seed},
              {"G", "G.csv"}};
  write_file(dir / "mixing.json", mix.dump(2) + "\n");
  write_csv_matrix(data.mixing.G, dir / "G.csv");
}

MultiDomainDataset read_dataset(const std::filesystem::path& dir) {
  const json m = parse_json(read_file(dir / "manifest.json"));
  MultiDomainDataset data;
  try {
    if (m.at("format").get<std::string>() != "invae-dataset") {
      throw Error(ErrorKind::Schema, "manifest format is not invae-dataset");
    }
    DatasetSpec& s = data.spec;
    s.mixing = mixing_kind_from_string(m.at("dgp").at("mixing").get<std::string>());
    s.latent = latent_kind_from_string(m.at("dgp").at("latent").get<std::string>());
    s.d = m.at("d").get<std::size_t>();
    s.k = m.at("k").get<std::size_t>();
    s.n_train = m.at("n_train").get<std::size_t>();
    s.n_val = m.at("n_val").get<std::size_t>();
    s.degree = m.at("degree").get<std::size_t>();
    s.obs_dim = m.at("obs_dim").get<std::size_t>();
    data.S = m.at("S").get<IndexSet>();
    data.U = m.at("U").get<IndexSet>();
    s.s_size = data.S.size();
    const json& p = m.at("params");
    s.range_lo = p.at("range_lo").get<double>();
    s.range_hi = p.at("range_hi").get<double>();
    s.dscm_p = p.at("dscm_p").get<double>();
    s.edge_prob = p.at("edge_prob").get<double>();
    s.var_low = p.at("var_low").get<double>();
    s.var_high = p.at("var_high").get<double>();
    s.t = p.at("t").get<std::size_t>();
    s.seed = m.at("seeds").at("dataset").get<std::uint64_t>();
    for (const auto& b : m.at("boxes")) {
      data.boxes.push_back({b.at("lo").get<std::vector<double>>(), b.at("hi").get<std::vector<double>>()});
    }
    if (m.contains("scm")) {
      const json& js = m.at("scm");
      ScmSpec scm;
      scm.d = s.d;
      for (const auto& row : js.at("adjacency")) {
        const auto bits = row.get<std::vector<int>>();
        scm.adjacency.emplace_back(bits.begin(), bits.end());
      }
      scm.topo_order = js.at("topo_order").get<std::vector<std::size_t>>();
      scm.weights = js.at("weights").get<std::vector<std::vector<double>>>();
      scm.mechanism = js.at("mechanism").get<std::string>() == "tanh" ? Mechanism::Tanh
                                                                       : Mechanism::Linear;
      scm.base_noise_var = js.at("base_noise_var").get<std::vector<double>>();
      scm.S = data.S;
      scm.U = data.U;
      validate(scm);
      data.scm = std::move(scm);
    }
    if (m.contains("schedule")) {
      const json& js = m.at("schedule");
      InterventionSchedule sched;
      sched.kind = js.at("kind").get<std::string>() == "single-node" ? ScheduleKind::SingleNode
                                                                     : ScheduleKind::MultiNode;
      sched.t = js.at("t").get<std::size_t>();
      for (const auto& entry : js.at("domains")) {
        NoiseOverrides o;
        for (const auto& [key, value] : entry.items()) o[std::stoul(key)] = value.get<double>();
        sched.domains.push_back(std::move(o));
      }
      data.schedule = std::move(sched);
    }

    const json mix = parse_json(read_file(dir / m.at("mixing").get<std::string>()));
    data.mixing.d = mix.at("d").get<std::size_t>();
    data.mixing.n = mix.at("n").get<std::size_t>();
    data.mixing.p = mix.at("p").get<std::size_t>();
    data.mixing.seed = mix.at("seed").get<std::uint64_t>();
    data.mixing.G = read_csv_matrix(dir / mix.at("G").get<std::string>());
    if (data.mixing.G.rows() != data.mixing.n ||
        data.mixing.G.cols() != monomial_dim(data.mixing.d, data.mixing.p)) {
      throw Error(ErrorKind::Schema, "G.csv shape does not match mixing.json");
    }

    const std::size_t rows = s.n_train + s.n_val;
    for (const auto& f : m.at("files")) {
      Matrix z = read_csv_matrix(dir / f.at("z").get<std::string>());
      Matrix x = read_csv_matrix(dir / f.at("x").get<std::string>());
      if (z.rows() != rows || z.cols() != s.d || x.rows() != rows ||
          x.cols() != s.observation_width()) {
        throw Error(ErrorKind::Schema, "domain file shape does not match the manifest");
      }
      data.Z.push_back(std::move(z));
      data.X.push_back(std::move(x));
    }
    if (data.Z.size() != s.k) throw Error(ErrorKind::Schema, "file list length differs from k");
  } catch (const json::exception& e) {
    throw Error(ErrorKind::Schema, std::string("manifest: ") + e.what());
  }
  return data;
}

}  // namespace invae

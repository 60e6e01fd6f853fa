#include "gfqi/experiment.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <cstdlib>
#include <exception>
#include <fstream>
#include <limits>
#include <map>
#include <mutex>
#include <set>
#include <sstream>
#include <thread>
#include <tuple>

#include "gfqi/dataset_io.hpp"

namespace gfqi {

std::string_view axis_name(SweepAxis axis) {
  switch (axis) {
    case SweepAxis::n_clusters: return "n_clusters";
    case SweepAxis::cluster_size: return "cluster_size";
    case SweepAxis::horizon: return "horizon";
    case SweepAxis::psi: return "psi";
  }
  return "unknown";
}

SweepAxis parse_axis(std::string_view name) {
  for (SweepAxis a : {SweepAxis::n_clusters, SweepAxis::cluster_size, SweepAxis::horizon, SweepAxis::psi}) {
    if (axis_name(a) == name) return a;
  }
  throw ConfigError("unknown sweep axis '" + std::string(name) + "'");
}

ExperimentConfig SweepSpec::cell_config(int cell) const {
  if (cell < 0 || cell >= n_cells()) throw InputError("sweep cell index out of range");
  ExperimentConfig c = base;
  c.replications = replications;
  const double v = values[static_cast<std::size_t>(cell)];
  switch (axis) {
    case SweepAxis::n_clusters: c.n_clusters = static_cast<int>(v); break;
    case SweepAxis::cluster_size: c.cluster_size = static_cast<int>(v); break;
    case SweepAxis::horizon: c.horizon = static_cast<int>(v); break;
    case SweepAxis::psi: c.psi = v; break;
  }
  return c;
}

Environment RunConfig::cell_env(int cell) const {
  Environment env_cell = env;
  if (auto* semi = std::get_if<SemiSyntheticEnvParams>(&env_cell)) semi->psi = sweep.cell_config(cell).psi;
  return env_cell;
}

void RunConfig::validate() const {
  sweep.base.validate();
  if (sweep.values.empty()) throw ConfigError("sweep needs at least one axis value");
  if (sweep.learners.empty()) throw ConfigError("sweep needs at least one learner");
  if (sweep.replications < 1) throw ConfigError("sweep replications must be >= 1");
  if (sweep.axis == SweepAxis::psi && !std::holds_alternative<SemiSyntheticEnvParams>(env)) {
    throw ConfigError("the psi axis is only defined for the semi_synthetic env");
  }
  std::set<double> seen;
  for (double v : sweep.values) {
    if (!std::isfinite(v)) throw ConfigError("sweep values must be finite");
    if (sweep.axis != SweepAxis::psi && (v < 1.0 || v != std::floor(v) || v > 1e7)) {
      throw ConfigError("sweep values for " + std::string(axis_name(sweep.axis)) + " must be integers >= 1");
    }
    if (!seen.insert(v).second) throw ConfigError("sweep values must be distinct");
  }
  for (int c = 0; c < sweep.n_cells(); ++c) {
    sweep.cell_config(c).validate();
    std::visit([](const auto& p) { p.validate(); }, cell_env(c));
  }
  std::set<Learner> learner_set(sweep.learners.begin(), sweep.learners.end());
  if (learner_set.size() != sweep.learners.size()) throw ConfigError("learners must be distinct");
  if (degree_candidates.empty()) throw ConfigError("degree candidates must be non-empty");
  for (int d : degree_candidates) {
    if (d < 1) throw ConfigError("degree candidates must be >= 1");
  }
  if (cv_folds < 2) throw ConfigError("cv folds must be >= 2");
  eval.validate();
  if (eval.gamma != sweep.base.gamma) throw ConfigError("eval gamma must equal the base gamma");
  grid.validate();
}

namespace {

void reject_unknown(const nlohmann::json& j, std::initializer_list<const char*> allowed, const char* where) {
  if (!j.is_object()) throw ConfigError(std::string(where) + " must be a JSON object");
  for (auto it = j.begin(); it != j.end(); ++it) {
    if (std::none_of(allowed.begin(), allowed.end(), [&](const char* k) { return it.key() == k; })) {
      throw ConfigError("unknown key '" + it.key() + "' in " + where);
    }
  }
}

}  // namespace

RunConfig parse_run_config(const nlohmann::json& j) {
  try {
    reject_unknown(j, {"env", "sweep", "learners", "eval"}, "config");
    RunConfig cfg;
    if (j.contains("env")) cfg.env = env_from_json(j.at("env"));

    const nlohmann::json sweep = j.value("sweep", nlohmann::json::object());
    reject_unknown(sweep, {"base", "axis", "values", "replications"}, "sweep");
    const nlohmann::json base = sweep.value("base", nlohmann::json::object());
    reject_unknown(base, {"n_clusters", "cluster_size", "horizon", "psi", "gamma", "degree", "max_iters", "tol", "seed"},
                   "sweep.base");
    ExperimentConfig& b = cfg.sweep.base;
    b.n_clusters = base.value("n_clusters", b.n_clusters);
    b.cluster_size = base.value("cluster_size", b.cluster_size);
    b.horizon = base.value("horizon", b.horizon);
    b.psi = base.value("psi", b.psi);
    b.gamma = base.value("gamma", b.gamma);
    b.degree = base.value("degree", b.degree);
    b.max_iters = base.value("max_iters", b.max_iters);
    b.tol = base.value("tol", b.tol);
    b.seed = base.value("seed", b.seed);
    cfg.sweep.replications = sweep.value("replications", b.replications);
    b.replications = cfg.sweep.replications;
    cfg.sweep.axis = parse_axis(sweep.value("axis", std::string("n_clusters")));
    if (sweep.contains("values")) {
      cfg.sweep.values = sweep.at("values").get<std::vector<double>>();
    } else {
      const ExperimentConfig& bc = cfg.sweep.base;
      const double v = cfg.sweep.axis == SweepAxis::n_clusters     ? bc.n_clusters
                       : cfg.sweep.axis == SweepAxis::cluster_size ? bc.cluster_size
                       : cfg.sweep.axis == SweepAxis::horizon      ? bc.horizon
                                                                   : bc.psi;
      cfg.sweep.values = {v};
    }

    const nlohmann::json learners = j.value("learners", nlohmann::json::object());
    reject_unknown(learners, {"names", "sigma_mode", "select_degree", "degrees", "folds"}, "learners");
    if (learners.contains("names")) {
      for (const auto& n : learners.at("names")) cfg.sweep.learners.push_back(parse_learner(n.get<std::string>()));
    } else {
      cfg.sweep.learners = all_learners();
    }
    const std::string sigma_mode = learners.value("sigma_mode", std::string("pooled"));
    if (sigma_mode == "pooled") {
      cfg.controls.sigma_mode = SigmaMode::pooled;
    } else if (sigma_mode == "regression") {
      cfg.controls.sigma_mode = SigmaMode::regression;
    } else {
      throw ConfigError("sigma_mode must be 'pooled' or 'regression'");
    }
    cfg.select_degree = learners.value("select_degree", cfg.select_degree);
    cfg.degree_candidates = learners.value("degrees", cfg.degree_candidates);
    cfg.cv_folds = learners.value("folds", cfg.cv_folds);
    cfg.controls.max_iters = b.max_iters;
    cfg.controls.tol = b.tol;

    nlohmann::json eval = j.value("eval", nlohmann::json::object());
    reject_unknown(eval, {"n_traj", "horizon", "fixed_1000", "reward_bound", "omit_reward_residuals", "grid",
                          "oracle_cache"},
                   "eval");
    if (eval.contains("grid")) cfg.grid = GridSpec::from_json(eval.at("grid"));
    cfg.oracle_cache = eval.value("oracle_cache", std::string());
    eval.erase("grid");
    eval.erase("oracle_cache");
    eval["gamma"] = b.gamma;
    cfg.eval = EvalProtocol::from_json(eval);
    cfg.validate();
    return cfg;
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("malformed config: ") + e.what());
  }
}

RunConfig load_run_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open config file " + path.string());
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::parse_error& e) {
    throw ParseError(std::string("invalid JSON in ") + path.string() + ": " + e.what(), 0);
  }
  return parse_run_config(j);
}

nlohmann::json run_config_to_json(const RunConfig& c) {
  const ExperimentConfig& b = c.sweep.base;
  nlohmann::json names = nlohmann::json::array();
  for (Learner l : c.sweep.learners) names.push_back(std::string(learner_name(l)));
  nlohmann::json eval = c.eval.to_json();
  eval.erase("gamma");
  eval["grid"] = c.grid.to_json();
  eval["oracle_cache"] = c.oracle_cache.string();
  return {{"env", env_to_json(c.env)},
          {"sweep",
           {{"base",
             {{"n_clusters", b.n_clusters},
              {"cluster_size", b.cluster_size},
              {"horizon", b.horizon},
              {"psi", b.psi},
              {"gamma", b.gamma},
              {"degree", b.degree},
              {"max_iters", b.max_iters},
              {"tol", b.tol},
              {"seed", b.seed}}},
            {"axis", std::string(axis_name(c.sweep.axis))},
            {"values", c.sweep.values},
            {"replications", c.sweep.replications}}},
          {"learners",
           {{"names", names},
            {"sigma_mode", c.controls.sigma_mode == SigmaMode::pooled ? "pooled" : "regression"},
            {"select_degree", c.select_degree},
            {"degrees", c.degree_candidates},
            {"folds", c.cv_folds}}},
          {"eval", eval}};
}

RngStream stage_stream(std::uint64_t seed, int cell, int replication, Stage stage) {
  return derive_stream(seed, {static_cast<std::uint64_t>(cell), static_cast<std::uint64_t>(replication),
                              static_cast<std::uint64_t>(stage)});
}

OracleSolution cell_oracle(const RunConfig& config, int cell, int threads) {
  return cached_oracle(config.cell_env(cell), config.grid, config.eval, config.sweep.base.seed, config.oracle_cache,
                       threads);
}

namespace {

std::string sanitize(std::string s) {
  for (char& c : s) {
    if (c == ',' || c == '\n' || c == '\r' || c == '"') c = ' ';
  }
  return s;
}

}  // namespace

std::vector<ResultRow> run_replication(const RunConfig& config, const OracleSolution& oracle, int cell,
                                       int replication, const std::vector<Learner>& learners) {
  const ExperimentConfig cfg = config.sweep.cell_config(cell);
  const Environment env = config.cell_env(cell);
  const std::uint64_t seed = config.sweep.base.seed;
  const Dataset data = simulate(env, cfg, stage_stream(seed, cell, replication, Stage::data));
  const RngStream eval_rng = stage_stream(seed, cell, replication, Stage::eval);
  const ValueEstimate oracle_value = mc_evaluate(env, oracle.policy(), config.eval, eval_rng);

  std::vector<ResultRow> rows;
  for (Learner learner : learners) {
    const auto start = std::chrono::steady_clock::now();
    ResultRow row;
    row.learner = learner;
    row.axis = config.sweep.axis;
    row.axis_value = config.sweep.values[static_cast<std::size_t>(cell)];
    row.replication = replication;
    row.seed = seed;
    row.oracle_discounted = oracle_value.mean_discounted;
    row.oracle_average = oracle_value.mean_average_reward;
    row.degree = cfg.degree;
    try {
      if (config.select_degree) {
        row.degree = select_degree(data, learner, cfg.gamma, config.degree_candidates, config.cv_folds,
                                   stage_stream(seed, cell, replication, Stage::degree), config.controls)
                         .degree;
      }
      const FeatureMap map(data.action_count(), data.state_dim(), row.degree);
      const FitReport report = fit(learner, data, map, cfg.gamma, config.controls);
      const ValueEstimate value = mc_evaluate(env, report.q_estimate().policy(), config.eval, eval_rng);
      row.beta = report.beta;
      row.iterations = report.iterations;
      row.converged = report.converged;
      row.rho_hat = report.rho_hat;
      row.value_discounted = value.mean_discounted;
      row.value_average = value.mean_average_reward;
      row.regret_discounted = regret(oracle_value, value, ValueMetric::discounted);
      row.regret_average = regret(oracle_value, value, ValueMetric::average_reward);
    } catch (const std::exception& e) {
      const double nan = std::numeric_limits<double>::quiet_NaN();
      row.error = sanitize(e.what());
      if (row.error.empty()) row.error = "error";
      row.value_discounted = row.value_average = row.regret_discounted = row.regret_average = nan;
    }
    row.wall_time_ms =
        std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - start).count();
    rows.push_back(std::move(row));
  }
  return rows;
}

ResultRow run_experiment(const RunConfig& config, const OracleSolution& oracle, int cell, int replication,
                         Learner learner) {
  return run_replication(config, oracle, cell, replication, {learner}).front();
}

// ---- results CSV ----

namespace {

constexpr const char* kColumns[] = {"schema=1",        "learner",        "axis",           "axis_value",
                                    "replication",     "seed",           "regret_discounted", "regret_average",
                                    "oracle_discounted", "oracle_average", "value_discounted",  "value_average",
                                    "degree",          "iterations",     "converged",      "rho_hat",
                                    "beta",            "error"};
constexpr std::size_t kNumColumns = sizeof(kColumns) / sizeof(kColumns[0]);

std::vector<std::string> split(const std::string& line, char sep) {
  std::vector<std::string> out;
  std::string field;
  std::istringstream ss(line);
  while (std::getline(ss, field, sep)) out.push_back(field);
  if (!line.empty() && line.back() == sep) out.emplace_back();
  return out;
}

double parse_double(const std::string& s, const char* what, int line) {
  if (s.empty()) throw ParseError(std::string("empty ") + what, static_cast<std::size_t>(line));
  char* end = nullptr;
  const double v = std::strtod(s.c_str(), &end);
  if (end != s.c_str() + s.size()) {
    throw ParseError(std::string("invalid ") + what + " '" + s + "'", static_cast<std::size_t>(line));
  }
  return v;
}

long long parse_int(const std::string& s, const char* what, int line) {
  if (s.empty()) throw ParseError(std::string("empty ") + what, static_cast<std::size_t>(line));
  char* end = nullptr;
  const long long v = std::strtoll(s.c_str(), &end, 10);
  if (end != s.c_str() + s.size()) {
    throw ParseError(std::string("invalid ") + what + " '" + s + "'", static_cast<std::size_t>(line));
  }
  return v;
}

}  // namespace

std::string results_header() {
  std::string h;
  for (std::size_t i = 0; i < kNumColumns; ++i) {
    if (i) h += ',';
    h += kColumns[i];
  }
  return h;
}

std::string format_result_row(const ResultRow& r) {
  std::string beta;
  for (Eigen::Index i = 0; i < r.beta.size(); ++i) {
    if (i) beta += ';';
    beta += format_real(r.beta[i]);
  }
  std::ostringstream out;
  out << 1 << ',' << learner_name(r.learner) << ',' << axis_name(r.axis) << ',' << format_real(r.axis_value) << ','
      << r.replication << ',' << r.seed << ',' << format_real(r.regret_discounted) << ','
      << format_real(r.regret_average) << ',' << format_real(r.oracle_discounted) << ','
      << format_real(r.oracle_average) << ',' << format_real(r.value_discounted) << ','
      << format_real(r.value_average) << ',' << r.degree << ',' << r.iterations << ',' << (r.converged ? 1 : 0)
      << ',' << format_real(r.rho_hat) << ',' << beta << ',' << sanitize(r.error);
  return out.str();
}

std::vector<ParsedRow> read_results_csv(std::istream& in) {
  std::string line;
  if (!std::getline(in, line)) throw ParseError("empty results file (missing header)", 1);
  if (!line.empty() && line.back() == '\r') line.pop_back();
  if (line.rfind("schema=", 0) != 0) throw ParseError("missing schema column in header", 1);
  if (line != results_header()) throw ParseError("unsupported results schema or header", 1);
  std::vector<ParsedRow> rows;
  int ln = 1;
  while (std::getline(in, line)) {
    ++ln;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    const auto f = split(line, ',');
    if (f.size() != kNumColumns) {
      throw ParseError("expected " + std::to_string(kNumColumns) + " fields, found " + std::to_string(f.size()),
                       static_cast<std::size_t>(ln));
    }
    if (f[0] != "1") throw ParseError("unsupported row schema '" + f[0] + "'", static_cast<std::size_t>(ln));
    ParsedRow p;
    p.line = line;
    p.line_number = ln;
    ResultRow& r = p.row;
    try {
      r.learner = parse_learner(f[1]);
      r.axis = parse_axis(f[2]);
    } catch (const ConfigError& e) {
      throw ParseError(e.what(), static_cast<std::size_t>(ln));
    }
    r.axis_value = parse_double(f[3], "axis_value", ln);
    r.replication = static_cast<int>(parse_int(f[4], "replication", ln));
    r.seed = static_cast<std::uint64_t>(std::strtoull(f[5].c_str(), nullptr, 10));
    parse_int(f[5], "seed", ln);
    r.regret_discounted = parse_double(f[6], "regret_discounted", ln);
    r.regret_average = parse_double(f[7], "regret_average", ln);
    r.oracle_discounted = parse_double(f[8], "oracle_discounted", ln);
    r.oracle_average = parse_double(f[9], "oracle_average", ln);
    r.value_discounted = parse_double(f[10], "value_discounted", ln);
    r.value_average = parse_double(f[11], "value_average", ln);
    r.degree = static_cast<int>(parse_int(f[12], "degree", ln));
    r.iterations = static_cast<int>(parse_int(f[13], "iterations", ln));
    r.converged = parse_int(f[14], "converged", ln) != 0;
    r.rho_hat = parse_double(f[15], "rho_hat", ln);
    if (!f[16].empty()) {
      const auto parts = split(f[16], ';');
      r.beta.resize(static_cast<Eigen::Index>(parts.size()));
      for (std::size_t i = 0; i < parts.size(); ++i) r.beta[static_cast<Eigen::Index>(i)] = parse_double(parts[i], "beta", ln);
    }
    r.error = f[17];
    rows.push_back(std::move(p));
  }
  return rows;
}

std::vector<ParsedRow> read_results_csv(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open results file " + path.string());
  return read_results_csv(in);
}

// ---- sweep ----

namespace {

struct RowKey {
  int learner;
  int cell;
  int replication;
  auto operator<=>(const RowKey&) const = default;
};

std::string timing_key(const ResultRow& r) {
  return std::string(learner_name(r.learner)) + ',' + format_real(r.axis_value) + ',' + std::to_string(r.replication);
}

}  // namespace

SweepSummary run_sweep(const RunConfig& config, const std::filesystem::path& out, const SweepOptions& options) {
  config.validate();
  const SweepSpec& spec = config.sweep;
  const int n_learners = static_cast<int>(spec.learners.size());
  auto learner_index = [&](Learner l) {
    return static_cast<int>(std::find(spec.learners.begin(), spec.learners.end(), l) - spec.learners.begin());
  };
  auto cell_index = [&](double v) {
    return static_cast<int>(std::find(spec.values.begin(), spec.values.end(), v) - spec.values.begin());
  };

  std::map<RowKey, std::string> lines;
  std::map<std::string, std::string> timings;
  const bool existing = options.resume && std::filesystem::exists(out) && std::filesystem::file_size(out) > 0;
  if (existing) {
    for (const ParsedRow& p : read_results_csv(out)) {
      if (p.row.axis != spec.axis) throw ConfigError("existing results use a different sweep axis");
      const int li = learner_index(p.row.learner);
      const int ci = cell_index(p.row.axis_value);
      if (li >= n_learners || ci >= spec.n_cells() || p.row.replication < 0 || p.row.replication >= spec.replications) {
        continue;
      }
      lines[RowKey{li, ci, p.row.replication}] = p.line;
    }
    std::ifstream tin(out.string() + ".timing.csv");
    std::string tl;
    std::getline(tin, tl);
    while (std::getline(tin, tl)) {
      const auto pos = tl.rfind(',');
      if (pos != std::string::npos) timings[tl.substr(0, pos)] = tl;
    }
  }

  std::ofstream sink(out, existing ? std::ios::app : std::ios::trunc);
  if (!sink) throw IoError("cannot write results file " + out.string());
  if (!existing) sink << results_header() << '\n' << std::flush;

  struct Unit {
    int cell;
    int replication;
    std::vector<Learner> learners;
  };
  std::vector<Unit> units;
  SweepSummary summary;
  summary.rows_total = n_learners * spec.n_cells() * spec.replications;
  for (int c = 0; c < spec.n_cells(); ++c) {
    for (int r = 0; r < spec.replications; ++r) {
      Unit u{c, r, {}};
      for (int l = 0; l < n_learners; ++l) {
        if (!lines.count(RowKey{l, c, r})) u.learners.push_back(spec.learners[static_cast<std::size_t>(l)]);
      }
      if (!u.learners.empty()) units.push_back(std::move(u));
    }
  }
  summary.rows_skipped = static_cast<int>(lines.size());

  // Cells sharing an environment share the oracle.
  std::map<std::string, std::shared_ptr<const OracleSolution>> oracle_by_env;
  std::vector<std::shared_ptr<const OracleSolution>> oracles(static_cast<std::size_t>(spec.n_cells()));
  for (int c = 0; c < spec.n_cells(); ++c) {
    const bool needed = std::any_of(units.begin(), units.end(), [c](const Unit& u) { return u.cell == c; });
    if (!needed) continue;
    const std::string key = env_to_json(config.cell_env(c)).dump();
    auto& slot = oracle_by_env[key];
    if (!slot) slot = std::make_shared<const OracleSolution>(cell_oracle(config, c, options.threads));
    oracles[static_cast<std::size_t>(c)] = slot;
  }

  std::mutex mu;
  std::atomic<std::size_t> next{0};
  int done = 0;
  const int workers = std::clamp(options.threads, 1, std::max<int>(1, static_cast<int>(units.size())));
  std::vector<std::exception_ptr> errors(static_cast<std::size_t>(workers));
  auto work = [&](int w) {
    try {
      for (std::size_t i = next++; i < units.size(); i = next++) {
        const Unit& u = units[i];
        auto rows = run_replication(config, *oracles[static_cast<std::size_t>(u.cell)], u.cell, u.replication,
                                    u.learners);
        std::lock_guard<std::mutex> lock(mu);
        for (const ResultRow& row : rows) {
          const std::string line = format_result_row(row);
          sink << line << '\n';
          lines[RowKey{learner_index(row.learner), u.cell, u.replication}] = line;
          timings[timing_key(row)] = timing_key(row) + ',' + format_real(row.wall_time_ms);
          ++summary.rows_computed;
          if (!row.error.empty()) ++summary.rows_failed;
        }
        sink.flush();
        ++done;
        if (options.progress) options.progress(done, static_cast<int>(units.size()));
      }
    } catch (...) {
      errors[static_cast<std::size_t>(w)] = std::current_exception();
    }
  };
  if (workers == 1) {
    work(0);
  } else {
    std::vector<std::thread> pool;
    for (int w = 0; w < workers; ++w) pool.emplace_back(work, w);
    for (auto& t : pool) t.join();
  }
  for (auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }
  sink.close();

  const std::string tmp = out.string() + ".tmp";
  {
    std::ofstream final_out(tmp, std::ios::trunc);
    if (!final_out) throw IoError("cannot write results file " + tmp);
    final_out << results_header() << '\n';
    for (const auto& [key, line] : lines) final_out << line << '\n';
    if (!final_out.flush()) throw IoError("failed writing results file " + tmp);
  }
  std::error_code ec;
  std::filesystem::rename(tmp, out, ec);
  if (ec) throw IoError("cannot move results file into place: " + ec.message());

  std::ofstream tout(out.string() + ".timing.csv", std::ios::trunc);
  if (tout) {
    tout << "learner,axis_value,replication,wall_time_ms\n";
    for (const auto& [key, line] : timings) tout << line << '\n';
  }
  return summary;
}

}  // namespace gfqi

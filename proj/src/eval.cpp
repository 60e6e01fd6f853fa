#include "gfqi/eval.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <exception>
#include <fstream>
#include <limits>
#include <thread>

#include "gfqi/reduce.hpp"

namespace gfqi {

int truncation_horizon(double gamma, double reward_bound) {
  if (!(gamma >= 0.0 && gamma < 1.0)) throw ConfigError("gamma must lie in [0, 1)");
  if (!(reward_bound > 0.0)) throw ConfigError("reward bound must be > 0");
  if (gamma == 0.0) return 1;
  const double h = std::log(1e-6 / reward_bound) / std::log(gamma);
  return std::max(1, static_cast<int>(std::ceil(h)));
}

int EvalProtocol::resolved_horizon() const {
  if (fixed_1000) return 1000;
  if (horizon > 0) return horizon;
  return truncation_horizon(gamma, reward_bound);
}

void EvalProtocol::validate() const {
  if (!(gamma >= 0.0 && gamma < 1.0)) throw ConfigError("eval gamma must lie in [0, 1)");
  if (n_traj < 1) throw ConfigError("eval n_traj must be >= 1");
  if (horizon < 0) throw ConfigError("eval horizon must be >= 0");
  if (!(reward_bound > 0.0)) throw ConfigError("eval reward_bound must be > 0");
}

nlohmann::json EvalProtocol::to_json() const {
  return {{"gamma", gamma},
          {"n_traj", n_traj},
          {"horizon", horizon},
          {"fixed_1000", fixed_1000},
          {"reward_bound", reward_bound},
          {"omit_reward_residuals", omit_reward_residuals}};
}

EvalProtocol EvalProtocol::from_json(const nlohmann::json& j) {
  try {
    EvalProtocol p;
    p.gamma = j.value("gamma", p.gamma);
    p.n_traj = j.value("n_traj", p.n_traj);
    p.horizon = j.value("horizon", p.horizon);
    p.fixed_1000 = j.value("fixed_1000", p.fixed_1000);
    p.reward_bound = j.value("reward_bound", p.reward_bound);
    p.omit_reward_residuals = j.value("omit_reward_residuals", p.omit_reward_residuals);
    p.validate();
    return p;
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("malformed eval section: ") + e.what());
  }
}

nlohmann::json ValueEstimate::to_json() const {
  return {{"mean_discounted", mean_discounted},
          {"mean_average_reward", mean_average_reward},
          {"std_error", std_error},
          {"std_error_average", std_error_average},
          {"n_traj", n_traj},
          {"horizon", horizon},
          {"gamma", gamma}};
}

ValueEstimate summarize_rollouts(const std::vector<std::vector<double>>& rewards, double gamma) {
  if (rewards.empty()) throw InputError("no trajectories to summarize");
  const std::size_t horizon = rewards.front().size();
  if (horizon == 0) throw InputError("empty trajectory");
  const auto n = static_cast<double>(rewards.size());
  std::vector<double> disc(rewards.size()), avg(rewards.size());
  for (std::size_t k = 0; k < rewards.size(); ++k) {
    if (rewards[k].size() != horizon) throw InputError("trajectories have unequal lengths");
    double g = 0.0, w = 1.0, s = 0.0;
    for (double r : rewards[k]) {
      g += w * r;
      w *= gamma;
      s += r;
    }
    disc[k] = g;
    avg[k] = s / static_cast<double>(horizon);
  }
  auto mean_se = [n](const std::vector<double>& x) {
    double m = 0.0;
    for (double v : x) m += v;
    m /= n;
    double ss = 0.0;
    for (double v : x) ss += (v - m) * (v - m);
    const double se = x.size() > 1 ? std::sqrt(ss / (n - 1.0) / n) : 0.0;
    return std::pair{m, se};
  };
  ValueEstimate out;
  std::tie(out.mean_discounted, out.std_error) = mean_se(disc);
  std::tie(out.mean_average_reward, out.std_error_average) = mean_se(avg);
  out.n_traj = static_cast<int>(rewards.size());
  out.horizon = static_cast<int>(horizon);
  out.gamma = gamma;
  return out;
}

ValueEstimate mc_evaluate(const ScalarModel& model, const Policy& policy, double gamma, int n_traj, int horizon,
                          const RngStream& rng, bool omit_reward_residuals, int threads) {
  if (!(gamma >= 0.0 && gamma < 1.0)) throw ConfigError("gamma must lie in [0, 1)");
  if (n_traj < 1 || horizon < 1) throw ConfigError("mc_evaluate needs n_traj >= 1 and horizon >= 1");
  const int workers = std::clamp(threads, 1, n_traj);
  if (workers == 1) {
    return summarize_rollouts(rollout_policy(model, policy, n_traj, horizon, rng, omit_reward_residuals), gamma);
  }
  std::vector<std::vector<double>> rewards(static_cast<std::size_t>(n_traj));
  std::vector<std::exception_ptr> errors(static_cast<std::size_t>(workers));
  std::vector<std::thread> pool;
  for (int w = 0; w < workers; ++w) {
    pool.emplace_back([&, w] {
      try {
        const int lo = static_cast<int>(static_cast<long long>(n_traj) * w / workers);
        const int hi = static_cast<int>(static_cast<long long>(n_traj) * (w + 1) / workers);
        if (hi <= lo) return;
        auto part = rollout_policy(model, policy, hi - lo, horizon, rng, omit_reward_residuals, lo);
        for (int k = lo; k < hi; ++k) rewards[static_cast<std::size_t>(k)] = std::move(part[static_cast<std::size_t>(k - lo)]);
      } catch (...) {
        errors[static_cast<std::size_t>(w)] = std::current_exception();
      }
    });
  }
  for (auto& t : pool) t.join();
  for (auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }
  return summarize_rollouts(rewards, gamma);
}

ValueEstimate mc_evaluate(const Environment& env, const Policy& policy, double gamma, int n_traj, int horizon,
                          const RngStream& rng, bool omit_reward_residuals, int threads) {
  return mc_evaluate(scalar_model(env), policy, gamma, n_traj, horizon, rng, omit_reward_residuals, threads);
}

ValueEstimate mc_evaluate(const Environment& env, const Policy& policy, const EvalProtocol& protocol,
                          const RngStream& rng, int threads) {
  protocol.validate();
  return mc_evaluate(env, policy, protocol.gamma, protocol.n_traj, protocol.resolved_horizon(), rng,
                     protocol.omit_reward_residuals, threads);
}

// ---- oracle ----

void GridSpec::validate() const {
  if (!(hi > lo)) throw ConfigError("grid needs hi > lo");
  if (points < 2) throw ConfigError("grid needs at least 2 points");
  if (quadrature_nodes < 1) throw ConfigError("quadrature needs at least 1 node");
  if (max_sweeps < 1) throw ConfigError("max_sweeps must be >= 1");
  if (!(tol > 0.0)) throw ConfigError("oracle tol must be > 0");
}

nlohmann::json GridSpec::to_json() const {
  return {{"lo", lo}, {"hi", hi}, {"points", points}, {"quadrature_nodes", quadrature_nodes},
          {"max_sweeps", max_sweeps}, {"tol", tol}};
}

GridSpec GridSpec::from_json(const nlohmann::json& j) {
  try {
    GridSpec g;
    g.lo = j.value("lo", g.lo);
    g.hi = j.value("hi", g.hi);
    g.points = j.value("points", g.points);
    g.quadrature_nodes = j.value("quadrature_nodes", g.quadrature_nodes);
    g.max_sweeps = j.value("max_sweeps", g.max_sweeps);
    g.tol = j.value("tol", g.tol);
    g.validate();
    return g;
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("malformed grid section: ") + e.what());
  }
}

GaussHermite gauss_hermite_normal(int n) {
  if (n < 1) throw ConfigError("Gauss-Hermite rule needs n >= 1");
  Eigen::MatrixXd jacobi = Eigen::MatrixXd::Zero(n, n);
  for (int k = 1; k < n; ++k) {
    jacobi(k, k - 1) = jacobi(k - 1, k) = std::sqrt(static_cast<double>(k));
  }
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(jacobi);
  GaussHermite rule;
  rule.nodes.resize(static_cast<std::size_t>(n));
  rule.weights.resize(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) {
    rule.nodes[static_cast<std::size_t>(i)] = es.eigenvalues()(i);
    const double v0 = es.eigenvectors()(0, i);
    rule.weights[static_cast<std::size_t>(i)] = v0 * v0;
  }
  return rule;
}

namespace {

struct GridPos {
  int index;
  double frac;
};

GridPos locate(const std::vector<double>& grid, double s) {
  const double lo = grid.front();
  const double hi = grid.back();
  const int last = static_cast<int>(grid.size()) - 1;
  if (!(s > lo)) return {0, 0.0};
  if (!(s < hi)) return {last - 1, 1.0};
  const double h = (hi - lo) / last;
  int k = std::min(static_cast<int>((s - lo) / h), last - 1);
  return {k, (s - grid[static_cast<std::size_t>(k)]) / h};
}

}  // namespace

double OracleSolution::q_value(int action, double s) const {
  if (action < 0 || action >= q.cols()) throw InputError("oracle action out of range");
  const GridPos p = locate(grid, s);
  return (1.0 - p.frac) * q(p.index, action) + p.frac * q(p.index + 1, action);
}

int OracleSolution::greedy_action(double s) const {
  int best = 0;
  double best_q = q_value(0, s);
  for (int a = 1; a < q.cols(); ++a) {
    const double v = q_value(a, s);
    if (v > best_q) {
      best_q = v;
      best = a;
    }
  }
  return best;
}

Policy OracleSolution::policy() const {
  auto self = std::make_shared<const OracleSolution>(*this);
  return [self](std::span<const double> s, RngStream&) { return self->greedy_action(s[0]); };
}

nlohmann::json OracleSolution::to_json() const {
  nlohmann::json qj = nlohmann::json::array();
  for (Eigen::Index a = 0; a < q.cols(); ++a) {
    std::vector<double> col(static_cast<std::size_t>(q.rows()));
    for (Eigen::Index i = 0; i < q.rows(); ++i) col[static_cast<std::size_t>(i)] = q(i, a);
    qj.push_back(col);
  }
  return {{"grid", grid},
          {"q", qj},
          {"gamma", gamma},
          {"bellman_residual", bellman_residual},
          {"sweeps", sweeps},
          {"value", value},
          {"value_estimate", value_estimate.to_json()}};
}

OracleSolution OracleSolution::from_json(const nlohmann::json& j) {
  try {
    OracleSolution o;
    o.grid = j.at("grid").get<std::vector<double>>();
    const auto cols = j.at("q").get<std::vector<std::vector<double>>>();
    if (o.grid.size() < 2 || cols.empty()) throw InputError("oracle JSON has an empty grid or Q-table");
    o.q.resize(static_cast<Eigen::Index>(o.grid.size()), static_cast<Eigen::Index>(cols.size()));
    for (std::size_t a = 0; a < cols.size(); ++a) {
      if (cols[a].size() != o.grid.size()) throw InputError("oracle Q-table does not match its grid");
      for (std::size_t i = 0; i < cols[a].size(); ++i) o.q(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(a)) = cols[a][i];
    }
    o.gamma = j.at("gamma").get<double>();
    o.bellman_residual = j.at("bellman_residual").get<double>();
    o.sweeps = j.at("sweeps").get<int>();
    o.value = j.at("value").get<double>();
    const auto& v = j.at("value_estimate");
    o.value_estimate.mean_discounted = v.at("mean_discounted").get<double>();
    o.value_estimate.mean_average_reward = v.at("mean_average_reward").get<double>();
    o.value_estimate.std_error = v.at("std_error").get<double>();
    o.value_estimate.std_error_average = v.at("std_error_average").get<double>();
    o.value_estimate.n_traj = v.at("n_traj").get<int>();
    o.value_estimate.horizon = v.at("horizon").get<int>();
    o.value_estimate.gamma = v.at("gamma").get<double>();
    return o;
  } catch (const nlohmann::json::exception& e) {
    throw InputError(std::string("malformed oracle JSON: ") + e.what());
  }
}

OracleSolution solve_oracle_q(const ScalarModel& model, double gamma, const GridSpec& spec) {
  spec.validate();
  if (!(gamma >= 0.0 && gamma < 1.0)) throw ConfigError("gamma must lie in [0, 1)");
  const int n_pts = spec.points;
  const int n_act = model.action_count;
  const GaussHermite rule = gauss_hermite_normal(spec.quadrature_nodes);
  const int n_nodes = spec.quadrature_nodes;

  OracleSolution sol;
  sol.gamma = gamma;
  sol.grid.resize(static_cast<std::size_t>(n_pts));
  const double h = (spec.hi - spec.lo) / (n_pts - 1);
  for (int i = 0; i < n_pts; ++i) sol.grid[static_cast<std::size_t>(i)] = spec.lo + h * i;
  sol.grid.back() = spec.hi;

  // Expected next-state interpolation stencil for every (point, action, node).
  Eigen::MatrixXd reward(n_pts, n_act);
  std::vector<GridPos> stencil(static_cast<std::size_t>(n_pts) * n_act * n_nodes);
  for (int i = 0; i < n_pts; ++i) {
    const double s = sol.grid[static_cast<std::size_t>(i)];
    for (int a = 0; a < n_act; ++a) {
      reward(i, a) = model.reward_mean(a, s);
      const double mu = model.transition_mean(a, s);
      for (int j = 0; j < n_nodes; ++j) {
        stencil[(static_cast<std::size_t>(i) * n_act + a) * n_nodes + j] =
            locate(sol.grid, mu + model.state_noise_std * rule.nodes[static_cast<std::size_t>(j)]);
      }
    }
  }

  Eigen::MatrixXd q = Eigen::MatrixXd::Zero(n_pts, n_act);
  Eigen::MatrixXd next(n_pts, n_act);
  Eigen::VectorXd v(n_pts);
  auto apply_bellman = [&](const Eigen::MatrixXd& in, Eigen::MatrixXd& out) {
    v = in.rowwise().maxCoeff();
    for (int i = 0; i < n_pts; ++i) {
      for (int a = 0; a < n_act; ++a) {
        const GridPos* st = &stencil[(static_cast<std::size_t>(i) * n_act + a) * n_nodes];
        double ev = 0.0;
        for (int j = 0; j < n_nodes; ++j) {
          ev += rule.weights[static_cast<std::size_t>(j)] *
                ((1.0 - st[j].frac) * v(st[j].index) + st[j].frac * v(st[j].index + 1));
        }
        out(i, a) = reward(i, a) + gamma * ev;
      }
    }
  };

  for (int sweep = 1; sweep <= spec.max_sweeps; ++sweep) {
    apply_bellman(q, next);
    const double residual = (next - q).cwiseAbs().maxCoeff();
    if (residual <= spec.tol) {
      sol.q = std::move(q);
      sol.bellman_residual = residual;
      sol.sweeps = sweep;
      return sol;
    }
    q.swap(next);
  }
  throw OracleError("value iteration did not reach the Bellman tolerance within " +
                    std::to_string(spec.max_sweeps) + " sweeps");
}

OracleSolution value_iteration_oracle(const Environment& env, const GridSpec& grid, const EvalProtocol& protocol,
                                      const RngStream& eval_rng, int threads) {
  protocol.validate();
  OracleSolution sol = solve_oracle_q(scalar_model(env), protocol.gamma, grid);
  sol.value_estimate = mc_evaluate(env, sol.policy(), protocol, eval_rng, threads);
  sol.value = sol.value_estimate.mean_discounted;
  return sol;
}

std::string oracle_cache_key(const Environment& env, const GridSpec& grid, const EvalProtocol& protocol,
                             std::uint64_t eval_seed) {
  const nlohmann::json material = {{"env", env_to_json(env)},
                                   {"grid", grid.to_json()},
                                   {"protocol", protocol.to_json()},
                                   {"eval_seed", eval_seed}};
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : material.dump()) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

OracleSolution cached_oracle(const Environment& env, const GridSpec& grid, const EvalProtocol& protocol,
                             std::uint64_t eval_seed, const std::filesystem::path& cache_dir, int threads) {
  const RngStream eval_rng = derive_stream(eval_seed, {0x0AC1E});
  if (cache_dir.empty()) return value_iteration_oracle(env, grid, protocol, eval_rng, threads);
  const auto path = cache_dir / ("oracle_" + oracle_cache_key(env, grid, protocol, eval_seed) + ".json");
  if (std::filesystem::exists(path)) {
    std::ifstream in(path);
    nlohmann::json j;
    try {
      in >> j;
      return OracleSolution::from_json(j);
    } catch (const std::exception&) {
      // Corrupt cache entries are rebuilt below.
    }
  }
  OracleSolution sol = value_iteration_oracle(env, grid, protocol, eval_rng, threads);
  std::error_code ec;
  std::filesystem::create_directories(cache_dir, ec);
  const auto tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp);
    if (!out) throw IoError("cannot write oracle cache file " + tmp);
    out << sol.to_json().dump() << '\n';
  }
  std::filesystem::rename(tmp, path, ec);
  if (ec) throw IoError("cannot move oracle cache file into place: " + ec.message());
  return sol;
}

// ---- regret ----

double regret(const ValueEstimate& reference, const ValueEstimate& policy_value, ValueMetric metric) {
  if (reference.gamma != policy_value.gamma || reference.horizon != policy_value.horizon) {
    throw InputError("regret needs both values under the same protocol (gamma and horizon)");
  }
  return metric == ValueMetric::discounted ? reference.mean_discounted - policy_value.mean_discounted
                                           : reference.mean_average_reward - policy_value.mean_average_reward;
}

double regret(const OracleSolution& oracle, const ValueEstimate& policy_value, ValueMetric metric) {
  return regret(oracle.value_estimate, policy_value, metric);
}

// ---- sandwich ----

SandwichEstimate sandwich_variance(const Dataset& data, const FeatureMap& map, const Eigen::VectorXd& beta_hat,
                                   const BlockInstrument& instrument, double gamma) {
  if (!(gamma >= 0.0 && gamma < 1.0)) throw ConfigError("gamma must lie in [0, 1)");
  const Design design = build_design(data, map);
  if (beta_hat.size() != design.dim) throw InputError("beta length does not match the feature dimension");
  if (instrument.stacked.rows() != design.rows() || instrument.stacked.cols() != design.dim ||
      instrument.cluster_size != design.cluster_size) {
    throw InputError("instrument shape does not match the design");
  }
  const int m = design.cluster_size;
  const int n = design.n_blocks;
  const int d = design.dim;
  const Eigen::MatrixXd next_greedy = next_features(design, greedy_next_actions(design, beta_hat));
  const Eigen::MatrixXd contrast = design.current - gamma * next_greedy;
  const TdBatch td = td_residuals(design, beta_hat, beta_hat, gamma);

  SandwichEstimate out;
  out.n_blocks = n;
  out.W_hat = blockwise_cross(instrument.stacked, contrast, m) / (static_cast<double>(n) * (1.0 - gamma) * m);
  out.Sigma_hat = pairwise_reduce(0, n, kReduceLeafBlocks, [&](std::ptrdiff_t lo, std::ptrdiff_t hi) {
    Eigen::MatrixXd acc = Eigen::MatrixXd::Zero(d, d);
    for (std::ptrdiff_t b = lo; b < hi; ++b) {
      const Eigen::VectorXd u = instrument.stacked.middleRows(b * m, m).transpose() * td.residuals.segment(b * m, m);
      acc.noalias() += u * u.transpose();
    }
    return acc;
  });
  out.Sigma_hat /= static_cast<double>(n) * m;

  const double cond = condition_number(out.W_hat);
  if (!(cond <= kMaxCondition)) {
    throw SingularSystemError("sandwich W_hat is singular (cond = " + std::to_string(cond) + ")", cond);
  }
  const Eigen::MatrixXd g = (1.0 - gamma) * m * out.W_hat;
  const Eigen::MatrixXd s = m * out.Sigma_hat;
  Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(g);
  const Eigen::MatrixXd g_inv = qr.inverse();
  Eigen::MatrixXd cov = g_inv * s * g_inv.transpose() / static_cast<double>(n);
  out.covariance = 0.5 * (cov + cov.transpose());
  return out;
}

// ---- degree selection ----

DegreeSelection select_degree(const Dataset& data, Learner learner, double gamma, std::span<const int> degrees,
                              int folds, RngStream rng, const FitControls& controls) {
  if (degrees.empty()) throw ConfigError("select_degree needs at least one candidate degree");
  if (folds < 2) throw ConfigError("select_degree needs at least 2 folds");
  std::vector<int> ids = data.cluster_ids();
  if (ids.size() < 2) throw ConfigError("select_degree needs at least 2 clusters");
  DegreeSelection out;
  out.candidates.assign(degrees.begin(), degrees.end());
  std::sort(out.candidates.begin(), out.candidates.end());
  out.candidates.erase(std::unique(out.candidates.begin(), out.candidates.end()), out.candidates.end());

  const int k_folds = std::min<int>(folds, static_cast<int>(ids.size()));
  if (k_folds < folds) {
    out.warnings.push_back("fewer clusters than folds; using " + std::to_string(k_folds) + " folds");
  }
  for (int i = static_cast<int>(ids.size()) - 1; i > 0; --i) {
    std::swap(ids[static_cast<std::size_t>(i)], ids[static_cast<std::size_t>(rng.uniform_int(i + 1))]);
  }
  std::vector<std::vector<int>> train(static_cast<std::size_t>(k_folds)), test(static_cast<std::size_t>(k_folds));
  for (std::size_t i = 0; i < ids.size(); ++i) {
    const auto f = static_cast<int>(i % static_cast<std::size_t>(k_folds));
    for (int g = 0; g < k_folds; ++g) (g == f ? test : train)[static_cast<std::size_t>(g)].push_back(ids[i]);
  }

  std::optional<double> best_score;
  for (int degree : out.candidates) {
    std::optional<double> score = 0.0;
    const FeatureMap map(data.action_count(), data.state_dim(), degree);
    for (int f = 0; f < k_folds && score; ++f) {
      try {
        const Dataset fit_data = data.subset(train[static_cast<std::size_t>(f)]);
        const Dataset held_out = data.subset(test[static_cast<std::size_t>(f)]);
        const FitReport report = fit(learner, fit_data, map, gamma, controls);
        const TdBatch td = td_residuals(held_out, map, report.beta, report.beta, gamma);
        *score += td.residuals.squaredNorm() / static_cast<double>(td.residuals.size());
      } catch (const SingularSystemError&) {
        out.warnings.push_back("degree " + std::to_string(degree) + " disqualified: singular on fold " +
                               std::to_string(f));
        score.reset();
      }
    }
    if (score) *score /= k_folds;
    out.cv_scores.push_back(score);
    if (score && (!best_score || *score < *best_score)) {
      best_score = score;
      out.degree = degree;
    }
  }
  if (!best_score) {
    out.degree = out.candidates.front();
    out.warnings.push_back("every candidate degree was disqualified; falling back to degree " +
                           std::to_string(out.degree));
  }
  return out;
}

}  // namespace gfqi

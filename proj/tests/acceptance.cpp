// Acceptance suite: one PASS/FAIL line per criterion, non-zero exit status
// if any criterion fails.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include "gfqi/core.hpp"
#include "gfqi/envs.hpp"
#include "gfqi/eval.hpp"
#include "gfqi/experiment.hpp"
#include "gfqi/features.hpp"
#include "gfqi/gee.hpp"
#include "gfqi/learners.hpp"
#include "stats.hpp"

namespace {

using namespace gfqi;
namespace fs = std::filesystem;

struct Outcome {
  bool pass = false;
  std::string detail;
};

std::string fmt(const char* f, double a) {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, a);
  return buf;
}

fs::path scratch_dir() {
  fs::path dir = fs::temp_directory_path() / "gfqi_acceptance";
  fs::create_directories(dir);
  return dir;
}

ExperimentConfig base_cell(int n, int m, int t) {
  ExperimentConfig c;
  c.n_clusters = n;
  c.cluster_size = m;
  c.horizon = t;
  return c;
}

// 1. Identity-correlation GFQI reproduces AGTD.
Outcome agtd_reduction() {
  RngStream pick = derive_stream(101, {0});
  int accepted = 0, singular = 0;
  double worst = 0.0;
  for (std::uint64_t trial = 0; accepted < 20 && trial < 200; ++trial) {
    const int n = 3 + pick.uniform_int(8);
    const int m = 1 + pick.uniform_int(6);
    const int t = 3 + pick.uniform_int(6);
    const Dataset data = simulate_synthetic({}, base_cell(n, m, t), derive_stream(101, {1, trial}));
    const FeatureMap map(2, 1, 2);
    FitReport agtd, gfqi;
    try {
      agtd = agtd_fit(data, map, 0.9);
    } catch (const SingularSystemError&) {
      ++singular;
      continue;
    }
    gfqi = gfqi_fit(data, map, 0.9, CorrelationKind::identity);
    worst = std::max(worst, (agtd.beta - gfqi.beta).lpNorm<Eigen::Infinity>());
    ++accepted;
  }
  return {accepted == 20 && worst <= 1e-8,
          "20 datasets, max |beta_gfqi - beta_agtd| = " + fmt("%.3g", worst) + " (tol 1e-8), " +
              std::to_string(singular) + " singular draws replaced"};
}

// 2. Closed-form exchangeable inverse against numeric inversion.
Outcome exchangeable_inverse() {
  RngStream rng = derive_stream(202, {0});
  double worst = 0.0;
  int cases = 0;
  for (int m = 2; m <= 20; ++m) {
    const double lo = -1.0 / (m - 1);
    for (int k = 0; k < 15; ++k) {
      const double rho = lo + (1.0 - lo) * (k + 1) / 16.0;
      WorkingCovariance cov;
      cov.sigma.resize(m);
      for (int j = 0; j < m; ++j) cov.sigma[j] = 0.5 + 1.5 * rng.uniform();
      cov.correlation = WorkingCorrelation::exchangeable(rho, m);
      const Eigen::MatrixXd closed = invert_covariance(cov).inverse;
      const Eigen::MatrixXd numeric = cov.assemble().fullPivLu().inverse();
      worst = std::max(worst, (closed - numeric).cwiseAbs().maxCoeff());
      ++cases;
    }
  }
  return {worst <= 1e-10, std::to_string(cases) + " (M, rho) cases, max abs diff = " + fmt("%.3g", worst) +
                              " (tol 1e-10)"};
}

// 3. Oracle Bellman residual and grid-refinement stability.
Outcome oracle_validity() {
  const Environment env = SyntheticEnvParams{};
  EvalProtocol protocol;
  GridSpec coarse;
  GridSpec fine = coarse;
  fine.points = 2 * (coarse.points - 1) + 1;
  const RngStream rng = derive_stream(303, {0});
  const OracleSolution a = value_iteration_oracle(env, coarse, protocol, rng);
  const OracleSolution b = value_iteration_oracle(env, fine, protocol, rng);
  const double residual = std::max(a.bellman_residual, b.bellman_residual);
  const double change = std::abs(a.value - b.value);
  return {residual <= 1e-8 && change < 1e-3,
          "Bellman residual " + fmt("%.3g", residual) + " (tol 1e-8), value " + fmt("%.6f", a.value) + " -> " +
              fmt("%.6f", b.value) + ", change " + fmt("%.3g", change) + " (tol 1e-3)"};
}

// 4. MSE of beta-hat falls like 1/N for both working correlations.
Outcome consistency() {
  const SyntheticEnvParams env;
  const double gamma = 0.9;
  const FeatureMap map(2, 1, 2);
  const OracleSolution oracle = value_iteration_oracle(env, GridSpec{}, EvalProtocol{}, derive_stream(404, {9}));
  std::ostringstream detail;
  bool pass = true;
  for (CorrelationKind kind : {CorrelationKind::identity, CorrelationKind::exchangeable}) {
    const char* name = kind == CorrelationKind::identity ? "identity" : "exchangeable";
    const Dataset big = simulate_synthetic(env, base_cell(5000, 5, 5), derive_stream(404, {1}));
    const FitReport ref = gfqi_fit(big, map, gamma, kind);
    // Cross-check: the reference greedy policy should be near-optimal.
    const EvalProtocol protocol;
    const RngStream eval_rng = derive_stream(404, {2});
    const ValueEstimate ref_value = mc_evaluate(Environment{env}, ref.q_estimate().policy(), protocol, eval_rng);
    const ValueEstimate opt_value = mc_evaluate(Environment{env}, oracle.policy(), protocol, eval_rng);
    const double ref_regret = regret(opt_value, ref_value);
    const bool ref_ok = ref.converged && ref_regret < 0.05 * std::abs(opt_value.mean_discounted);

    std::vector<double> mse;
    for (int n : {10, 40, 160}) {
      double total = 0.0;
      for (int r = 0; r < 100; ++r) {
        const Dataset data =
            simulate_synthetic(env, base_cell(n, 5, 5), derive_stream(404, {3, static_cast<std::uint64_t>(n), static_cast<std::uint64_t>(r)}));
        total += (gfqi_fit(data, map, gamma, kind).beta - ref.beta).squaredNorm();
      }
      mse.push_back(total / 100.0);
    }
    const double r1 = mse[0] / mse[1];
    const double r2 = mse[1] / mse[2];
    const bool ok = ref_ok && r1 >= 2.0 && r1 <= 8.0 && r2 >= 2.0 && r2 <= 8.0;
    pass = pass && ok;
    detail << name << ": MSE " << fmt("%.4g", mse[0]) << ", " << fmt("%.4g", mse[1]) << ", " << fmt("%.4g", mse[2])
           << " ratios " << fmt("%.2f", r1) << ", " << fmt("%.2f", r2) << " (range [2, 8]); reference regret "
           << fmt("%.4f", ref_regret) << " vs oracle value " << fmt("%.4f", opt_value.mean_discounted) << "; ";
  }
  return {pass, detail.str()};
}

RunConfig base_sweep_config(std::vector<double> n_values, std::vector<Learner> learners, int replications,
                            std::uint64_t seed) {
  RunConfig cfg;
  cfg.sweep.base = base_cell(5, 5, 5);
  cfg.sweep.base.seed = seed;
  cfg.sweep.axis = SweepAxis::n_clusters;
  cfg.sweep.values = std::move(n_values);
  cfg.sweep.learners = std::move(learners);
  cfg.sweep.replications = replications;
  cfg.validate();
  return cfg;
}

std::vector<ResultRow> load_rows(const fs::path& path) {
  std::vector<ResultRow> rows;
  for (auto& p : read_results_csv(path)) rows.push_back(std::move(p.row));
  return rows;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

// 10 runs first: its sweep output feeds criterion 5.
fs::path g_base_csv;

Outcome determinism() {
  const RunConfig cfg = base_sweep_config({5}, all_learners(), 50, 505);
  const fs::path a = scratch_dir() / "base_threads1.csv";
  const fs::path b = scratch_dir() / "base_threads4.csv";
  SweepOptions one;
  one.threads = 1;
  SweepOptions four;
  four.threads = 4;
  run_sweep(cfg, a, one);
  run_sweep(cfg, b, four);
  g_base_csv = a;
  const std::string sa = slurp(a), sb = slurp(b);
  const bool same = !sa.empty() && sa == sb;
  return {same, std::string(same ? "identical" : "different") + " CSVs from 1 and 4 threads (" +
                    std::to_string(sa.size()) + " bytes, " + std::to_string(load_rows(a).size()) + " rows)"};
}

// 5. GFQI-exchangeable beats FQI on the base cell.
Outcome efficiency() {
  if (g_base_csv.empty()) return {false, "base sweep unavailable"};
  const auto rows = load_rows(g_base_csv);
  std::vector<double> fqi(50, NAN), gfqi(50, NAN);
  for (const auto& r : rows) {
    if (r.learner == Learner::fqi) fqi[r.replication] = r.regret_discounted;
    if (r.learner == Learner::gfqi_exchangeable) gfqi[r.replication] = r.regret_discounted;
  }
  std::vector<double> diff;
  double mf = 0.0, mg = 0.0;
  for (int i = 0; i < 50; ++i) {
    if (!std::isfinite(fqi[i]) || !std::isfinite(gfqi[i])) return {false, "missing or failed replication"};
    diff.push_back(fqi[i] - gfqi[i]);
    mf += fqi[i] / 50.0;
    mg += gfqi[i] / 50.0;
  }
  const double p = testing::paired_t_pvalue_greater(diff);
  const double ratio = mg / mf;
  return {mg < mf && p < 0.05 && ratio <= 0.8,
          "mean discounted regret FQI " + fmt("%.4f", mf) + ", GFQI-exchangeable " + fmt("%.4f", mg) + ", ratio " +
              fmt("%.3f", ratio) + " (max 0.8), paired one-sided p = " + fmt("%.3g", p) + " (max 0.05)"};
}

// 6. Gap to the oracle at n = 30.
Outcome gap_closing() {
  const RunConfig cfg =
      base_sweep_config({5, 10, 15, 20, 25, 30}, {Learner::fqi, Learner::gfqi_exchangeable}, 50, 606);
  const fs::path out = scratch_dir() / "n_sweep.csv";
  run_sweep(cfg, out);
  const auto rows = load_rows(out);
  std::ostringstream detail;
  double gap_fqi = 0.0, gap_gfqi = 0.0;
  for (double n : cfg.sweep.values) {
    double f = 0.0, g = 0.0;
    int cf = 0, cg = 0;
    for (const auto& r : rows) {
      if (r.axis_value != n || !r.error.empty()) continue;
      if (r.learner == Learner::fqi) f += r.regret_average, ++cf;
      if (r.learner == Learner::gfqi_exchangeable) g += r.regret_average, ++cg;
    }
    f /= std::max(cf, 1);
    g /= std::max(cg, 1);
    detail << "n=" << n << ": " << fmt("%.4f", f) << "/" << fmt("%.4f", g) << " ";
    if (n == 30.0) {
      gap_fqi = f;
      gap_gfqi = g;
    }
  }
  const double share = gap_gfqi / gap_fqi;
  return {gap_fqi > 0.0 && share < 0.25, "average-reward gap FQI/GFQI " + detail.str() + "; share at n=30 " +
                                             fmt("%.3f", share) + " (max 0.25)"};
}

// 7. Sandwich diagonal against the replication variance.
Outcome sandwich_calibration() {
  const SyntheticEnvParams env;
  const FeatureMap map(2, 1, 2);
  std::ostringstream detail;
  bool pass = true;
  for (CorrelationKind kind : {CorrelationKind::exchangeable, CorrelationKind::identity}) {
    const int reps = 200;
    Eigen::MatrixXd betas(reps, map.dim());
    Eigen::VectorXd mean_diag = Eigen::VectorXd::Zero(map.dim());
    for (int r = 0; r < reps; ++r) {
      const Dataset data = simulate_synthetic(env, base_cell(40, 5, 5), derive_stream(707, {static_cast<std::uint64_t>(r)}));
      const FitReport rep = gfqi_fit(data, map, 0.9, kind);
      betas.row(r) = rep.beta.transpose();
      const BlockInstrument z = build_gfqi_instrument(build_design(data, map), rep.beta, 0.9, kind);
      mean_diag += sandwich_variance(data, map, rep.beta, z, 0.9).covariance.diagonal() / reps;
    }
    const Eigen::RowVectorXd mu = betas.colwise().mean();
    const Eigen::VectorXd emp = (betas.rowwise() - mu).colwise().squaredNorm().transpose() / (reps - 1);
    const Eigen::VectorXd ratio = mean_diag.cwiseQuotient(emp);
    const bool ok = ratio.minCoeff() >= 1.0 / 1.5 && ratio.maxCoeff() <= 1.5;
    pass = pass && ok;
    detail << (kind == CorrelationKind::identity ? "identity" : "exchangeable") << " ratios [";
    for (Eigen::Index i = 0; i < ratio.size(); ++i) detail << (i ? ", " : "") << fmt("%.2f", ratio[i]);
    detail << "] ";
  }
  return {pass, detail.str() + "(allowed [0.667, 1.5])"};
}

// 8. Exchangeable correlation estimator accuracy.
Outcome correlation_accuracy() {
  std::ostringstream detail;
  bool pass = true;
  for (double rho : {0.0, 0.3, 0.7, 0.94}) {
    RngStream rng = derive_stream(808, {static_cast<std::uint64_t>(rho * 100)});
    const int blocks = 10000, m = 5;
    TdBatch td;
    td.cluster_size = m;
    td.residuals.resize(blocks * m);
    for (int b = 0; b < blocks; ++b) {
      const double shared = rng.normal();
      for (int j = 0; j < m; ++j) td.residuals[b * m + j] = std::sqrt(rho) * shared + std::sqrt(1.0 - rho) * rng.normal();
    }
    const double est = estimate_exchangeable(td).covariance.correlation.rho;
    pass = pass && std::abs(est - rho) <= 0.03;
    detail << fmt("%.2f", rho) << " -> " << fmt("%.4f", est) << "  ";
  }
  return {pass, detail.str() + "(tol 0.03)"};
}

// 9. With M = 1 and gamma = 0 every learner is ordinary least squares.
Outcome ols_equivalence() {
  const Dataset data = simulate_synthetic({}, base_cell(60, 1, 5), derive_stream(909, {0}));
  const FeatureMap map(2, 1, 2);
  Eigen::MatrixXd x(data.n_transitions(), map.dim());
  Eigen::VectorXd y(data.n_transitions());
  int row = 0;
  for (const auto& block : data.blocks()) {
    for (const auto& tr : block.members) {
      x.row(row) = map.featurize(tr.action, tr.state).transpose();
      y[row++] = tr.reward;
    }
  }
  const Eigen::VectorXd ols = x.jacobiSvd(Eigen::ComputeThinU | Eigen::ComputeThinV).solve(y);
  double worst = 0.0;
  for (Learner l : all_learners()) worst = std::max(worst, (fit(l, data, map, 0.0).beta - ols).lpNorm<Eigen::Infinity>());
  const Design design = build_design(data, map);
  const auto direct = solve_estimating_equation(design, BlockInstrument{design.current, 1},
                                                Eigen::VectorXd::Zero(map.dim()), 0.0);
  worst = std::max(worst, (direct.beta - ols).lpNorm<Eigen::Infinity>());
  return {worst <= 1e-10, "4 learners + direct solve, max |beta - beta_ols| = " + fmt("%.3g", worst) +
                              " (tol 1e-10)"};
}

}  // namespace

int main() {
  struct Criterion {
    int id;
    const char* name;
    std::function<Outcome()> run;
  };
  const std::vector<Criterion> criteria = {
      {1, "agtd-reduction", agtd_reduction},
      {2, "exchangeable-inverse", exchangeable_inverse},
      {3, "oracle-validity", oracle_validity},
      {4, "consistency", consistency},
      {10, "determinism", determinism},
      {5, "efficiency", efficiency},
      {6, "gap-closing", gap_closing},
      {7, "sandwich-calibration", sandwich_calibration},
      {8, "correlation-accuracy", correlation_accuracy},
      {9, "ols-equivalence", ols_equivalence},
  };
  std::vector<std::pair<int, std::string>> lines;
  int failures = 0;
  for (const auto& c : criteria) {
    const auto start = std::chrono::steady_clock::now();
    Outcome o;
    try {
      o = c.run();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    std::ostringstream line;
    line << (o.pass ? "PASS" : "FAIL") << " criterion " << c.id << " " << c.name << ": " << o.detail << " ["
         << fmt("%.1f", secs) << " s]";
    std::cout << line.str() << std::endl;
    lines.emplace_back(c.id, line.str());
    failures += o.pass ? 0 : 1;
  }
  std::sort(lines.begin(), lines.end());
  std::cout << "\nSummary:\n";
  for (const auto& [id, l] : lines) std::cout << l.substr(0, 4) << " " << id << '\n';
  return failures == 0 ? 0 : 1;
}

#pragma once

// Policy evaluation: Monte-Carlo returns, a grid value-iteration oracle,
// regret, the plug-in sandwich covariance and degree selection by CV.

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <json.hpp>

#include "gfqi/core.hpp"
#include "gfqi/envs.hpp"
#include "gfqi/features.hpp"
#include "gfqi/gee.hpp"
#include "gfqi/learners.hpp"

namespace gfqi {

/// Smallest h with gamma^h * reward_bound < 1e-6.
int truncation_horizon(double gamma, double reward_bound = 10.0);

struct EvalProtocol {
  double gamma = 0.9;
  int n_traj = 100;
  int horizon = 0;              // 0: truncation_horizon(gamma, reward_bound)
  bool fixed_1000 = false;      // literal 1000-step rollouts
  double reward_bound = 10.0;
  bool omit_reward_residuals = true;

  int resolved_horizon() const;
  void validate() const;
  nlohmann::json to_json() const;
  static EvalProtocol from_json(const nlohmann::json& j);
};

struct ValueEstimate {
  double mean_discounted = 0.0;
  double mean_average_reward = 0.0;
  double std_error = 0.0;          // of the discounted return
  double std_error_average = 0.0;  // of the per-trajectory average reward
  int n_traj = 0;
  int horizon = 0;
  double gamma = 0.0;

  nlohmann::json to_json() const;
};

/// Summaries of per-trajectory reward sequences.
ValueEstimate summarize_rollouts(const std::vector<std::vector<double>>& rewards, double gamma);

/// Rollouts split over `threads` workers; each trajectory uses its own
/// derived stream, so the result does not depend on the thread count.
ValueEstimate mc_evaluate(const ScalarModel& model, const Policy& policy, double gamma, int n_traj, int horizon,
                          const RngStream& rng, bool omit_reward_residuals = true, int threads = 1);
ValueEstimate mc_evaluate(const Environment& env, const Policy& policy, double gamma, int n_traj, int horizon,
                          const RngStream& rng, bool omit_reward_residuals = true, int threads = 1);
ValueEstimate mc_evaluate(const Environment& env, const Policy& policy, const EvalProtocol& protocol,
                          const RngStream& rng, int threads = 1);

struct GridSpec {
  double lo = -6.0;
  double hi = 6.0;
  int points = 601;
  int quadrature_nodes = 21;
  int max_sweeps = 100000;
  double tol = 1e-8;

  void validate() const;
  nlohmann::json to_json() const;
  static GridSpec from_json(const nlohmann::json& j);
};

/// Gauss-Hermite rule for E[f(Z)], Z ~ N(0, 1): nodes and probability
/// weights (summing to 1), from the Golub-Welsch eigenproblem.
struct GaussHermite {
  std::vector<double> nodes;
  std::vector<double> weights;
};
GaussHermite gauss_hermite_normal(int n);

struct OracleSolution {
  std::vector<double> grid;
  Eigen::MatrixXd q;  // grid points x actions
  double gamma = 0.0;
  double bellman_residual = 0.0;
  int sweeps = 0;
  double value = 0.0;  // Monte-Carlo discounted value of the greedy policy
  ValueEstimate value_estimate;

  /// Linear interpolation in s, clamped at the grid edges.
  double q_value(int action, double s) const;
  int greedy_action(double s) const;
  Policy policy() const;
  nlohmann::json to_json() const;
  static OracleSolution from_json(const nlohmann::json& j);
};

/// Value iteration on the grid with Gauss-Hermite integration of the state
/// noise. Throws OracleError if the sup-norm Bellman residual does not reach
/// grid.tol within grid.max_sweeps.
OracleSolution solve_oracle_q(const ScalarModel& model, double gamma, const GridSpec& grid);

/// solve_oracle_q plus the Monte-Carlo value of the greedy policy under the
/// protocol, drawn from `eval_rng`.
OracleSolution value_iteration_oracle(const Environment& env, const GridSpec& grid, const EvalProtocol& protocol,
                                      const RngStream& eval_rng, int threads = 1);

/// Loads a cached solution keyed by a hash of (env, grid, protocol, seed) or
/// builds and stores it. An empty cache_dir disables caching.
OracleSolution cached_oracle(const Environment& env, const GridSpec& grid, const EvalProtocol& protocol,
                             std::uint64_t eval_seed, const std::filesystem::path& cache_dir, int threads = 1);
std::string oracle_cache_key(const Environment& env, const GridSpec& grid, const EvalProtocol& protocol,
                             std::uint64_t eval_seed);

enum class ValueMetric { discounted, average_reward };

/// Reference value minus policy value; not clipped at zero. Throws
/// InputError if the estimates were produced under different protocols.
double regret(const ValueEstimate& reference, const ValueEstimate& policy_value,
              ValueMetric metric = ValueMetric::discounted);
double regret(const OracleSolution& oracle, const ValueEstimate& policy_value,
              ValueMetric metric = ValueMetric::discounted);

struct SandwichEstimate {
  Eigen::MatrixXd W_hat;
  Eigen::MatrixXd Sigma_hat;
  Eigen::MatrixXd covariance;
  int n_blocks = 0;
};

/// W_hat = avg_b (1-gamma)^{-1} M^{-1} Phi_b (phi_b - gamma phi_b(pi(S'), S'))^T
/// Sigma_hat = M^{-1} avg_b Phi_b delta_b delta_b^T Phi_b^T
/// covariance = N^{-1} G^{-1} S G^{-T}, G = (1-gamma) M W_hat, S = M Sigma_hat,
/// with N the number of blocks and pi greedy in beta_hat.
/// Throws SingularSystemError when W_hat is singular.
SandwichEstimate sandwich_variance(const Dataset& data, const FeatureMap& map, const Eigen::VectorXd& beta_hat,
                                   const BlockInstrument& instrument, double gamma);

struct DegreeSelection {
  int degree = 0;
  std::vector<int> candidates;
  std::vector<std::optional<double>> cv_scores;  // empty when disqualified
  std::vector<std::string> warnings;
};

/// K-fold CV over clusters. Each candidate is fitted on K-1 folds and scored
/// by the held-out mean squared TD residual delta(beta_hat, beta_hat). A
/// candidate that is singular on any fold is disqualified; if all are, the
/// smallest candidate is returned with a warning.
DegreeSelection select_degree(const Dataset& data, Learner learner, double gamma, std::span<const int> degrees,
                              int folds, RngStream rng, const FitControls& controls = {});

}  // namespace gfqi

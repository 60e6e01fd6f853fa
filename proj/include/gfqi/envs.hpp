#pragma once

// Clustered-MDP simulators. Members of a cluster share time-local Gaussian
// shocks on states and rewards; shocks are independent over time, so every
// member's trajectory is marginally an ordinary MDP.

#include <functional>
#include <optional>
#include <span>
#include <variant>
#include <vector>

#include <Eigen/Dense>
#include <json.hpp>

#include "gfqi/core.hpp"
#include "gfqi/features.hpp"

namespace gfqi {

/// S' = state_coef * S * (2A - 1) + beta_t,
/// R  = reward_quad_coef * S^2 * (2A - 1) + S + alpha_t + eps_m,
/// with beta_t ~ N(0, sigma1_sq), alpha_t ~ N(0, sigma3_sq) shared by the
/// cluster and eps_m ~ N(0, sigma2_sq) per member.
struct SyntheticEnvParams {
  double state_coef = 0.5;
  double reward_quad_coef = 0.25;
  double sigma1_sq = 0.25;
  double sigma2_sq = 0.25;
  double sigma3_sq = 4.0;
  double init_state_mean = 0.0;
  double init_state_std = 1.0;

  void validate() const;
};

/// Polynomial mean models with a psi-scaled split of the noise variances:
///   [individual, cluster] state variances  = sigma_s_sq * [1 - psi rho_s_sq, psi rho_s_sq]
///   [individual, cluster] reward variances = sigma_r_sq * [1 - psi rho_r_sq, psi rho_r_sq]
/// so the marginal variances do not depend on psi.
struct SemiSyntheticEnvParams {
  /// transition_coefs[a][k] multiplies S^k in f(S, a).
  std::vector<std::vector<double>> transition_coefs;
  /// reward_coefs[a][k] multiplies S^k in R(S, a).
  std::vector<std::vector<double>> reward_coefs;
  double sigma_s_sq = 11.5;
  double rho_s_sq = 0.07;
  double sigma_r_sq = 2.2;
  double rho_r_sq = 0.09;
  double psi = 1.0;
  double init_state_mean = 0.0;
  double init_state_std = 1.0;

  int action_count() const { return static_cast<int>(transition_coefs.size()); }
  double state_individual_var() const { return sigma_s_sq * (1.0 - psi * rho_s_sq); }
  double state_cluster_var() const { return sigma_s_sq * psi * rho_s_sq; }
  double reward_individual_var() const { return sigma_r_sq * (1.0 - psi * rho_r_sq); }
  double reward_cluster_var() const { return sigma_r_sq * psi * rho_r_sq; }
  double transition_mean(int action, double s) const;
  double reward_mean(int action, double s) const;

  void validate() const;
};

/// Shipped smoke-test coefficients: binary action, quadratic reward model,
/// linear stable transition, noise levels of the mobile-health study.
SemiSyntheticEnvParams default_semi_synthetic();

using Environment = std::variant<SyntheticEnvParams, SemiSyntheticEnvParams>;

/// Single-trajectory view of a scalar environment: mean laws plus the
/// marginal (cluster + individual) noise scales.
struct ScalarModel {
  int action_count = 2;
  std::function<double(int, double)> reward_mean;
  std::function<double(int, double)> transition_mean;
  double state_noise_std = 0.0;
  double reward_noise_std = 0.0;
  double init_mean = 0.0;
  double init_std = 1.0;
};

ScalarModel scalar_model(const Environment& env);
int action_count(const Environment& env);

/// {"type": "synthetic" | "semi_synthetic", ...params}; absent keys keep
/// their defaults.
nlohmann::json env_to_json(const Environment& env);
Environment env_from_json(const nlohmann::json& j);

/// A decision rule; stochastic rules draw from the supplied stream.
using Policy = std::function<int(std::span<const double>, RngStream&)>;

struct BehaviorPolicy {
  enum class Kind { uniform, epsilon_greedy, fixed_action };
  Kind kind = Kind::uniform;
  double epsilon = 0.0;                    // epsilon_greedy
  Eigen::VectorXd beta;                    // epsilon_greedy
  std::optional<FeatureMap> features;      // epsilon_greedy
  int action = 0;                          // fixed_action

  static BehaviorPolicy uniform() { return {}; }
  static BehaviorPolicy epsilon_greedy(Eigen::VectorXd beta, FeatureMap map, double epsilon);
  static BehaviorPolicy fixed(int action);

  std::vector<double> probabilities(std::span<const double> state, int action_count) const;
  int sample(std::span<const double> state, int action_count, RngStream& rng) const;
};

Dataset simulate_synthetic(const SyntheticEnvParams& params, const ExperimentConfig& config, RngStream rng,
                           const BehaviorPolicy& behavior = BehaviorPolicy::uniform());
Dataset simulate_semi_synthetic(const SemiSyntheticEnvParams& params, const ExperimentConfig& config,
                                RngStream rng, const BehaviorPolicy& behavior = BehaviorPolicy::uniform());
/// Dispatches on the environment; for the semi-synthetic env config.psi
/// replaces params.psi.
Dataset simulate(const Environment& env, const ExperimentConfig& config, RngStream rng,
                 const BehaviorPolicy& behavior = BehaviorPolicy::uniform());

/// Independent single-trajectory rollouts. Trajectory k draws its initial
/// state and shocks from rng.derive({k}) and its actions from
/// rng.derive({k, 1}), so different policies see the same shocks. With
/// omit_reward_residuals the reward noise is zeroed (state noise is kept).
std::vector<std::vector<double>> rollout_policy(const Environment& env, const Policy& policy, int n_traj,
                                                int horizon, const RngStream& rng,
                                                bool omit_reward_residuals);
/// Trajectories first_traj .. first_traj + n_traj - 1 of the same family.
std::vector<std::vector<double>> rollout_policy(const ScalarModel& model, const Policy& policy, int n_traj,
                                                int horizon, const RngStream& rng,
                                                bool omit_reward_residuals, int first_traj = 0);

Policy constant_policy(int action);
Policy uniform_policy(int action_count);

}  // namespace gfqi

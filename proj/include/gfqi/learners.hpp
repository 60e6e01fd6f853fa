#pragma once

// Linear Q-learning loops over clustered data: fitted Q-iteration, the
// adapted generalized-TD learner and generalized FQI with a working
// correlation.

#include <string>
#include <string_view>
#include <vector>

#include <Eigen/Dense>
#include <json.hpp>

#include "gfqi/core.hpp"
#include "gfqi/envs.hpp"
#include "gfqi/features.hpp"
#include "gfqi/gee.hpp"

namespace gfqi {

enum class Learner { fqi, agtd, gfqi_identity, gfqi_exchangeable };

std::string_view learner_name(Learner learner);
/// Accepts "fqi", "agtd", "gfqi-identity", "gfqi-exchangeable".
Learner parse_learner(std::string_view name);
const std::vector<Learner>& all_learners();

enum class SigmaMode { pooled, regression };

struct FitControls {
  int max_iters = 0;  // 0: default_max_iters
  double tol = 1e-6;
  SigmaMode sigma_mode = SigmaMode::pooled;
};

/// max(ceil(2 ln N / ln(1/gamma)), 100) with N the number of block tuples.
int default_max_iters(int n_blocks, double gamma);

struct QEstimate {
  Eigen::VectorXd beta;
  FeatureMap map;
  double gamma = 0.0;

  double q(int action, std::span<const double> state) const;
  /// argmax_a q(a, s), lowest index on ties.
  int greedy_action(std::span<const double> state) const;
  Policy policy() const;
};

/// Linear regression of phi(pi(S'), S') on (1, phi(A, S)).
struct PhiStarModel {
  FeatureMap map;
  double gamma = 0.0;
  Eigen::MatrixXd coef;  // (1 + d) x d; row 0 is the intercept

  Eigen::VectorXd predict(int action, std::span<const double> state) const;
  Eigen::VectorXd phi_star(int action, std::span<const double> state) const;
  /// Predictions for design rows (N x d in, N x d out).
  Eigen::MatrixXd predict_rows(const Eigen::MatrixXd& current) const;
};

PhiStarModel estimate_phi_star(const Dataset& data, const FeatureMap& map, const Eigen::VectorXd& beta,
                               double gamma);

struct FitReport {
  std::string learner;
  FeatureMap map{2, 1, 2};
  double gamma = 0.0;
  Eigen::VectorXd beta;
  int iterations = 0;
  bool converged = false;
  double final_delta = 0.0;
  double rho_hat = 0.0;     // exchangeable GFQI only
  double sigma_hat = 0.0;   // pooled TD standard deviation at the last iteration
  double condition_diag = 1.0;
  std::vector<std::string> warnings;

  QEstimate q_estimate() const { return {beta, map, gamma}; }
  nlohmann::json to_json() const;
  static FitReport from_json(const nlohmann::json& j);
};

FitReport fqi_fit(const Dataset& data, const FeatureMap& map, double gamma, const FitControls& controls = {});
FitReport agtd_fit(const Dataset& data, const FeatureMap& map, double gamma, const FitControls& controls = {});
FitReport gfqi_fit(const Dataset& data, const FeatureMap& map, double gamma, CorrelationKind correlation,
                   const FitControls& controls = {});
FitReport fit(Learner learner, const Dataset& data, const FeatureMap& map, double gamma,
              const FitControls& controls = {});

struct StepResult {
  Eigen::VectorXd beta;
  double condition = 1.0;
  double rho_hat = 0.0;
  double sigma_hat = 0.0;
  std::vector<std::string> warnings;
};

/// One iteration of a learner's update map: nuisances are estimated from
/// beta_current (greedy policy, phi*) and the TD residuals
/// delta(beta_current, beta_previous); the solve targets beta_current.
StepResult learner_step(Learner learner, const Design& design, const Eigen::VectorXd& beta_current,
                        const Eigen::VectorXd& beta_previous, double gamma, const FitControls& controls = {});

/// GFQI instrument at a converged beta (residuals use beta as both eval and
/// target). Used by the sandwich estimator.
BlockInstrument build_gfqi_instrument(const Design& design, const Eigen::VectorXd& beta, double gamma,
                                      CorrelationKind correlation, const FitControls& controls = {});

}  // namespace gfqi

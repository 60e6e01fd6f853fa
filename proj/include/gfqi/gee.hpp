#pragma once

// Working-correlation machinery for the cluster-wise estimating equation:
// TD residuals, exchangeable correlation estimation, V = B C B and its
// inverse, and the linear solve of one generalized FQI iteration.

#include <string>
#include <vector>

#include <Eigen/Dense>

#include "gfqi/core.hpp"
#include "gfqi/features.hpp"

namespace gfqi {

enum class CorrelationKind { identity, exchangeable };

/// Valid exchangeable range is (-1/(M-1), 1); estimates are clamped this far
/// inside it so C stays positive definite.
inline constexpr double kRhoClampMargin = 1e-6;
/// Systems with a condition number above this are treated as singular.
inline constexpr double kMaxCondition = 1e12;

double clamp_exchangeable_rho(double rho, int cluster_size);

struct WorkingCorrelation {
  CorrelationKind kind = CorrelationKind::identity;
  double rho = 0.0;

  static WorkingCorrelation identity() { return {}; }
  /// Exchangeable correlation with rho clamped for the given cluster size.
  static WorkingCorrelation exchangeable(double rho, int cluster_size);

  Eigen::MatrixXd matrix(int cluster_size) const;
  /// Closed-form C^{-1}.
  Eigen::MatrixXd inverse_matrix(int cluster_size) const;
  double condition(int cluster_size) const;
};

/// V = B C B with B = diag(sigma).
struct WorkingCovariance {
  Eigen::VectorXd sigma;
  WorkingCorrelation correlation;

  int cluster_size() const { return static_cast<int>(sigma.size()); }
  Eigen::MatrixXd assemble() const;
  /// Throws InputError unless every sigma is finite and > 0.
  void validate() const;
};

/// Cluster-wise TD residuals; entries [b*M, (b+1)*M) belong to block b.
struct TdBatch {
  Eigen::VectorXd residuals;
  int cluster_size = 1;

  int n_blocks() const { return static_cast<int>(residuals.size()) / cluster_size; }
  auto block(int b) const { return residuals.segment(static_cast<Eigen::Index>(b) * cluster_size, cluster_size); }
};

/// delta_j = R_j + gamma * max_a phi(a, S'_j)^T beta_target - phi(A_j, S_j)^T beta_eval.
TdBatch td_residuals(const Dataset& data, const FeatureMap& map, const Eigen::VectorXd& beta_eval,
                     const Eigen::VectorXd& beta_target, double gamma);
TdBatch td_residuals(const Design& design, const Eigen::VectorXd& beta_eval,
                     const Eigen::VectorXd& beta_target, double gamma);

struct CovarianceEstimate {
  WorkingCovariance covariance;
  double sigma2 = 0.0;   // pooled residual variance
  double rho_raw = 0.0;  // moment estimate before clamping
  std::vector<std::string> warnings;
};

/// Pooled variance and exchangeable correlation from the residuals:
/// sigma2 = mean(delta^2), rho = mean over blocks and pairs j<k of
/// delta_j delta_k, divided by sigma2, then clamped. Falls back to identity
/// (with a warning) when M < 2 or all residuals vanish.
CovarianceEstimate estimate_exchangeable(const TdBatch& td);
/// Pooled variance with identity correlation.
CovarianceEstimate estimate_identity(const TdBatch& td);

/// Same moment estimators on residuals standardized by a per-row sigma.
CovarianceEstimate estimate_standardized(const TdBatch& td, const Eigen::VectorXd& row_sigma,
                                         CorrelationKind kind);

/// Per-row TD standard deviations from a regression of squared residuals on
/// phi(A, S); fitted variances are floored at 1e-6.
Eigen::VectorXd estimate_sigma_regression(const Design& design, const TdBatch& td);

struct CovarianceInverse {
  Eigen::MatrixXd inverse;
  double condition = 1.0;
  bool jittered = false;
};

/// V^{-1} = B^{-1} C^{-1} B^{-1} using the closed-form exchangeable inverse.
/// If cond(V) > 1e12 the diagonal gets 1e-8 tr(V)/M of jitter, the inverse
/// is computed numerically and `jittered` is set.
CovarianceInverse invert_covariance(const WorkingCovariance& cov);

/// Per-block d x M instruments, stored transposed and stacked: rows
/// [b*M, (b+1)*M) of `stacked` hold Phi_b^T.
struct BlockInstrument {
  Eigen::MatrixXd stacked;
  int cluster_size = 1;

  int n_blocks() const { return static_cast<int>(stacked.rows()) / cluster_size; }
  Eigen::MatrixXd block(int b) const {
    return stacked.middleRows(static_cast<Eigen::Index>(b) * cluster_size, cluster_size).transpose();
  }
  static BlockInstrument from_blocks(const std::vector<Eigen::MatrixXd>& blocks);
};

/// Phi_b = [rows of block b]^T * V^{-1} for a covariance shared by all blocks.
BlockInstrument weight_instrument(const Eigen::MatrixXd& feature_rows, const Eigen::MatrixXd& v_inverse,
                                  int cluster_size);
/// Phi_b = [rows of block b]^T * (B_b C B_b)^{-1} with B_b from per-row sigma.
BlockInstrument weight_instrument(const Eigen::MatrixXd& feature_rows, const Eigen::VectorXd& row_sigma,
                                  const WorkingCorrelation& correlation, int cluster_size,
                                  int* jittered_blocks = nullptr);

struct EquationSolution {
  Eigen::VectorXd beta;
  double condition = 1.0;
  double residual_norm = 0.0;  // ||A beta - rhs||
  double rhs_norm = 0.0;
};

/// Solves sum_b Phi_b [R_b + gamma max-target_b - phi_b^T beta] = 0.
/// Throws SingularSystemError (carrying the condition estimate) when
/// A = sum_b Phi_b phi_b^T is singular or cond(A) > 1e12.
EquationSolution solve_estimating_equation(const Dataset& data, const FeatureMap& map,
                                           const BlockInstrument& instrument,
                                           const Eigen::VectorXd& beta_target, double gamma);
EquationSolution solve_estimating_equation(const Design& design, const BlockInstrument& instrument,
                                           const Eigen::VectorXd& beta_target, double gamma);

/// Condition number of a square matrix via singular values (inf if singular).
double condition_number(const Eigen::MatrixXd& a);

/// sum_b Z_b^T X_b over blocks with a fixed pairwise tree.
Eigen::MatrixXd blockwise_cross(const Eigen::MatrixXd& z, const Eigen::MatrixXd& x, int cluster_size);

}  // namespace gfqi

#pragma once

#include <span>
#include <vector>

#include <Eigen/Dense>

#include "gfqi/core.hpp"

namespace gfqi {

/// State-action basis phi(a, s): one polynomial block per action, only the
/// block of the taken action is nonzero. Each block holds an intercept plus
/// s_k^1..s_k^degree for every state coordinate k (no cross terms).
class FeatureMap {
 public:
  FeatureMap(int action_count, int state_dim, int degree);

  int action_count() const noexcept { return action_count_; }
  int state_dim() const noexcept { return state_dim_; }
  int degree() const noexcept { return degree_; }
  int block_size() const noexcept { return 1 + state_dim_ * degree_; }
  int dim() const noexcept { return action_count_ * block_size(); }

  Eigen::VectorXd featurize(int action, std::span<const double> state) const;
  /// Writes phi(a, s) into `out` (length dim()); out must be zero-initialized
  /// outside the action's block.
  void featurize_into(int action, std::span<const double> state, Eigen::Ref<Eigen::VectorXd> out) const;
  /// d x M matrix whose column m is featurize of member m.
  Eigen::MatrixXd featurize_block(const ClusterBlock& block) const;

  bool operator==(const FeatureMap&) const = default;

 private:
  void check(int action, std::span<const double> state) const;

  int action_count_;
  int state_dim_;
  int degree_;
};

/// Flattened design for a dataset under a feature map. Row b*M + m refers to
/// member m of block b.
struct Design {
  int n_blocks = 0;
  int cluster_size = 0;
  int action_count = 0;
  int dim = 0;
  Eigen::MatrixXd current;                 // rows phi(A, S)
  std::vector<Eigen::MatrixXd> next;       // per action a: rows phi(a, S')
  Eigen::VectorXd rewards;

  int rows() const noexcept { return n_blocks * cluster_size; }
};

Design build_design(const Dataset& data, const FeatureMap& map);

/// Greedy next-state actions under beta, lowest index on ties.
std::vector<int> greedy_next_actions(const Design& design, const Eigen::VectorXd& beta);
/// max_a phi(a, S')^T beta for every row.
Eigen::VectorXd max_next_q(const Design& design, const Eigen::VectorXd& beta);
/// Rows phi(pi(S'), S') for the given per-row actions.
Eigen::MatrixXd next_features(const Design& design, const std::vector<int>& actions);

}  // namespace gfqi

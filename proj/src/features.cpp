#include "gfqi/features.hpp"

#include <string>

namespace gfqi {

FeatureMap::FeatureMap(int action_count, int state_dim, int degree)
    : action_count_(action_count), state_dim_(state_dim), degree_(degree) {
  if (action_count < 1 || state_dim < 1 || degree < 1) {
    throw InputError("feature map requires action_count, state_dim, degree >= 1");
  }
}

void FeatureMap::check(int action, std::span<const double> state) const {
  if (action < 0 || action >= action_count_) {
    throw InputError("action " + std::to_string(action) + " outside [0, " +
                     std::to_string(action_count_) + ")");
  }
  if (static_cast<int>(state.size()) != state_dim_) {
    throw InputError("state has dimension " + std::to_string(state.size()) + ", expected " +
                     std::to_string(state_dim_));
  }
}

void FeatureMap::featurize_into(int action, std::span<const double> state,
                                Eigen::Ref<Eigen::VectorXd> out) const {
  check(action, state);
  const int base = action * block_size();
  out[base] = 1.0;
  int idx = base + 1;
  for (double s : state) {
    double power = 1.0;
    for (int g = 1; g <= degree_; ++g) {
      power *= s;
      out[idx++] = power;
    }
  }
}

Eigen::VectorXd FeatureMap::featurize(int action, std::span<const double> state) const {
  Eigen::VectorXd out = Eigen::VectorXd::Zero(dim());
  featurize_into(action, state, out);
  return out;
}

Eigen::MatrixXd FeatureMap::featurize_block(const ClusterBlock& block) const {
  Eigen::MatrixXd out = Eigen::MatrixXd::Zero(dim(), static_cast<Eigen::Index>(block.members.size()));
  for (std::size_t m = 0; m < block.members.size(); ++m) {
    const auto& tr = block.members[m];
    featurize_into(tr.action, tr.state, out.col(static_cast<Eigen::Index>(m)));
  }
  return out;
}

Design build_design(const Dataset& data, const FeatureMap& map) {
  if (map.action_count() != data.action_count() || map.state_dim() != data.state_dim()) {
    throw InputError("feature map does not match the dataset's action count / state dimension");
  }
  Design d;
  d.n_blocks = data.n_blocks();
  d.cluster_size = data.cluster_size();
  d.action_count = data.action_count();
  d.dim = map.dim();
  const Eigen::Index rows = d.rows();
  d.current = Eigen::MatrixXd::Zero(rows, d.dim);
  d.next.assign(d.action_count, Eigen::MatrixXd::Zero(rows, d.dim));
  d.rewards.resize(rows);
  Eigen::VectorXd buf(d.dim);
  Eigen::Index r = 0;
  for (const auto& block : data.blocks()) {
    for (const auto& tr : block.members) {
      buf.setZero();
      map.featurize_into(tr.action, tr.state, buf);
      d.current.row(r) = buf.transpose();
      for (int a = 0; a < d.action_count; ++a) {
        buf.setZero();
        map.featurize_into(a, tr.next_state, buf);
        d.next[a].row(r) = buf.transpose();
      }
      d.rewards[r] = tr.reward;
      ++r;
    }
  }
  return d;
}

namespace {

void check_beta(const Design& design, const Eigen::VectorXd& beta) {
  if (beta.size() != design.dim) {
    throw InputError("coefficient vector has length " + std::to_string(beta.size()) +
                     ", expected " + std::to_string(design.dim));
  }
}

}  // namespace

std::vector<int> greedy_next_actions(const Design& design, const Eigen::VectorXd& beta) {
  check_beta(design, beta);
  const Eigen::Index rows = design.rows();
  std::vector<int> best(rows, 0);
  Eigen::VectorXd best_q = design.next[0] * beta;
  for (int a = 1; a < design.action_count; ++a) {
    const Eigen::VectorXd q = design.next[a] * beta;
    for (Eigen::Index r = 0; r < rows; ++r) {
      if (q[r] > best_q[r]) {
        best_q[r] = q[r];
        best[r] = a;
      }
    }
  }
  return best;
}

Eigen::VectorXd max_next_q(const Design& design, const Eigen::VectorXd& beta) {
  check_beta(design, beta);
  Eigen::VectorXd best = design.next[0] * beta;
  for (int a = 1; a < design.action_count; ++a) {
    best = best.cwiseMax(design.next[a] * beta);
  }
  return best;
}

Eigen::MatrixXd next_features(const Design& design, const std::vector<int>& actions) {
  Eigen::MatrixXd out(design.rows(), design.dim);
  for (Eigen::Index r = 0; r < design.rows(); ++r) {
    out.row(r) = design.next[actions[r]].row(r);
  }
  return out;
}

}  // namespace gfqi

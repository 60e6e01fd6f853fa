#pragma once

// Shared data model: transitions grouped into cluster blocks, the dataset
// container, experiment configuration and the seeded random stream contract.

#include <cstdint>
#include <initializer_list>
#include <random>
#include <span>
#include <vector>

#include "gfqi/errors.hpp"

namespace gfqi {

struct Transition {
  std::vector<double> state;
  int action = 0;
  double reward = 0.0;
  std::vector<double> next_state;
};

/// All members of one cluster observed at one decision time.
struct ClusterBlock {
  int cluster_id = 0;
  int time = 0;
  std::vector<Transition> members;
};

/// Immutable collection of cluster blocks with equal cluster size.
///
/// Construction validates that every cluster contributes exactly one block per
/// decision time, that all blocks have the same number of members, and that
/// actions and state dimensions are consistent. Ragged clusters are rejected.
class Dataset {
 public:
  Dataset(std::vector<ClusterBlock> blocks, int cluster_size, int horizon, int action_count,
          int state_dim);

  const std::vector<ClusterBlock>& blocks() const noexcept { return blocks_; }
  int n_clusters() const noexcept { return n_clusters_; }
  int cluster_size() const noexcept { return cluster_size_; }
  int horizon() const noexcept { return horizon_; }
  int action_count() const noexcept { return action_count_; }
  int state_dim() const noexcept { return state_dim_; }
  /// Number of block tuples (cluster x time).
  int n_blocks() const noexcept { return static_cast<int>(blocks_.size()); }
  /// Number of individual transitions.
  int n_transitions() const noexcept { return n_blocks() * cluster_size_; }

  /// Distinct cluster ids in order of first appearance.
  std::vector<int> cluster_ids() const;
  /// Dataset restricted to the given clusters (block order preserved).
  Dataset subset(std::span<const int> cluster_ids) const;

 private:
  std::vector<ClusterBlock> blocks_;
  int n_clusters_ = 0;
  int cluster_size_ = 0;
  int horizon_ = 0;
  int action_count_ = 0;
  int state_dim_ = 0;
};

struct ExperimentConfig {
  int n_clusters = 5;
  int cluster_size = 5;
  int horizon = 5;
  double psi = 1.0;
  double gamma = 0.9;
  int degree = 2;
  int max_iters = 0;  // 0 selects the iteration-count default of the learner
  double tol = 1e-6;
  std::uint64_t seed = 0;
  int replications = 50;

  /// Throws ConfigError when an invariant is violated.
  void validate() const;
};

/// Seeded random stream. A value type: copying duplicates the generator state.
///
/// Streams are identified by (seed, stream_id) where the id is a hash of a
/// label path, so replications can derive independent streams without any
/// shared generator.
class RngStream {
 public:
  RngStream(std::uint64_t seed, std::uint64_t stream_id);

  std::uint64_t seed() const noexcept { return seed_; }
  std::uint64_t stream_id() const noexcept { return stream_id_; }

  /// Child stream whose id extends this stream's label path.
  RngStream derive(std::initializer_list<std::uint64_t> labels) const;
  RngStream derive(std::span<const std::uint64_t> labels) const;

  double normal();
  double normal(double mean, double sd) { return mean + sd * normal(); }
  double uniform();
  int uniform_int(int n);
  std::uint64_t next_u64() { return engine_(); }

 private:
  std::uint64_t seed_;
  std::uint64_t stream_id_;
  std::mt19937_64 engine_;
  std::normal_distribution<double> normal_{0.0, 1.0};
};

RngStream derive_stream(std::uint64_t seed, std::span<const std::uint64_t> labels);
RngStream derive_stream(std::uint64_t seed, std::initializer_list<std::uint64_t> labels);

std::uint64_t splitmix64(std::uint64_t x) noexcept;

}  // namespace gfqi

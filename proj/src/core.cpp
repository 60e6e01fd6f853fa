#include "gfqi/core.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <string>
#include <unordered_set>

namespace gfqi {

Dataset::Dataset(std::vector<ClusterBlock> blocks, int cluster_size, int horizon,
                 int action_count, int state_dim)
    : blocks_(std::move(blocks)),
      cluster_size_(cluster_size),
      horizon_(horizon),
      action_count_(action_count),
      state_dim_(state_dim) {
  if (cluster_size < 1 || horizon < 1 || action_count < 1 || state_dim < 1) {
    throw InputError("dataset counts must all be >= 1");
  }
  std::map<int, std::vector<int>> times_by_cluster;
  for (const auto& block : blocks_) {
    if (static_cast<int>(block.members.size()) != cluster_size) {
      throw InputError("cluster " + std::to_string(block.cluster_id) + " time " +
                       std::to_string(block.time) + " has " +
                       std::to_string(block.members.size()) + " members, expected " +
                       std::to_string(cluster_size) + " (ragged clusters are not supported)");
    }
    if (block.time < 0 || block.time >= horizon) {
      throw InputError("block time " + std::to_string(block.time) + " outside [0, horizon)");
    }
    for (const auto& tr : block.members) {
      if (tr.action < 0 || tr.action >= action_count) {
        throw InputError("action " + std::to_string(tr.action) + " outside [0, " +
                         std::to_string(action_count) + ")");
      }
      if (static_cast<int>(tr.state.size()) != state_dim ||
          static_cast<int>(tr.next_state.size()) != state_dim) {
        throw InputError("state dimension mismatch in transition");
      }
    }
    times_by_cluster[block.cluster_id].push_back(block.time);
  }
  for (auto& [id, times] : times_by_cluster) {
    std::sort(times.begin(), times.end());
    if (static_cast<int>(times.size()) != horizon ||
        std::adjacent_find(times.begin(), times.end()) != times.end()) {
      throw InputError("cluster " + std::to_string(id) +
                       " must contribute exactly one block per decision time");
    }
  }
  n_clusters_ = static_cast<int>(times_by_cluster.size());
  if (n_clusters_ < 1) throw InputError("dataset has no blocks");
}

std::vector<int> Dataset::cluster_ids() const {
  std::vector<int> ids;
  std::unordered_set<int> seen;
  for (const auto& block : blocks_) {
    if (seen.insert(block.cluster_id).second) ids.push_back(block.cluster_id);
  }
  return ids;
}

Dataset Dataset::subset(std::span<const int> cluster_ids) const {
  std::unordered_set<int> keep(cluster_ids.begin(), cluster_ids.end());
  std::vector<ClusterBlock> out;
  for (const auto& block : blocks_) {
    if (keep.contains(block.cluster_id)) out.push_back(block);
  }
  return Dataset(std::move(out), cluster_size_, horizon_, action_count_, state_dim_);
}

void ExperimentConfig::validate() const {
  if (n_clusters < 1 || cluster_size < 1 || horizon < 1 || replications < 1) {
    throw ConfigError("n_clusters, cluster_size, horizon and replications must be >= 1");
  }
  if (!(gamma >= 0.0 && gamma < 1.0)) throw ConfigError("gamma must lie in [0, 1)");
  if (degree < 1) throw ConfigError("degree must be >= 1");
  if (!(tol > 0.0)) throw ConfigError("tol must be > 0");
  if (!(psi >= 0.0) || !std::isfinite(psi)) throw ConfigError("psi must be >= 0");
  if (max_iters < 0) throw ConfigError("max_iters must be >= 0");
}

std::uint64_t splitmix64(std::uint64_t x) noexcept {
  x += 0x9E3779B97F4A7C15ULL;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
  return x ^ (x >> 31);
}

namespace {

std::uint64_t fold_labels(std::uint64_t id, std::span<const std::uint64_t> labels) {
  for (auto label : labels) id = splitmix64(id ^ splitmix64(label + 0x632BE59BD9B4E019ULL));
  return id;
}

std::mt19937_64 make_engine(std::uint64_t seed, std::uint64_t stream_id) {
  const std::uint64_t a = splitmix64(seed);
  const std::uint64_t b = splitmix64(a ^ stream_id);
  std::seed_seq seq{static_cast<std::uint32_t>(a), static_cast<std::uint32_t>(a >> 32),
                    static_cast<std::uint32_t>(b), static_cast<std::uint32_t>(b >> 32)};
  return std::mt19937_64(seq);
}

constexpr std::uint64_t kRootStream = 0x2545F4914F6CDD1DULL;

}  // namespace

RngStream::RngStream(std::uint64_t seed, std::uint64_t stream_id)
    : seed_(seed), stream_id_(stream_id), engine_(make_engine(seed, stream_id)) {}

RngStream RngStream::derive(std::span<const std::uint64_t> labels) const {
  return RngStream(seed_, fold_labels(stream_id_, labels));
}

RngStream RngStream::derive(std::initializer_list<std::uint64_t> labels) const {
  return derive(std::span<const std::uint64_t>(labels.begin(), labels.size()));
}

double RngStream::normal() { return normal_(engine_); }

double RngStream::uniform() { return std::uniform_real_distribution<double>(0.0, 1.0)(engine_); }

int RngStream::uniform_int(int n) {
  if (n < 1) throw InputError("uniform_int requires n >= 1");
  return std::uniform_int_distribution<int>(0, n - 1)(engine_);
}

RngStream derive_stream(std::uint64_t seed, std::span<const std::uint64_t> labels) {
  return RngStream(seed, fold_labels(kRootStream, labels));
}

RngStream derive_stream(std::uint64_t seed, std::initializer_list<std::uint64_t> labels) {
  return derive_stream(seed, std::span<const std::uint64_t>(labels.begin(), labels.size()));
}

}  // namespace gfqi

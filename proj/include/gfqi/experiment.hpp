#pragma once

// Replication sweeps: config parsing, one seeded experiment per
// (cell, replication, learner), and the results CSV.

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <json.hpp>

#include "gfqi/core.hpp"
#include "gfqi/envs.hpp"
#include "gfqi/eval.hpp"
#include "gfqi/learners.hpp"

namespace gfqi {

enum class SweepAxis { n_clusters, cluster_size, horizon, psi };

std::string_view axis_name(SweepAxis axis);
SweepAxis parse_axis(std::string_view name);

struct SweepSpec {
  ExperimentConfig base;
  SweepAxis axis = SweepAxis::n_clusters;
  std::vector<double> values;
  std::vector<Learner> learners;
  int replications = 50;

  /// Base config with the axis set to values[cell].
  ExperimentConfig cell_config(int cell) const;
  int n_cells() const { return static_cast<int>(values.size()); }
};

struct RunConfig {
  Environment env = SyntheticEnvParams{};
  SweepSpec sweep;
  FitControls controls;  // max_iters and tol mirror sweep.base
  bool select_degree = false;
  std::vector<int> degree_candidates{1, 2, 3, 4};
  int cv_folds = 5;
  EvalProtocol eval;  // gamma mirrors sweep.base.gamma
  GridSpec grid;
  std::filesystem::path oracle_cache;

  /// Cross-section checks (axis validity for the env, learner list, ...).
  void validate() const;
  /// Environment of one cell (psi applied for the semi-synthetic family).
  Environment cell_env(int cell) const;
};

/// Parses {env, sweep, learners, eval}; every section is optional.
RunConfig parse_run_config(const nlohmann::json& j);
RunConfig load_run_config(const std::filesystem::path& path);
nlohmann::json run_config_to_json(const RunConfig& config);

struct ResultRow {
  Learner learner = Learner::fqi;
  SweepAxis axis = SweepAxis::n_clusters;
  double axis_value = 0.0;
  int replication = 0;
  std::uint64_t seed = 0;
  double regret_discounted = 0.0;
  double regret_average = 0.0;
  double oracle_discounted = 0.0;
  double oracle_average = 0.0;
  double value_discounted = 0.0;
  double value_average = 0.0;
  int degree = 0;
  int iterations = 0;
  bool converged = false;
  double rho_hat = 0.0;
  Eigen::VectorXd beta;
  std::string error;  // empty on success
  double wall_time_ms = 0.0;
};

/// Stream labels under the sweep seed.
enum class Stage : std::uint64_t { data = 0, degree = 1, eval = 2 };
RngStream stage_stream(std::uint64_t seed, int cell, int replication, Stage stage);

/// Simulate, optionally select the degree, fit and evaluate every requested
/// learner on one (cell, replication). All learners share the dataset and the
/// evaluation stream; the oracle greedy policy is evaluated on that same
/// stream for the regret baseline. Learner failures are recorded per row.
std::vector<ResultRow> run_replication(const RunConfig& config, const OracleSolution& oracle, int cell,
                                       int replication, const std::vector<Learner>& learners);
ResultRow run_experiment(const RunConfig& config, const OracleSolution& oracle, int cell, int replication,
                         Learner learner);

/// Results CSV. The first header column is `schema=1`; every row carries 1.
std::string results_header();
std::string format_result_row(const ResultRow& row);
struct ParsedRow {
  ResultRow row;
  std::string line;
  int line_number = 0;
};
/// Throws ParseError with the offending line number.
std::vector<ParsedRow> read_results_csv(std::istream& in);
std::vector<ParsedRow> read_results_csv(const std::filesystem::path& path);

struct SweepOptions {
  int threads = 1;
  bool resume = false;
  std::function<void(int done, int total)> progress;
};

struct SweepSummary {
  int rows_total = 0;
  int rows_computed = 0;
  int rows_skipped = 0;
  int rows_failed = 0;
};

/// Writes one row per (learner, axis value, replication), sorted by learner
/// order, cell and replication. Rows are appended as they finish and the
/// file is rewritten in order at the end; with resume, rows already present
/// are kept and skipped. Wall times go to `<out>.timing.csv`.
SweepSummary run_sweep(const RunConfig& config, const std::filesystem::path& out, const SweepOptions& options = {});

/// Oracle solution for one cell (cached on disk when configured).
OracleSolution cell_oracle(const RunConfig& config, int cell, int threads = 1);

}  // namespace gfqi

#include <cstdint>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>

#include <CLI11.hpp>
#include <json.hpp>

#include "gfqi/core.hpp"
#include "gfqi/dataset_io.hpp"
#include "gfqi/envs.hpp"
#include "gfqi/eval.hpp"
#include "gfqi/experiment.hpp"
#include "gfqi/learners.hpp"
#include "gfqi/plot.hpp"

namespace {

using namespace gfqi;

struct Common {
  std::string config;
  std::optional<std::uint64_t> seed;
  int threads = 1;
  std::string out;
};

RunConfig load_config(const Common& c) {
  RunConfig cfg = c.config.empty() ? parse_run_config(nlohmann::json::object()) : load_run_config(c.config);
  if (c.seed) cfg.sweep.base.seed = *c.seed;
  return cfg;
}

void write_json(const nlohmann::json& j, const std::string& path) {
  if (path.empty() || path == "-") {
    std::cout << j.dump(2) << '\n';
    return;
  }
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw IoError("cannot write " + path);
  out << j.dump(2) << '\n';
}

nlohmann::json read_json(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path);
  try {
    return nlohmann::json::parse(in);
  } catch (const nlohmann::json::parse_error& e) {
    throw ParseError("invalid JSON in " + path + ": " + e.what(), 0);
  }
}

void add_common(CLI::App* cmd, Common& c, bool threads) {
  cmd->add_option("--config", c.config, "JSON config with sections env, sweep, learners, eval");
  cmd->add_option("--seed", c.seed, "Override the base seed");
  if (threads) cmd->add_option("--threads", c.threads, "Worker threads")->check(CLI::PositiveNumber);
  cmd->add_option("--out", c.out, "Output path");
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Fitted Q-iteration learners for clustered MDPs"};
  app.require_subcommand(1);

  Common sim_c;
  int sim_cell = 0;
  int sim_rep = 0;
  auto* sim = app.add_subcommand("simulate", "Simulate one dataset (cell, replication) to CSV");
  add_common(sim, sim_c, false);
  sim->add_option("--cell", sim_cell, "Sweep cell index")->check(CLI::NonNegativeNumber);
  sim->add_option("--replication", sim_rep, "Replication index")->check(CLI::NonNegativeNumber);
  sim->get_option("--out")->required();

  Common fit_c;
  std::string fit_data, fit_learner = "gfqi-exchangeable";
  std::optional<int> fit_degree;
  auto* fitc = app.add_subcommand("fit", "Fit a learner on a dataset CSV and write a FitReport JSON");
  add_common(fitc, fit_c, false);
  fitc->add_option("--data", fit_data, "Dataset CSV")->required();
  fitc->add_option("--learner", fit_learner, "fqi | agtd | gfqi-identity | gfqi-exchangeable");
  fitc->add_option("--degree", fit_degree, "Polynomial degree (default: config base degree)");

  Common ev_c;
  std::string ev_report;
  auto* evc = app.add_subcommand("evaluate", "Monte-Carlo value of a fitted policy and its regret");
  add_common(evc, ev_c, true);
  evc->add_option("--report", ev_report, "FitReport JSON")->required();

  Common or_c;
  std::string or_cache;
  int or_cell = 0;
  auto* orc = app.add_subcommand("oracle", "Solve the value-iteration oracle for a cell");
  add_common(orc, or_c, true);
  orc->add_option("--cache-dir", or_cache, "Oracle cache directory (overrides the config)");
  orc->add_option("--cell", or_cell, "Sweep cell index")->check(CLI::NonNegativeNumber);

  Common sw_c;
  bool sw_resume = false;
  bool sw_quiet = false;
  auto* swc = app.add_subcommand("sweep", "Run a replication sweep and write the results CSV");
  add_common(swc, sw_c, true);
  swc->add_flag("--resume", sw_resume, "Keep rows already in the output and compute only missing ones");
  swc->add_flag("--quiet", sw_quiet, "No progress output");
  swc->get_option("--out")->required();

  std::string pl_input, pl_out, pl_metric = "average", pl_title;
  auto* plc = app.add_subcommand("plot", "Render regret curves from a results CSV to SVG");
  plc->add_option("--input", pl_input, "Results CSV")->required();
  plc->add_option("--out", pl_out, "SVG path")->required();
  plc->add_option("--metric", pl_metric, "average | discounted")->check(CLI::IsMember({"average", "discounted"}));
  plc->add_option("--title", pl_title, "Figure title");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : 2;
  }

  try {
    if (sim->parsed()) {
      const RunConfig cfg = load_config(sim_c);
      if (sim_cell >= cfg.sweep.n_cells()) throw ConfigError("--cell is out of range for the sweep values");
      const Dataset data = simulate(cfg.cell_env(sim_cell), cfg.sweep.cell_config(sim_cell),
                                    stage_stream(cfg.sweep.base.seed, sim_cell, sim_rep, Stage::data));
      write_dataset_csv(data, sim_c.out);
      std::cerr << "wrote " << data.n_transitions() << " transitions to " << sim_c.out << '\n';
    } else if (fitc->parsed()) {
      const RunConfig cfg = load_config(fit_c);
      const Dataset data = read_dataset_csv(fit_data);
      const FeatureMap map(data.action_count(), data.state_dim(), fit_degree.value_or(cfg.sweep.base.degree));
      const FitReport report = fit(parse_learner(fit_learner), data, map, cfg.sweep.base.gamma, cfg.controls);
      write_json(report.to_json(), fit_c.out);
    } else if (evc->parsed()) {
      const RunConfig cfg = load_config(ev_c);
      const FitReport report = FitReport::from_json(read_json(ev_report));
      if (report.gamma != cfg.eval.gamma) throw ConfigError("report gamma differs from the config gamma");
      const RngStream rng = stage_stream(cfg.sweep.base.seed, 0, 0, Stage::eval);
      const Environment env = cfg.cell_env(0);
      const ValueEstimate value = mc_evaluate(env, report.q_estimate().policy(), cfg.eval, rng, ev_c.threads);
      const OracleSolution oracle = solve_oracle_q(scalar_model(env), cfg.eval.gamma, cfg.grid);
      const ValueEstimate ref = mc_evaluate(env, oracle.policy(), cfg.eval, rng, ev_c.threads);
      write_json({{"value", value.to_json()},
                  {"oracle", ref.to_json()},
                  {"regret_discounted", regret(ref, value, ValueMetric::discounted)},
                  {"regret_average", regret(ref, value, ValueMetric::average_reward)}},
                 ev_c.out);
    } else if (orc->parsed()) {
      RunConfig cfg = load_config(or_c);
      if (!or_cache.empty()) cfg.oracle_cache = or_cache;
      if (or_cell >= cfg.sweep.n_cells()) throw ConfigError("--cell is out of range for the sweep values");
      const OracleSolution oracle = cell_oracle(cfg, or_cell, or_c.threads);
      if (or_c.out.empty()) {
        std::cout << nlohmann::json{{"value", oracle.value},
                                    {"bellman_residual", oracle.bellman_residual},
                                    {"sweeps", oracle.sweeps},
                                    {"value_estimate", oracle.value_estimate.to_json()}}
                         .dump(2)
                  << '\n';
      } else {
        write_json(oracle.to_json(), or_c.out);
      }
    } else if (swc->parsed()) {
      const RunConfig cfg = load_config(sw_c);
      SweepOptions opts;
      opts.threads = sw_c.threads;
      opts.resume = sw_resume;
      if (!sw_quiet) {
        opts.progress = [](int done, int total) {
          std::cerr << "\rreplications " << done << '/' << total << std::flush;
          if (done == total) std::cerr << '\n';
        };
      }
      const SweepSummary s = run_sweep(cfg, sw_c.out, opts);
      std::cerr << "rows: " << s.rows_total << " total, " << s.rows_computed << " computed, " << s.rows_skipped
                << " kept, " << s.rows_failed << " failed\n";
    } else if (plc->parsed()) {
      PlotOptions opts;
      opts.metric = pl_metric == "discounted" ? PlotMetric::regret_discounted : PlotMetric::regret_average;
      opts.title = pl_title;
      plot_results(pl_input, pl_out, opts);
    }
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return 2;
  } catch (const ParseError& e) {
    std::cerr << "parse error: " << e.what() << '\n';
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}

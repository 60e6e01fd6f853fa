#include "gfqi/learners.hpp"

#include <algorithm>
#include <cmath>
#include <optional>

namespace gfqi {

std::string_view learner_name(Learner learner) {
  switch (learner) {
    case Learner::fqi: return "fqi";
    case Learner::agtd: return "agtd";
    case Learner::gfqi_identity: return "gfqi-identity";
    case Learner::gfqi_exchangeable: return "gfqi-exchangeable";
  }
  return "unknown";
}

Learner parse_learner(std::string_view name) {
  for (Learner l : all_learners()) {
    if (learner_name(l) == name) return l;
  }
  throw ConfigError("unknown learner '" + std::string(name) + "'");
}

const std::vector<Learner>& all_learners() {
  static const std::vector<Learner> kAll{Learner::fqi, Learner::agtd, Learner::gfqi_identity,
                                         Learner::gfqi_exchangeable};
  return kAll;
}

int default_max_iters(int n_blocks, double gamma) {
  if (!(gamma > 0.0 && gamma < 1.0) || n_blocks < 2) return 100;
  const double k = std::ceil(2.0 * std::log(static_cast<double>(n_blocks)) / std::log(1.0 / gamma));
  return std::max(static_cast<int>(k), 100);
}

double QEstimate::q(int action, std::span<const double> state) const {
  return map.featurize(action, state).dot(beta);
}

int QEstimate::greedy_action(std::span<const double> state) const {
  int best = 0;
  double best_q = q(0, state);
  for (int a = 1; a < map.action_count(); ++a) {
    const double v = q(a, state);
    if (v > best_q) {
      best_q = v;
      best = a;
    }
  }
  return best;
}

Policy QEstimate::policy() const {
  return [self = *this](std::span<const double> s, RngStream&) { return self.greedy_action(s); };
}

Eigen::VectorXd PhiStarModel::predict(int action, std::span<const double> state) const {
  const Eigen::VectorXd phi = map.featurize(action, state);
  return coef.row(0).transpose() + coef.bottomRows(coef.rows() - 1).transpose() * phi;
}

Eigen::VectorXd PhiStarModel::phi_star(int action, std::span<const double> state) const {
  return map.featurize(action, state) - gamma * predict(action, state);
}

Eigen::MatrixXd PhiStarModel::predict_rows(const Eigen::MatrixXd& current) const {
  Eigen::MatrixXd out = current * coef.bottomRows(coef.rows() - 1);
  out.rowwise() += coef.row(0);
  return out;
}

namespace {

void add_warning(std::vector<std::string>& out, const std::string& w) {
  if (std::find(out.begin(), out.end(), w) == out.end()) out.push_back(w);
}

// Per-fit state reused across iterations: the regressor matrix of the phi*
// regression never changes, so it is factorized once.
constexpr double kRankThreshold = 1e-10;

class Workspace {
 public:
  explicit Workspace(const Design& design) : design_(design) {}

  const Design& design() const { return design_; }

  // The explicit intercept duplicates the per-action intercepts; the relative
  // threshold drops it instead of solving against a round-off pivot.
  const Eigen::CompleteOrthogonalDecomposition<Eigen::MatrixXd>& phi_qr() {
    if (!qr_) {
      Eigen::MatrixXd x(design_.rows(), design_.dim + 1);
      x.col(0).setOnes();
      x.rightCols(design_.dim) = design_.current;
      qr_.emplace(x.rows(), x.cols());
      qr_->setThreshold(kRankThreshold);
      qr_->compute(x);
      if (qr_->rank() < design_.dim) {
        throw SingularSystemError("phi* regression design is rank deficient (rank " +
                                      std::to_string(qr_->rank()) + " < " + std::to_string(design_.dim) + ")",
                                  INFINITY);
      }
    }
    return *qr_;
  }

  Eigen::MatrixXd phi_star_coef(const Eigen::VectorXd& beta) {
    const auto& qr = phi_qr();
    const Eigen::MatrixXd target = next_features(design_, greedy_next_actions(design_, beta));
    return qr.solve(target);
  }

  Eigen::MatrixXd phi_star_rows(const Eigen::VectorXd& beta, double gamma) {
    if (gamma == 0.0) return design_.current;
    const Eigen::MatrixXd coef = phi_star_coef(beta);
    Eigen::MatrixXd pred = design_.current * coef.bottomRows(design_.dim);
    pred.rowwise() += coef.row(0);
    return design_.current - gamma * pred;
  }

 private:
  const Design& design_;
  std::optional<Eigen::CompleteOrthogonalDecomposition<Eigen::MatrixXd>> qr_;
};

void check_beta(const Design& design, const Eigen::VectorXd& beta) {
  if (beta.size() != design.dim) throw InputError("beta length does not match the feature dimension");
}

StepResult step_impl(Learner learner, Workspace& ws, const Eigen::VectorXd& beta_current,
                     const Eigen::VectorXd& beta_previous, double gamma, const FitControls& controls) {
  const Design& design = ws.design();
  const int m = design.cluster_size;
  StepResult out;
  BlockInstrument instrument;
  instrument.cluster_size = m;

  if (learner == Learner::fqi) {
    instrument.stacked = design.current;
    const TdBatch td = td_residuals(design, beta_current, beta_previous, gamma);
    out.sigma_hat = std::sqrt(td.residuals.squaredNorm() / std::max<Eigen::Index>(td.residuals.size(), 1));
  } else {
    const Eigen::MatrixXd phi_star = ws.phi_star_rows(beta_current, gamma);
    const TdBatch td = td_residuals(design, beta_current, beta_previous, gamma);
    const CorrelationKind kind =
        learner == Learner::gfqi_exchangeable ? CorrelationKind::exchangeable : CorrelationKind::identity;

    if (controls.sigma_mode == SigmaMode::regression) {
      const Eigen::VectorXd row_sigma = estimate_sigma_regression(design, td);
      CovarianceEstimate est = estimate_standardized(td, row_sigma, kind);
      for (auto& w : est.warnings) add_warning(out.warnings, w);
      out.sigma_hat = std::sqrt(td.residuals.squaredNorm() / static_cast<double>(td.residuals.size()));
      out.rho_hat = est.covariance.correlation.rho;
      if (learner == Learner::agtd) {
        instrument.stacked = phi_star.array().colwise() / row_sigma.array().square();
      } else {
        int jittered = 0;
        instrument = weight_instrument(phi_star, row_sigma, est.covariance.correlation, m, &jittered);
        if (jittered > 0) add_warning(out.warnings, "working covariance jittered for ill-conditioning");
      }
    } else if (learner == Learner::agtd) {
      const CovarianceEstimate est = estimate_identity(td);
      for (auto& w : est.warnings) add_warning(out.warnings, w);
      out.sigma_hat = est.covariance.sigma(0);
      instrument.stacked = phi_star / (est.covariance.sigma(0) * est.covariance.sigma(0));
    } else {
      const CovarianceEstimate est = kind == CorrelationKind::exchangeable ? estimate_exchangeable(td)
                                                                           : estimate_identity(td);
      for (auto& w : est.warnings) add_warning(out.warnings, w);
      out.sigma_hat = est.covariance.sigma(0);
      out.rho_hat = est.covariance.correlation.rho;
      const CovarianceInverse inv = invert_covariance(est.covariance);
      if (inv.jittered) add_warning(out.warnings, "working covariance jittered for ill-conditioning");
      instrument = weight_instrument(phi_star, inv.inverse, m);
    }
  }

  const EquationSolution sol = solve_estimating_equation(design, instrument, beta_current, gamma);
  out.beta = sol.beta;
  out.condition = sol.condition;
  return out;
}

FitReport run_fit(Learner learner, const Dataset& data, const FeatureMap& map, double gamma,
                  const FitControls& controls) {
  if (!(gamma >= 0.0 && gamma < 1.0)) throw ConfigError("gamma must lie in [0, 1)");
  if (!(controls.tol > 0.0)) throw ConfigError("tol must be > 0");
  if (controls.max_iters < 0) throw ConfigError("max_iters must be >= 0");
  const Design design = build_design(data, map);
  Workspace ws(design);
  const int max_iters = controls.max_iters > 0 ? controls.max_iters : default_max_iters(design.n_blocks, gamma);

  FitReport report;
  report.learner = std::string(learner_name(learner));
  report.map = map;
  report.gamma = gamma;
  Eigen::VectorXd beta_prev = Eigen::VectorXd::Zero(map.dim());
  Eigen::VectorXd beta_cur = beta_prev;
  for (int k = 1; k <= max_iters; ++k) {
    StepResult step = step_impl(learner, ws, beta_cur, beta_prev, gamma, controls);
    for (auto& w : step.warnings) add_warning(report.warnings, w);
    report.final_delta = (step.beta - beta_cur).norm();
    report.iterations = k;
    report.condition_diag = step.condition;
    report.rho_hat = step.rho_hat;
    report.sigma_hat = step.sigma_hat;
    beta_prev = std::move(beta_cur);
    beta_cur = std::move(step.beta);
    if (!beta_cur.allFinite()) throw SingularSystemError("iteration produced non-finite coefficients", INFINITY);
    if (report.final_delta <= controls.tol) {
      report.converged = true;
      break;
    }
  }
  report.beta = std::move(beta_cur);
  return report;
}

}  // namespace

PhiStarModel estimate_phi_star(const Dataset& data, const FeatureMap& map, const Eigen::VectorXd& beta,
                               double gamma) {
  const Design design = build_design(data, map);
  check_beta(design, beta);
  Workspace ws(design);
  return PhiStarModel{map, gamma, ws.phi_star_coef(beta)};
}

FitReport fqi_fit(const Dataset& data, const FeatureMap& map, double gamma, const FitControls& controls) {
  return run_fit(Learner::fqi, data, map, gamma, controls);
}

FitReport agtd_fit(const Dataset& data, const FeatureMap& map, double gamma, const FitControls& controls) {
  return run_fit(Learner::agtd, data, map, gamma, controls);
}

FitReport gfqi_fit(const Dataset& data, const FeatureMap& map, double gamma, CorrelationKind correlation,
                   const FitControls& controls) {
  return run_fit(correlation == CorrelationKind::exchangeable ? Learner::gfqi_exchangeable : Learner::gfqi_identity,
                 data, map, gamma, controls);
}

FitReport fit(Learner learner, const Dataset& data, const FeatureMap& map, double gamma,
              const FitControls& controls) {
  return run_fit(learner, data, map, gamma, controls);
}

StepResult learner_step(Learner learner, const Design& design, const Eigen::VectorXd& beta_current,
                        const Eigen::VectorXd& beta_previous, double gamma, const FitControls& controls) {
  check_beta(design, beta_current);
  check_beta(design, beta_previous);
  Workspace ws(design);
  return step_impl(learner, ws, beta_current, beta_previous, gamma, controls);
}

BlockInstrument build_gfqi_instrument(const Design& design, const Eigen::VectorXd& beta, double gamma,
                                      CorrelationKind correlation, const FitControls& controls) {
  check_beta(design, beta);
  Workspace ws(design);
  const Eigen::MatrixXd phi_star = ws.phi_star_rows(beta, gamma);
  const TdBatch td = td_residuals(design, beta, beta, gamma);
  const int m = design.cluster_size;
  if (controls.sigma_mode == SigmaMode::regression) {
    const Eigen::VectorXd row_sigma = estimate_sigma_regression(design, td);
    const CovarianceEstimate est = estimate_standardized(td, row_sigma, correlation);
    return weight_instrument(phi_star, row_sigma, est.covariance.correlation, m);
  }
  const CovarianceEstimate est =
      correlation == CorrelationKind::exchangeable ? estimate_exchangeable(td) : estimate_identity(td);
  return weight_instrument(phi_star, invert_covariance(est.covariance).inverse, m);
}

nlohmann::json FitReport::to_json() const {
  nlohmann::json j;
  j["learner"] = learner;
  j["feature_map"] = {{"action_count", map.action_count()}, {"state_dim", map.state_dim()}, {"degree", map.degree()}};
  j["gamma"] = gamma;
  j["beta"] = std::vector<double>(beta.data(), beta.data() + beta.size());
  j["iterations"] = iterations;
  j["converged"] = converged;
  j["final_delta"] = final_delta;
  j["rho_hat"] = rho_hat;
  j["sigma_hat"] = sigma_hat;
  j["condition_diag"] = condition_diag;
  j["warnings"] = warnings;
  return j;
}

FitReport FitReport::from_json(const nlohmann::json& j) {
  try {
    FitReport r;
    r.learner = j.at("learner").get<std::string>();
    const auto& fm = j.at("feature_map");
    r.map = FeatureMap(fm.at("action_count").get<int>(), fm.at("state_dim").get<int>(), fm.at("degree").get<int>());
    r.gamma = j.at("gamma").get<double>();
    const auto beta = j.at("beta").get<std::vector<double>>();
    if (static_cast<int>(beta.size()) != r.map.dim()) throw InputError("fit report beta does not match its feature map");
    r.beta = Eigen::Map<const Eigen::VectorXd>(beta.data(), static_cast<Eigen::Index>(beta.size()));
    r.iterations = j.at("iterations").get<int>();
    r.converged = j.at("converged").get<bool>();
    r.final_delta = j.at("final_delta").get<double>();
    r.rho_hat = j.value("rho_hat", 0.0);
    r.sigma_hat = j.value("sigma_hat", 0.0);
    r.condition_diag = j.value("condition_diag", 1.0);
    r.warnings = j.value("warnings", std::vector<std::string>{});
    return r;
  } catch (const nlohmann::json::exception& e) {
    throw InputError(std::string("malformed fit report: ") + e.what());
  }
}

}  // namespace gfqi

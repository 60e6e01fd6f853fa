#include <doctest.h>

#include <algorithm>
#include <array>
#include <cmath>
#include <vector>

#include "gfqi/envs.hpp"
#include "gfqi/learners.hpp"

using namespace gfqi;

namespace {

Dataset sample(const SyntheticEnvParams& p, int n, int m, int t, std::uint64_t seed, std::uint64_t label = 0) {
  ExperimentConfig c;
  c.n_clusters = n;
  c.cluster_size = m;
  c.horizon = t;
  return simulate_synthetic(p, c, derive_stream(seed, {label}));
}

Dataset with_rewards(const Dataset& d, double scale) {
  std::vector<ClusterBlock> blocks = d.blocks();
  for (auto& b : blocks)
    for (auto& tr : b.members) tr.reward *= scale;
  return {blocks, d.cluster_size(), d.horizon(), d.action_count(), d.state_dim()};
}

// Deterministic two-state, two-action MDP: s' = (s + a) mod 2, reward table below.
double tabular_reward(int s, int a) {
  static constexpr std::array<std::array<double, 2>, 2> r{{{0.2, -0.4}, {1.0, 0.5}}};
  return r[static_cast<std::size_t>(s)][static_cast<std::size_t>(a)];
}

Dataset tabular_dataset(int members) {
  std::vector<ClusterBlock> blocks;
  int id = 0;
  for (int s = 0; s < 2; ++s) {
    for (int a = 0; a < 2; ++a) {
      ClusterBlock b{id++, 0, {}};
      for (int m = 0; m < members; ++m) {
        b.members.push_back({{static_cast<double>(s)}, a, tabular_reward(s, a), {static_cast<double>((s + a) % 2)}});
      }
      blocks.push_back(b);
    }
  }
  return {blocks, members, 1, 2, 1};
}

// Q*(s, a) by value iteration on the tabular MDP.
std::array<std::array<double, 2>, 2> tabular_q_star(double gamma) {
  std::array<std::array<double, 2>, 2> q{};
  for (int it = 0; it < 5000; ++it) {
    auto next = q;
    for (int s = 0; s < 2; ++s)
      for (int a = 0; a < 2; ++a) {
        const int s2 = (s + a) % 2;
        next[s][a] = tabular_reward(s, a) + gamma * std::max(q[s2][0], q[s2][1]);
      }
    q = next;
  }
  return q;
}

// beta for degree-1 features [1, s] per action that represents a tabular Q.
Eigen::VectorXd tabular_beta(const std::array<std::array<double, 2>, 2>& q) {
  Eigen::VectorXd beta(4);
  beta << q[0][0], q[1][0] - q[0][0], q[0][1], q[1][1] - q[0][1];
  return beta;
}

double mean_sq_error(const std::vector<Eigen::VectorXd>& fits, const Eigen::VectorXd& truth) {
  double total = 0.0;
  for (const auto& b : fits) total += (b - truth).squaredNorm();
  return total / static_cast<double>(fits.size());
}

}  // namespace

TEST_CASE("learner names round-trip") {
  for (Learner l : all_learners()) CHECK(parse_learner(learner_name(l)) == l);
  CHECK(learner_name(Learner::gfqi_exchangeable) == "gfqi-exchangeable");
  CHECK_THROWS_AS(parse_learner("dqn"), ConfigError);
}

TEST_CASE("default iteration count") {
  CHECK(default_max_iters(25, 0.9) == 100);
  CHECK(default_max_iters(1000000, 0.9) == 263);
  CHECK(default_max_iters(1000, 0.0) == 100);
}

TEST_CASE("gamma 0 reduces every learner to one OLS solve") {
  const Dataset d = sample({}, 8, 3, 4, 21);
  const FeatureMap map(2, 1, 2);
  const Design design = build_design(d, map);
  const Eigen::VectorXd ols = design.current.jacobiSvd(Eigen::ComputeThinU | Eigen::ComputeThinV).solve(design.rewards);
  const FitReport f = fqi_fit(d, map, 0.0);
  CHECK(f.converged);
  CHECK(f.iterations == 2);
  CHECK((f.beta - ols).cwiseAbs().maxCoeff() < 1e-10);
  const FitReport a = agtd_fit(d, map, 0.0);
  CHECK((a.beta - f.beta).cwiseAbs().maxCoeff() < 1e-10);
}

TEST_CASE("all-zero rewards keep beta at zero") {
  const Dataset d = with_rewards(sample({}, 6, 3, 4, 22), 0.0);
  const FeatureMap map(2, 1, 2);
  for (Learner l : all_learners()) {
    const FitReport r = fit(l, d, map, 0.9);
    CAPTURE(learner_name(l));
    CHECK(r.converged);
    CHECK(r.beta.isZero(0.0));
  }
}

TEST_CASE("identity GFQI coincides with AGTD") {
  const FeatureMap map(2, 1, 2);
  for (std::uint64_t k = 0; k < 5; ++k) {
    const Dataset d = sample({}, 6, 4, 5, 23, k);
    const FitReport a = agtd_fit(d, map, 0.9);
    const FitReport g = gfqi_fit(d, map, 0.9, CorrelationKind::identity);
    CHECK((a.beta - g.beta).cwiseAbs().maxCoeff() <= 1e-8);
  }
}

TEST_CASE("exchangeable GFQI with singleton clusters coincides with AGTD") {
  const FeatureMap map(2, 1, 2);
  const Dataset d = sample({}, 20, 1, 5, 24);
  const FitReport a = agtd_fit(d, map, 0.9);
  const FitReport g = gfqi_fit(d, map, 0.9, CorrelationKind::exchangeable);
  CHECK((a.beta - g.beta).cwiseAbs().maxCoeff() <= 1e-8);
  CHECK_FALSE(g.warnings.empty());
}

TEST_CASE("tabular MDP: every learner reproduces value iteration") {
  const double gamma = 0.9;
  const auto q = tabular_q_star(gamma);
  const Eigen::VectorXd beta_star = tabular_beta(q);
  const Dataset d = tabular_dataset(3);
  const FeatureMap map(2, 1, 1);
  FitControls controls;
  controls.tol = 1e-13;
  controls.max_iters = 2000;
  for (Learner l : all_learners()) {
    const FitReport r = fit(l, d, map, gamma, controls);
    CAPTURE(learner_name(l));
    CHECK(r.converged);
    const QEstimate est = r.q_estimate();
    for (int s = 0; s < 2; ++s) {
      const std::vector<double> st{static_cast<double>(s)};
      for (int a = 0; a < 2; ++a) CHECK(std::abs(est.q(a, st) - q[s][a]) < 1e-8);
    }
    CHECK((r.beta - beta_star).cwiseAbs().maxCoeff() < 1e-8);
  }
}

TEST_CASE("Bellman distance to Q* is non-increasing across FQI iterations") {
  const double gamma = 0.8;
  const auto q = tabular_q_star(gamma);
  const Dataset d = tabular_dataset(2);
  const FeatureMap map(2, 1, 1);
  double prev = std::numeric_limits<double>::infinity();
  for (int k = 1; k <= 40; ++k) {
    FitControls c;
    c.max_iters = k;
    c.tol = 1e-300;
    const QEstimate est = fqi_fit(d, map, gamma, c).q_estimate();
    double dist = 0.0;
    for (int s = 0; s < 2; ++s) {
      const std::vector<double> st{static_cast<double>(s)};
      for (int a = 0; a < 2; ++a) dist = std::max(dist, std::abs(est.q(a, st) - q[s][a]));
    }
    CHECK(dist <= prev + 1e-12);
    prev = dist;
  }
  CHECK(prev < 0.1);
}

TEST_CASE("Q* is a fixed point of every learner's iteration") {
  const double gamma = 0.9;
  const Eigen::VectorXd beta_star = tabular_beta(tabular_q_star(gamma));
  const Design design = build_design(tabular_dataset(3), FeatureMap(2, 1, 1));
  for (Learner l : all_learners()) {
    const StepResult step = learner_step(l, design, beta_star, beta_star, gamma);
    CAPTURE(learner_name(l));
    CHECK((step.beta - beta_star).cwiseAbs().maxCoeff() < 1e-10);
  }
}

TEST_CASE("greedy action is invariant to positive rescaling of beta") {
  const FeatureMap map(2, 1, 2);
  RngStream rng = derive_stream(25, {0});
  for (int k = 0; k < 10; ++k) {
    Eigen::VectorXd beta(6);
    for (int i = 0; i < 6; ++i) beta[i] = rng.normal();
    const QEstimate base{beta, map, 0.9};
    for (double c : {1e-6, 0.3, 7.0, 1e6}) {
      const QEstimate scaled{c * beta, map, 0.9};
      for (int g = 0; g <= 120; ++g) {
        const std::vector<double> s{-6.0 + 0.1 * g};
        CHECK(base.greedy_action(s) == scaled.greedy_action(s));
      }
    }
  }
  const QEstimate zero{Eigen::VectorXd::Zero(6), map, 0.9};
  const std::vector<double> s{1.0};
  CHECK(zero.greedy_action(s) == 0);
}

TEST_CASE("phi-star regression") {
  const FeatureMap map(2, 1, 2);
  SUBCASE("gamma 0 leaves the features unchanged") {
    const Dataset d = sample({}, 10, 3, 4, 26);
    const PhiStarModel model = estimate_phi_star(d, map, Eigen::VectorXd::Zero(6), 0.0);
    for (double s : {-1.0, 0.3, 2.0}) {
      const std::vector<double> st{s};
      for (int a = 0; a < 2; ++a) CHECK((model.phi_star(a, st) - map.featurize(a, st)).cwiseAbs().maxCoeff() == 0.0);
    }
  }
  SUBCASE("deterministic transitions are interpolated exactly") {
    const Dataset d = tabular_dataset(2);
    const FeatureMap tab(2, 1, 1);
    Eigen::VectorXd beta(4);
    beta << 0.0, 1.0, 0.5, -1.0;
    const PhiStarModel model = estimate_phi_star(d, tab, beta, 0.9);
    const QEstimate est{beta, tab, 0.9};
    for (int s = 0; s < 2; ++s) {
      for (int a = 0; a < 2; ++a) {
        const std::vector<double> st{static_cast<double>(s)}, next{static_cast<double>((s + a) % 2)};
        const Eigen::VectorXd realized = tab.featurize(est.greedy_action(next), next);
        CHECK((model.predict(a, st) - realized).cwiseAbs().maxCoeff() < 1e-10);
      }
    }
  }
  SUBCASE("large sample matches the analytic conditional mean") {
    // beta = 0 makes the greedy action 0, so E[phi(0, S') | a, s] = (1, m, m^2 + 0.25, 0, 0, 0).
    const Dataset d = sample({}, 2000, 5, 5, 27);
    const PhiStarModel model = estimate_phi_star(d, map, Eigen::VectorXd::Zero(6), 0.9);
    for (double s : {-1.0, 0.0, 1.0}) {
      for (int a = 0; a < 2; ++a) {
        const std::vector<double> st{s};
        const double m = 0.5 * s * (2 * a - 1);
        Eigen::VectorXd expected = Eigen::VectorXd::Zero(6);
        expected.head(3) << 1.0, m, m * m + 0.25;
        CAPTURE(s);
        CAPTURE(a);
        CHECK((model.predict(a, st) - expected).cwiseAbs().maxCoeff() < 0.05);
      }
    }
  }
  SUBCASE("rank-deficient data is rejected") {
    std::vector<ClusterBlock> blocks;
    for (int i = 0; i < 3; ++i) blocks.push_back({i, 0, {{{1.0}, 0, 0.5, {1.0}}}});
    const Dataset d(blocks, 1, 1, 2, 1);
    CHECK_THROWS_AS(estimate_phi_star(d, map, Eigen::VectorXd::Zero(6), 0.9), SingularSystemError);
    CHECK_THROWS_AS(fqi_fit(d, map, 0.9), SingularSystemError);
  }
}

TEST_CASE("AGTD is at least as efficient as FQI with independent members") {
  // With a linear phi-star regression on [1, phi] the instrument stays in the span of phi,
  // so the two estimators coincide and the MSE comparison holds with equality.
  SyntheticEnvParams p;
  p.sigma3_sq = 0.0;
  const FeatureMap map(2, 1, 2);
  const Eigen::VectorXd truth = agtd_fit(sample(p, 5000, 5, 5, 28, 9999), map, 0.9).beta;
  std::vector<Eigen::VectorXd> fqi, agtd;
  for (std::uint64_t r = 0; r < 200; ++r) {
    const Dataset d = sample(p, 20, 5, 5, 28, r);
    fqi.push_back(fqi_fit(d, map, 0.9).beta);
    agtd.push_back(agtd_fit(d, map, 0.9).beta);
  }
  const double mse_fqi = mean_sq_error(fqi, truth);
  const double mse_agtd = mean_sq_error(agtd, truth);
  MESSAGE("MSE FQI " << mse_fqi << ", AGTD " << mse_agtd);
  CHECK(mse_agtd <= mse_fqi * (1.0 + 1e-9));
}

TEST_CASE("homoskedastic AGTD step equals the unweighted phi-star solve") {
  const FeatureMap map(2, 1, 2);
  const Dataset d = sample({}, 10, 4, 5, 30);
  const Design design = build_design(d, map);
  RngStream rng = derive_stream(30, {1});
  Eigen::VectorXd cur(6), prev(6);
  for (int i = 0; i < 6; ++i) cur[i] = rng.normal(), prev[i] = rng.normal();
  const PhiStarModel model = estimate_phi_star(d, map, cur, 0.9);
  BlockInstrument inst;
  inst.cluster_size = 4;
  inst.stacked = design.current - 0.9 * model.predict_rows(design.current);
  const EquationSolution direct = solve_estimating_equation(design, inst, cur, 0.9);
  const StepResult step = learner_step(Learner::agtd, design, cur, prev, 0.9);
  CHECK((step.beta - direct.beta).cwiseAbs().maxCoeff() < 1e-10);
  const StepResult fqi_step = learner_step(Learner::fqi, design, cur, prev, 0.9);
  CHECK((step.beta - fqi_step.beta).cwiseAbs().maxCoeff() < 1e-10);
}

TEST_CASE("phi-star coefficients stay bounded despite the redundant intercept") {
  const FeatureMap map(2, 1, 2);
  const Dataset d = sample({}, 20, 5, 5, 31);
  const PhiStarModel model = estimate_phi_star(d, map, Eigen::VectorXd::Ones(6), 0.9);
  CHECK(model.coef.cwiseAbs().maxCoeff() < 1e3);
}

TEST_CASE("fit report JSON round-trips at full precision") {
  const Dataset d = sample({}, 6, 3, 4, 29);
  const FeatureMap map(2, 1, 2);
  const FitReport r = gfqi_fit(d, map, 0.9, CorrelationKind::exchangeable);
  const FitReport back = FitReport::from_json(nlohmann::json::parse(r.to_json().dump()));
  CHECK(back.learner == r.learner);
  CHECK(back.map == r.map);
  CHECK(back.gamma == r.gamma);
  CHECK(back.beta == r.beta);
  CHECK(back.iterations == r.iterations);
  CHECK(back.converged == r.converged);
  CHECK(back.rho_hat == r.rho_hat);
  CHECK((!r.converged || r.final_delta <= 1e-6));
}

#include "gfqi/envs.hpp"

#include <algorithm>
#include <cmath>
#include <string>

namespace gfqi {

namespace {

double polyval(const std::vector<double>& coefs, double s) {
  double acc = 0.0;
  for (auto it = coefs.rbegin(); it != coefs.rend(); ++it) acc = acc * s + *it;
  return acc;
}

void require_nonneg(double v, const char* name) {
  if (!(v >= 0.0) || !std::isfinite(v)) throw ConfigError(std::string(name) + " must be a finite value >= 0");
}

}  // namespace

void SyntheticEnvParams::validate() const {
  require_nonneg(sigma1_sq, "sigma1_sq");
  require_nonneg(sigma2_sq, "sigma2_sq");
  require_nonneg(sigma3_sq, "sigma3_sq");
  require_nonneg(init_state_std, "init_state_std");
}

double SemiSyntheticEnvParams::transition_mean(int action, double s) const {
  return polyval(transition_coefs.at(static_cast<std::size_t>(action)), s);
}

double SemiSyntheticEnvParams::reward_mean(int action, double s) const {
  return polyval(reward_coefs.at(static_cast<std::size_t>(action)), s);
}

void SemiSyntheticEnvParams::validate() const {
  if (transition_coefs.empty() || transition_coefs.size() != reward_coefs.size()) {
    throw ConfigError("semi-synthetic env needs one transition and one reward polynomial per action");
  }
  for (std::size_t a = 0; a < transition_coefs.size(); ++a) {
    if (transition_coefs[a].empty() || reward_coefs[a].empty()) {
      throw ConfigError("semi-synthetic polynomial coefficient lists must be non-empty");
    }
  }
  require_nonneg(sigma_s_sq, "sigma_s_sq");
  require_nonneg(sigma_r_sq, "sigma_r_sq");
  require_nonneg(psi, "psi");
  require_nonneg(init_state_std, "init_state_std");
  if (!(rho_s_sq >= 0.0 && rho_s_sq <= 1.0) || !(rho_r_sq >= 0.0 && rho_r_sq <= 1.0)) {
    throw ConfigError("rho_s_sq and rho_r_sq must lie in [0, 1]");
  }
  if (psi * rho_s_sq > 1.0 || psi * rho_r_sq > 1.0) {
    throw ConfigError("psi * rho^2 exceeds 1: the variance split would be negative");
  }
}

SemiSyntheticEnvParams default_semi_synthetic() {
  SemiSyntheticEnvParams p;
  // f(s, a): mean-reverting, message nudges activity up.
  p.transition_coefs = {{0.0, 0.6, 0.0}, {0.4, 0.6, 0.0}};
  // R(s, a): messages help at low activity and hurt at high activity.
  p.reward_coefs = {{0.0, 0.1, 0.0}, {0.3, 0.05, -0.02}};
  p.init_state_std = std::sqrt(p.sigma_s_sq);
  return p;
}

ScalarModel scalar_model(const Environment& env) {
  return std::visit(
      [](const auto& p) -> ScalarModel {
        using T = std::decay_t<decltype(p)>;
        ScalarModel m;
        if constexpr (std::is_same_v<T, SyntheticEnvParams>) {
          p.validate();
          m.action_count = 2;
          m.reward_mean = [p](int a, double s) { return p.reward_quad_coef * s * s * (2 * a - 1) + s; };
          m.transition_mean = [p](int a, double s) { return p.state_coef * s * (2 * a - 1); };
          m.state_noise_std = std::sqrt(p.sigma1_sq);
          m.reward_noise_std = std::sqrt(p.sigma2_sq + p.sigma3_sq);
        } else {
          p.validate();
          m.action_count = p.action_count();
          m.reward_mean = [p](int a, double s) { return p.reward_mean(a, s); };
          m.transition_mean = [p](int a, double s) { return p.transition_mean(a, s); };
          m.state_noise_std = std::sqrt(p.sigma_s_sq);
          m.reward_noise_std = std::sqrt(p.sigma_r_sq);
        }
        m.init_mean = p.init_state_mean;
        m.init_std = p.init_state_std;
        return m;
      },
      env);
}

int action_count(const Environment& env) {
  if (const auto* s = std::get_if<SemiSyntheticEnvParams>(&env)) return s->action_count();
  return 2;
}

BehaviorPolicy BehaviorPolicy::epsilon_greedy(Eigen::VectorXd beta, FeatureMap map, double epsilon) {
  if (!(epsilon >= 0.0 && epsilon <= 1.0)) throw ConfigError("epsilon must lie in [0, 1]");
  if (beta.size() != map.dim()) throw InputError("behavior beta does not match the feature map");
  BehaviorPolicy p;
  p.kind = Kind::epsilon_greedy;
  p.epsilon = epsilon;
  p.beta = std::move(beta);
  p.features = map;
  return p;
}

BehaviorPolicy BehaviorPolicy::fixed(int action) {
  BehaviorPolicy p;
  p.kind = Kind::fixed_action;
  p.action = action;
  return p;
}

std::vector<double> BehaviorPolicy::probabilities(std::span<const double> state, int n_actions) const {
  std::vector<double> probs(static_cast<std::size_t>(n_actions), 0.0);
  switch (kind) {
    case Kind::uniform:
      std::fill(probs.begin(), probs.end(), 1.0 / n_actions);
      break;
    case Kind::fixed_action:
      if (action < 0 || action >= n_actions) throw InputError("fixed behavior action out of range");
      probs[static_cast<std::size_t>(action)] = 1.0;
      break;
    case Kind::epsilon_greedy: {
      int best = 0;
      double best_q = -INFINITY;
      for (int a = 0; a < n_actions; ++a) {
        const double q = features->featurize(a, state).dot(beta);
        if (q > best_q) {
          best_q = q;
          best = a;
        }
      }
      for (auto& p : probs) p = epsilon / n_actions;
      probs[static_cast<std::size_t>(best)] += 1.0 - epsilon;
      break;
    }
  }
  return probs;
}

int BehaviorPolicy::sample(std::span<const double> state, int n_actions, RngStream& rng) const {
  if (kind == Kind::uniform) return rng.uniform_int(n_actions);
  if (kind == Kind::fixed_action) {
    if (action < 0 || action >= n_actions) throw InputError("fixed behavior action out of range");
    return action;
  }
  const auto probs = probabilities(state, n_actions);
  double u = rng.uniform();
  for (int a = 0; a < n_actions; ++a) {
    u -= probs[static_cast<std::size_t>(a)];
    if (u < 0.0) return a;
  }
  return n_actions - 1;
}

namespace {

// Shared simulation loop: per cluster, per time, one state shock and one
// reward shock for the cluster, then individual noises per member.
template <class Step>
Dataset simulate_clusters(const ExperimentConfig& config, int n_actions, double init_mean, double init_std,
                          RngStream& rng, const BehaviorPolicy& behavior, Step&& step) {
  config.validate();
  const int n = config.n_clusters;
  const int m_size = config.cluster_size;
  std::vector<ClusterBlock> blocks;
  blocks.reserve(static_cast<std::size_t>(n) * config.horizon);
  std::vector<double> states(static_cast<std::size_t>(m_size));
  std::vector<int> actions(static_cast<std::size_t>(m_size));
  for (int i = 0; i < n; ++i) {
    for (auto& s : states) s = rng.normal(init_mean, init_std);
    for (int t = 0; t < config.horizon; ++t) {
      for (int m = 0; m < m_size; ++m) {
        const double s = states[static_cast<std::size_t>(m)];
        actions[static_cast<std::size_t>(m)] = behavior.sample(std::span<const double>(&s, 1), n_actions, rng);
      }
      ClusterBlock block{i, t, {}};
      block.members.resize(static_cast<std::size_t>(m_size));
      step(states, actions, block.members);
      for (int m = 0; m < m_size; ++m) states[static_cast<std::size_t>(m)] = block.members[static_cast<std::size_t>(m)].next_state[0];
      blocks.push_back(std::move(block));
    }
  }
  return Dataset(std::move(blocks), m_size, config.horizon, n_actions, 1);
}

}  // namespace

Dataset simulate_synthetic(const SyntheticEnvParams& p, const ExperimentConfig& config, RngStream rng,
                           const BehaviorPolicy& behavior) {
  p.validate();
  const double sd_state = std::sqrt(p.sigma1_sq);
  const double sd_indiv = std::sqrt(p.sigma2_sq);
  const double sd_cluster = std::sqrt(p.sigma3_sq);
  return simulate_clusters(
      config, 2, p.init_state_mean, p.init_state_std, rng, behavior,
      [&](const std::vector<double>& s, const std::vector<int>& a, std::vector<Transition>& out) {
        const double state_shock = rng.normal(0.0, sd_state);
        const double reward_shock = rng.normal(0.0, sd_cluster);
        for (std::size_t m = 0; m < out.size(); ++m) {
          const double sign = 2.0 * a[m] - 1.0;
          auto& tr = out[m];
          tr.state = {s[m]};
          tr.action = a[m];
          tr.reward = p.reward_quad_coef * s[m] * s[m] * sign + s[m] + reward_shock + rng.normal(0.0, sd_indiv);
          tr.next_state = {p.state_coef * s[m] * sign + state_shock};
        }
      });
}

Dataset simulate_semi_synthetic(const SemiSyntheticEnvParams& p, const ExperimentConfig& config, RngStream rng,
                                const BehaviorPolicy& behavior) {
  p.validate();
  const double sd_state_cluster = std::sqrt(p.state_cluster_var());
  const double sd_state_indiv = std::sqrt(p.state_individual_var());
  const double sd_reward_cluster = std::sqrt(p.reward_cluster_var());
  const double sd_reward_indiv = std::sqrt(p.reward_individual_var());
  return simulate_clusters(
      config, p.action_count(), p.init_state_mean, p.init_state_std, rng, behavior,
      [&](const std::vector<double>& s, const std::vector<int>& a, std::vector<Transition>& out) {
        const double state_shock = rng.normal(0.0, sd_state_cluster);
        const double reward_shock = rng.normal(0.0, sd_reward_cluster);
        for (std::size_t m = 0; m < out.size(); ++m) {
          auto& tr = out[m];
          tr.state = {s[m]};
          tr.action = a[m];
          const double state_noise = rng.normal(0.0, sd_state_indiv);
          const double reward_noise = rng.normal(0.0, sd_reward_indiv);
          tr.reward = p.reward_mean(a[m], s[m]) + reward_shock + reward_noise;
          tr.next_state = {p.transition_mean(a[m], s[m]) + state_shock + state_noise};
        }
      });
}

Dataset simulate(const Environment& env, const ExperimentConfig& config, RngStream rng,
                 const BehaviorPolicy& behavior) {
  if (const auto* syn = std::get_if<SyntheticEnvParams>(&env)) {
    return simulate_synthetic(*syn, config, std::move(rng), behavior);
  }
  auto semi = std::get<SemiSyntheticEnvParams>(env);
  semi.psi = config.psi;
  return simulate_semi_synthetic(semi, config, std::move(rng), behavior);
}

std::vector<std::vector<double>> rollout_policy(const ScalarModel& model, const Policy& policy, int n_traj,
                                                int horizon, const RngStream& rng, bool omit_reward_residuals,
                                                int first_traj) {
  if (n_traj < 1 || horizon < 1) throw ConfigError("rollouts need n_traj >= 1 and horizon >= 1");
  if (first_traj < 0) throw ConfigError("first_traj must be >= 0");
  std::vector<std::vector<double>> out(static_cast<std::size_t>(n_traj));
  for (int i = 0; i < n_traj; ++i) {
    const auto k = static_cast<std::uint64_t>(first_traj + i);
    RngStream shocks = rng.derive({k});
    RngStream choices = rng.derive({k, 1});
    auto& rewards = out[static_cast<std::size_t>(i)];
    rewards.resize(static_cast<std::size_t>(horizon));
    double s = model.init_mean + model.init_std * shocks.normal();
    for (int t = 0; t < horizon; ++t) {
      const int a = policy(std::span<const double>(&s, 1), choices);
      if (a < 0 || a >= model.action_count) throw InputError("policy returned an invalid action");
      const double z_state = shocks.normal();
      const double z_reward = shocks.normal();
      rewards[static_cast<std::size_t>(t)] =
          model.reward_mean(a, s) + (omit_reward_residuals ? 0.0 : model.reward_noise_std * z_reward);
      s = model.transition_mean(a, s) + model.state_noise_std * z_state;
    }
  }
  return out;
}

std::vector<std::vector<double>> rollout_policy(const Environment& env, const Policy& policy, int n_traj,
                                                int horizon, const RngStream& rng, bool omit_reward_residuals) {
  return rollout_policy(scalar_model(env), policy, n_traj, horizon, rng, omit_reward_residuals);
}

nlohmann::json env_to_json(const Environment& env) {
  if (const auto* p = std::get_if<SyntheticEnvParams>(&env)) {
    return {{"type", "synthetic"},
            {"state_coef", p->state_coef},
            {"reward_quad_coef", p->reward_quad_coef},
            {"sigma1_sq", p->sigma1_sq},
            {"sigma2_sq", p->sigma2_sq},
            {"sigma3_sq", p->sigma3_sq},
            {"init_state_mean", p->init_state_mean},
            {"init_state_std", p->init_state_std}};
  }
  const auto& p = std::get<SemiSyntheticEnvParams>(env);
  return {{"type", "semi_synthetic"},
          {"transition_coefs", p.transition_coefs},
          {"reward_coefs", p.reward_coefs},
          {"sigma_s_sq", p.sigma_s_sq},
          {"rho_s_sq", p.rho_s_sq},
          {"sigma_r_sq", p.sigma_r_sq},
          {"rho_r_sq", p.rho_r_sq},
          {"psi", p.psi},
          {"init_state_mean", p.init_state_mean},
          {"init_state_std", p.init_state_std}};
}

Environment env_from_json(const nlohmann::json& j) {
  try {
    const std::string type = j.value("type", std::string("synthetic"));
    if (type == "synthetic") {
      SyntheticEnvParams p;
      p.state_coef = j.value("state_coef", p.state_coef);
      p.reward_quad_coef = j.value("reward_quad_coef", p.reward_quad_coef);
      p.sigma1_sq = j.value("sigma1_sq", p.sigma1_sq);
      p.sigma2_sq = j.value("sigma2_sq", p.sigma2_sq);
      p.sigma3_sq = j.value("sigma3_sq", p.sigma3_sq);
      p.init_state_mean = j.value("init_state_mean", p.init_state_mean);
      p.init_state_std = j.value("init_state_std", p.init_state_std);
      p.validate();
      return p;
    }
    if (type == "semi_synthetic") {
      SemiSyntheticEnvParams p = default_semi_synthetic();
      p.transition_coefs = j.value("transition_coefs", p.transition_coefs);
      p.reward_coefs = j.value("reward_coefs", p.reward_coefs);
      p.sigma_s_sq = j.value("sigma_s_sq", p.sigma_s_sq);
      p.rho_s_sq = j.value("rho_s_sq", p.rho_s_sq);
      p.sigma_r_sq = j.value("sigma_r_sq", p.sigma_r_sq);
      p.rho_r_sq = j.value("rho_r_sq", p.rho_r_sq);
      p.psi = j.value("psi", p.psi);
      p.init_state_mean = j.value("init_state_mean", p.init_state_mean);
      p.init_state_std = j.value("init_state_std", p.init_state_std);
      p.validate();
      return p;
    }
    throw ConfigError("unknown env type '" + type + "'");
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("malformed env section: ") + e.what());
  }
}

Policy constant_policy(int action) {
  return [action](std::span<const double>, RngStream&) { return action; };
}

Policy uniform_policy(int n_actions) {
  return [n_actions](std::span<const double>, RngStream& rng) { return rng.uniform_int(n_actions); };
}

}  // namespace gfqi

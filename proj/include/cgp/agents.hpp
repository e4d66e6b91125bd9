#pragma once

// Twin-critic Q-learning with CEM-driven behavior and bootstrap actions, the four policy
// distillation variants (CGP/QGP x online/offline) and the DDPG/TD3 baselines.

#include <functional>
#include <optional>

#include "cgp/cem.hpp"
#include "cgp/config.hpp"
#include "cgp/envs.hpp"
#include "cgp/nn.hpp"
#include "cgp/record.hpp"
#include "cgp/replay.hpp"

namespace cgp::agents {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;

/// Live and target critics with their optimizer state. In single-critic (DDPG) use only
/// q1/q1_target are trained.
struct TwinCritic {
  TwinCritic(int obs_dim, int action_dim, const AgentConfig& config, Rng& rng);

  nn::DenseNet q1, q2, q1_target, q2_target;
  nn::AdamState q1_opt, q2_opt;
};

/// Deterministic tanh policy with its target copy.
struct PolicyHead {
  PolicyHead(int obs_dim, int action_dim, const AgentConfig& config, Rng& rng);

  nn::DenseNet net, target;
  nn::AdamState opt;
};

/// Layer sizes [in, width x hidden_layers, out].
std::vector<int> layer_sizes(int in, int out, const AgentConfig& config);

/// Q(s, a) for row-aligned batches.
Vector q_values(const nn::DenseNet& q, const Matrix& states, const Matrix& actions);
cem::QFunction q_function(const nn::DenseNet& q);

/// Parameters of the bootstrap target q* = r + gamma * min_j Q'_j(s', a').
struct BootstrapRule {
  double discount = 0.99;
  bool clipped_double_q = true;
  bool smoothing = true;
  double policy_noise = 0.2;
  double noise_clip = 0.5;
  /// When false, time-limit ends are treated like terminals (ablation only).
  bool bootstrap_time_limit = true;

  static BootstrapRule from(const AgentConfig& config, Mode mode);
};

/// Produces bootstrap actions for a batch of next states.
using TargetActionFn = std::function<Matrix(const Matrix& next_states, Rng& rng)>;

/// Adds clip(N(0, policy_noise^2), +-noise_clip) to every entry, then clips to [-1, 1].
Matrix smooth_target_actions(const Matrix& actions, double policy_noise, double noise_clip, Rng& rng);

/// Bootstrapped regression targets. Terminal transitions get q* = r; not_done and time_limit
/// transitions bootstrap (time_limit only while rule.bootstrap_time_limit holds).
Vector bellman_target(const Batch& batch, const TwinCritic& critic, const TargetActionFn& target_actions,
                      const BootstrapRule& rule, Rng& rng);

struct CriticLosses {
  double q1 = 0.0;
  std::optional<double> q2;  // absent in single-critic mode
};

/// One Adam step of each live critic toward the shared q* (mean squared error over the batch).
CriticLosses critic_update(const Batch& batch, TwinCritic& critic, const TargetActionFn& target_actions,
                           const BootstrapRule& rule, Rng& rng);

/// Regression of pi(s) onto fixed CEM actions: loss = mean_i ||pi(s_i) - a_i||^2.
double cgp_policy_update(const Matrix& states, PolicyHead& policy, const Matrix& cem_actions);

/// Ascent on Q1(s, pi(s)): loss = -mean_i Q1(s_i, pi(s_i)). The critic is not modified.
double qgp_policy_update(const Matrix& states, PolicyHead& policy, const nn::DenseNet& q1);

using PolicyFn = std::function<Vector(const Vector& observation)>;

struct EvalResult {
  double mean = 0.0;
  std::vector<double> returns;
};

/// Deterministic rollouts; episode starts are drawn from an rng seeded with `seed`.
EvalResult evaluate(envs::Env& env, const PolicyFn& policy, int episodes, std::uint64_t seed);

/// Everything a training run produces.
struct TrainOutput {
  RunRecord record;
  TwinCritic critic;
  std::optional<PolicyHead> policy;
  ReplayBuffer buffer;
};

struct OfflineStats {
  long updates = 0;
  double final_loss = 0.0;
  bool early_stopped = false;
};

/// Distills a policy against a frozen critic and replay buffer (offline schedule).
/// Runs up to config.offline_updates updates and stops early once the mean loss of a
/// window of offline_window updates improves by less than offline_min_improvement.
OfflineStats distill_offline(PolicyHead& policy, const nn::DenseNet& q1, const ReplayBuffer& buffer, Mode mode,
                             const AgentConfig& config, Rng& rng);

/// Called after every evaluation; lets callers log progress.
using ProgressFn = std::function<void(const EvalPoint&)>;

/// Runs the full training loop for spec.mode / spec.schedule. Never throws for numerical
/// divergence: the record is marked failed instead.
TrainOutput train(const RunSpec& spec, const ProgressFn& progress = {});

/// Greedy evaluation policy for a trained agent: pi_phi, or CEM over Q1 for Mode::CEM.
PolicyFn greedy_policy(const TrainOutput& out, const RunSpec& spec, std::uint64_t cem_seed);

}  // namespace cgp::agents

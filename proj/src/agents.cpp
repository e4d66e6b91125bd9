#include "cgp/agents.hpp"

#include <cmath>
#include <limits>
#include <memory>

#include "cgp/errors.hpp"

namespace cgp::agents {

namespace {

nn::AdamOptions adam_options(double lr, const AgentConfig& config) {
  nn::AdamOptions o;
  o.learning_rate = lr;
  o.weight_decay = config.weight_decay;
  return o;
}

Matrix concat(const Matrix& states, const Matrix& actions) {
  if (states.rows() != actions.rows()) throw ShapeError("state and action batches differ in length");
  Matrix in(states.rows(), states.cols() + actions.cols());
  in << states, actions;
  return in;
}

void require_finite(const Vector& v, const char* what) {
  for (Eigen::Index i = 0; i < v.size(); ++i) {
    if (!std::isfinite(v(i))) {
      throw NumericError(std::string(what) + ": non-finite value " + std::to_string(v(i)) + " at batch row " +
                         std::to_string(i));
    }
  }
}

// Mean-squared regression step of `net` toward `target` rows; returns the loss.
double regression_step(nn::DenseNet& net, nn::AdamState& opt, const Matrix& inputs, const Matrix& target) {
  nn::ForwardTape tape;
  const Matrix pred = net.forward(inputs, tape);
  const Matrix diff = pred - target;
  const double b = static_cast<double>(inputs.rows());
  const double loss = diff.rowwise().squaredNorm().sum() / b;
  if (!std::isfinite(loss)) throw NumericError("regression loss is not finite");
  const auto grads = nn::backward(net, tape, (2.0 / b) * diff);
  nn::adam_step(net, grads.params, opt);
  return loss;
}

}  // namespace

std::vector<int> layer_sizes(int in, int out, const AgentConfig& config) {
  std::vector<int> sizes{in};
  for (int i = 0; i < config.hidden_layers; ++i) sizes.push_back(config.hidden_width);
  sizes.push_back(out);
  return sizes;
}

TwinCritic::TwinCritic(int obs_dim, int action_dim, const AgentConfig& config, Rng& rng)
    : q1(layer_sizes(obs_dim + action_dim, 1, config), nn::Activation::Identity, rng),
      q2(layer_sizes(obs_dim + action_dim, 1, config), nn::Activation::Identity, rng),
      q1_target(q1),
      q2_target(q2),
      q1_opt(q1, adam_options(config.q_lr, config)),
      q2_opt(q2, adam_options(config.q_lr, config)) {}

PolicyHead::PolicyHead(int obs_dim, int action_dim, const AgentConfig& config, Rng& rng)
    : net(layer_sizes(obs_dim, action_dim, config), nn::Activation::Tanh, rng),
      target(net),
      opt(net, adam_options(config.policy_lr, config)) {}

Vector q_values(const nn::DenseNet& q, const Matrix& states, const Matrix& actions) {
  return q.forward(concat(states, actions)).col(0);
}

cem::QFunction q_function(const nn::DenseNet& q) {
  return [&q](const Matrix& states, const Matrix& actions) { return q_values(q, states, actions); };
}

BootstrapRule BootstrapRule::from(const AgentConfig& config, Mode mode) {
  BootstrapRule r;
  r.discount = config.discount;
  r.clipped_double_q = mode != Mode::DDPG;
  r.smoothing = config.target_smoothing && mode != Mode::DDPG;
  r.policy_noise = config.policy_noise;
  r.noise_clip = config.noise_clip;
  r.bootstrap_time_limit = config.bootstrap_time_limit;
  return r;
}

Matrix smooth_target_actions(const Matrix& actions, double policy_noise, double noise_clip, Rng& rng) {
  Matrix out = actions;
  std::normal_distribution<double> normal(0.0, 1.0);
  for (Eigen::Index i = 0; i < out.size(); ++i) {
    const double eps = std::clamp(policy_noise * normal(rng), -noise_clip, noise_clip);
    out.data()[i] = std::clamp(out.data()[i] + eps, -1.0, 1.0);
  }
  return out;
}

Vector bellman_target(const Batch& batch, const TwinCritic& critic, const TargetActionFn& target_actions,
                      const BootstrapRule& rule, Rng& rng) {
  Matrix next_actions = target_actions(batch.next_states, rng);
  if (rule.smoothing) next_actions = smooth_target_actions(next_actions, rule.policy_noise, rule.noise_clip, rng);

  Vector next_q = q_values(critic.q1_target, batch.next_states, next_actions);
  require_finite(next_q, "bootstrap Q1'");
  if (rule.clipped_double_q) {
    const Vector q2 = q_values(critic.q2_target, batch.next_states, next_actions);
    require_finite(q2, "bootstrap Q2'");
    next_q = next_q.cwiseMin(q2);
  }

  Vector target = batch.rewards;
  for (Eigen::Index i = 0; i < target.size(); ++i) {
    const auto kind = batch.end_kinds[static_cast<std::size_t>(i)];
    const bool bootstrap =
        kind == EndKind::NotDone || (kind == EndKind::TimeLimit && rule.bootstrap_time_limit);
    if (bootstrap) target(i) += rule.discount * next_q(i);
  }
  return target;
}

CriticLosses critic_update(const Batch& batch, TwinCritic& critic, const TargetActionFn& target_actions,
                           const BootstrapRule& rule, Rng& rng) {
  const Matrix target = bellman_target(batch, critic, target_actions, rule, rng);
  const Matrix inputs = concat(batch.states, batch.actions);
  CriticLosses losses;
  losses.q1 = regression_step(critic.q1, critic.q1_opt, inputs, target);
  if (rule.clipped_double_q) losses.q2 = regression_step(critic.q2, critic.q2_opt, inputs, target);
  return losses;
}

double cgp_policy_update(const Matrix& states, PolicyHead& policy, const Matrix& cem_actions) {
  if (cem_actions.rows() != states.rows() || cem_actions.cols() != policy.net.output_dim()) {
    throw ShapeError("cgp_policy_update: CEM action batch does not match states/policy");
  }
  return regression_step(policy.net, policy.opt, states, cem_actions);
}

double qgp_policy_update(const Matrix& states, PolicyHead& policy, const nn::DenseNet& q1) {
  nn::ForwardTape policy_tape, q_tape;
  const Matrix actions = policy.net.forward(states, policy_tape);
  const Vector q = q1.forward(concat(states, actions), q_tape).col(0);
  const double b = static_cast<double>(states.rows());
  const double loss = -q.mean();
  if (!std::isfinite(loss)) throw NumericError("qgp loss is not finite");

  const auto through_q = nn::backward(q1, q_tape, Matrix::Constant(states.rows(), 1, -1.0 / b));
  const Matrix action_grad = through_q.input_grad.rightCols(actions.cols());
  const auto grads = nn::backward(policy.net, policy_tape, action_grad);
  nn::adam_step(policy.net, grads.params, policy.opt);
  return loss;
}

EvalResult evaluate(envs::Env& env, const PolicyFn& policy, int episodes, std::uint64_t seed) {
  Rng rng(seed);
  EvalResult out;
  out.returns.reserve(static_cast<std::size_t>(episodes));
  for (int e = 0; e < episodes; ++e) {
    Vector obs = env.reset(rng);
    double total = 0.0;
    for (;;) {
      const auto step = env.step(policy(obs));
      total += step.reward;
      obs = step.next_observation;
      if (step.end_kind != EndKind::NotDone) break;
    }
    out.returns.push_back(total);
  }
  double sum = 0.0;
  for (double r : out.returns) sum += r;
  out.mean = episodes > 0 ? sum / episodes : 0.0;
  return out;
}

OfflineStats distill_offline(PolicyHead& policy, const nn::DenseNet& q1, const ReplayBuffer& buffer, Mode mode,
                             const AgentConfig& config, Rng& rng) {
  if (mode != Mode::CGP && mode != Mode::QGP) throw ConfigError("mode", "offline distillation needs cgp or qgp");
  if (buffer.empty()) throw UsageError("distill_offline: empty replay buffer");
  auto cem_cfg = config.cem;
  cem_cfg.action_dim = policy.net.output_dim();
  const auto q = q_function(q1);

  OfflineStats stats;
  double window_sum = 0.0;
  std::optional<double> previous_window;
  for (long u = 0; u < config.offline_updates; ++u) {
    const Batch batch = buffer.sample(static_cast<std::size_t>(config.batch_size), rng);
    double loss;
    if (mode == Mode::CGP) {
      const Matrix targets = cem::cem_policy_batched(batch.states, q, cem_cfg, rng);
      loss = cgp_policy_update(batch.states, policy, targets);
    } else {
      loss = qgp_policy_update(batch.states, policy, q1);
    }
    stats.updates = u + 1;
    stats.final_loss = loss;
    window_sum += loss;
    if (stats.updates % config.offline_window == 0) {
      const double mean = window_sum / static_cast<double>(config.offline_window);
      window_sum = 0.0;
      if (previous_window && *previous_window - mean < config.offline_min_improvement) {
        stats.early_stopped = true;
        break;
      }
      previous_window = mean;
    }
  }
  return stats;
}

PolicyFn greedy_policy(const TrainOutput& out, const RunSpec& spec, std::uint64_t cem_seed) {
  if (has_policy(spec.mode)) {
    const nn::DenseNet* net = &out.policy->net;
    return [net](const Vector& obs) -> Vector { return net->forward(obs.transpose()).row(0).transpose(); };
  }
  auto cem_cfg = spec.config.cem;
  cem_cfg.action_dim = out.policy ? out.policy->net.output_dim() : out.critic.q1.input_dim() - out.buffer.state_dim();
  auto rng = std::make_shared<Rng>(cem_seed);
  const nn::DenseNet* q1 = &out.critic.q1;
  return [q1, cem_cfg, rng](const Vector& obs) -> Vector {
    return cem::cem_policy(obs, q_function(*q1), cem_cfg, *rng);
  };
}

namespace {

// State of one training run; split out so the loop body stays readable.
class Trainer {
 public:
  Trainer(const RunSpec& spec, const ProgressFn& progress)
      : spec_(spec),
        cfg_(spec.config),
        progress_(progress),
        env_(envs::make_env(spec.env)),
        eval_env_(envs::make_env(spec.env)),
        obs_dim_(env_->spec().observation_dim),
        act_dim_(env_->spec().action_dim),
        init_rng_(make_rng({spec.seed, 1})),
        env_rng_(make_rng({spec.seed, 2})),
        behavior_rng_(make_rng({spec.seed, 3})),
        replay_rng_(make_rng({spec.seed, 4})),
        target_rng_(make_rng({spec.seed, 5})),
        policy_rng_(make_rng({spec.seed, 6})),
        eval_seed_(derive_seed({spec.seed, 7})),
        rule_(BootstrapRule::from(cfg_, spec.mode)),
        freq_(spec.mode == Mode::DDPG ? 1 : cfg_.target_update_freq),
        out_{RunRecord{}, TwinCritic(obs_dim_, act_dim_, cfg_, init_rng_), std::nullopt,
             ReplayBuffer(static_cast<std::size_t>(cfg_.replay_capacity))} {
    cem_cfg_ = cfg_.cem;
    cem_cfg_.action_dim = act_dim_;
    if (has_policy(spec.mode)) out_.policy.emplace(obs_dim_, act_dim_, cfg_, init_rng_);

    auto& rec = out_.record;
    rec.config_hash = hash_hex(config_hash(spec));
    rec.env = spec.env;
    rec.mode = spec.mode;
    rec.schedule = spec.schedule;
    rec.seed = spec.seed;
    rec.final_reward = std::numeric_limits<double>::quiet_NaN();
  }

  TrainOutput run() {
    auto& rec = out_.record;
    try {
      loop();
      if (spec_.schedule == Schedule::Offline && rec.status == RunStatus::Completed) finish_offline();
    } catch (const NumericError& e) {
      rec.status = RunStatus::Failed;
      rec.failure = e.what();
    }
    if (rec.status == RunStatus::Completed && !rec.series.empty()) rec.final_reward = rec.series.back().mean;
    return std::move(out_);
  }

 private:
  Vector behavior_action(const Vector& obs, long step) {
    if (step <= cfg_.initial_random_steps) {
      std::uniform_real_distribution<double> u(-1.0, 1.0);
      Vector a(act_dim_);
      for (int j = 0; j < act_dim_; ++j) a(j) = u(behavior_rng_);
      return a;
    }
    if (uses_cem(spec_.mode)) return cem::cem_policy(obs, q_function(out_.critic.q1), cem_cfg_, behavior_rng_);
    Vector a = out_.policy->net.forward(obs.transpose()).row(0).transpose();
    if (cfg_.exploration_noise > 0.0) {
      std::normal_distribution<double> noise(0.0, cfg_.exploration_noise);
      for (int j = 0; j < act_dim_; ++j) a(j) += noise(behavior_rng_);
    }
    return a;
  }

  Matrix target_actions(const Matrix& next_states, Rng& rng) {
    if (uses_cem(spec_.mode)) return cem::cem_policy_batched(next_states, q_function(out_.critic.q1_target), cem_cfg_, rng);
    return out_.policy->target.forward(next_states);
  }

  void train_once() {
    auto& rec = out_.record;
    const Batch batch = out_.buffer.sample(static_cast<std::size_t>(cfg_.batch_size), replay_rng_);
    TargetActionFn fn = [this](const Matrix& s, Rng& rng) { return target_actions(s, rng); };
    critic_update(batch, out_.critic, fn, rule_, target_rng_);
    ++rec.critic_updates;

    if (rec.critic_updates % freq_ != 0) return;
    if (out_.policy && spec_.schedule == Schedule::Online) {
      if (spec_.mode == Mode::CGP) {
        const Matrix targets = cem::cem_policy_batched(batch.states, q_function(out_.critic.q1), cem_cfg_, policy_rng_);
        cgp_policy_update(batch.states, *out_.policy, targets);
      } else {
        qgp_policy_update(batch.states, *out_.policy, out_.critic.q1);
      }
      ++rec.policy_updates;
    }
    nn::polyak_update(out_.critic.q1_target, out_.critic.q1, cfg_.tau);
    if (rule_.clipped_double_q) nn::polyak_update(out_.critic.q2_target, out_.critic.q2, cfg_.tau);
    if (out_.policy) nn::polyak_update(out_.policy->target, out_.policy->net, cfg_.tau);
    ++rec.target_updates;
  }

  PolicyFn eval_policy(long eval_index) {
    const bool use_cem = !has_policy(spec_.mode) || (spec_.schedule == Schedule::Offline && !distilled_);
    if (!use_cem) return greedy_policy(out_, spec_, 0);
    auto rng = std::make_shared<Rng>(derive_seed({spec_.seed, 8, static_cast<std::uint64_t>(eval_index)}));
    auto cfg = cem_cfg_;
    const nn::DenseNet* q1 = &out_.critic.q1;
    return [q1, cfg, rng](const Vector& obs) -> Vector { return cem::cem_policy(obs, q_function(*q1), cfg, *rng); };
  }

  EvalPoint run_eval(long step) {
    const auto result =
        evaluate(*eval_env_, eval_policy(static_cast<long>(out_.record.series.size())), cfg_.eval_episodes, eval_seed_);
    if (!std::isfinite(result.mean)) throw NumericError("evaluation return is not finite");
    return {step, result.mean, result.returns};
  }

  void loop() {
    auto& rec = out_.record;
    Vector obs = env_->reset(env_rng_);
    long pending = 0;  // deferred updates for the per-episode cadence
    for (long step = 1; step <= cfg_.total_steps; ++step) {
      const Vector action = behavior_action(obs, step);
      const auto result = env_->step(action);
      out_.buffer.push({obs, action.cwiseMax(-1.0).cwiseMin(1.0), result.reward, result.next_observation,
                        result.end_kind});
      rec.steps_taken = step;
      rec.clamped_actions = static_cast<long>(env_->clamp_count());
      const bool episode_over = result.end_kind != EndKind::NotDone;
      obs = episode_over ? env_->reset(env_rng_) : result.next_observation;

      if (cfg_.update_cadence == UpdateCadence::PerStep) {
        train_once();
      } else {
        ++pending;
        if (episode_over || step == cfg_.total_steps) {
          for (; pending > 0; --pending) train_once();
        }
      }

      if (step % cfg_.eval_every == 0) {
        rec.series.push_back(run_eval(step));
        if (progress_) progress_(rec.series.back());
        if (cfg_.stop_at_reward && rec.series.back().mean >= *cfg_.stop_at_reward) break;
      }
    }
  }

  void finish_offline() {
    auto& rec = out_.record;
    Rng rng = make_rng({spec_.seed, 9});
    const auto stats = distill_offline(*out_.policy, out_.critic.q1, out_.buffer, spec_.mode, cfg_, rng);
    rec.offline_updates = stats.updates;
    distilled_ = true;
    // The evaluation at the last step taken reflects the distilled policy.
    if (!rec.series.empty() && rec.series.back().step == rec.steps_taken) {
      rec.series.back() = run_eval(rec.steps_taken);
      if (progress_) progress_(rec.series.back());
    }
  }

  const RunSpec& spec_;
  const AgentConfig& cfg_;
  ProgressFn progress_;
  std::unique_ptr<envs::Env> env_, eval_env_;
  int obs_dim_, act_dim_;
  Rng init_rng_, env_rng_, behavior_rng_, replay_rng_, target_rng_, policy_rng_;
  std::uint64_t eval_seed_;
  BootstrapRule rule_;
  int freq_;
  cem::CemConfig cem_cfg_;
  bool distilled_ = false;
  TrainOutput out_;
};

}  // namespace

TrainOutput train(const RunSpec& spec, const ProgressFn& progress) {
  spec.validate();
  Trainer trainer(spec, progress);
  return trainer.run();
}

}  // namespace cgp::agents

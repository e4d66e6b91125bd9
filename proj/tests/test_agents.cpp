#include <gtest/gtest.h>

#include <cmath>
#include <numbers>
#include <sstream>

#include "cgp/agents.hpp"
#include "cgp/errors.hpp"
#include "experiments.hpp"
#include "oracles.hpp"

using namespace cgp;
using namespace cgp::agents;
using Eigen::MatrixXd;
using Eigen::VectorXd;

namespace {

// Net whose output is `value` for every input.
nn::DenseNet constant_net(const std::vector<int>& sizes, double value) {
  auto net = nn::DenseNet::zeros(sizes, nn::Activation::Identity);
  net.layers().back().bias.setConstant(value);
  return net;
}

AgentConfig small_config(int width = 16) {
  AgentConfig c;
  c.hidden_width = width;
  return c;
}

Batch make_batch(const MatrixXd& s, const MatrixXd& a, const VectorXd& r, const MatrixXd& s2,
                 std::vector<EndKind> ends) {
  return Batch{s, a, r, s2, std::move(ends)};
}

TargetActionFn zero_actions(int d) {
  return [d](const MatrixXd& s, Rng&) { return MatrixXd(MatrixXd::Zero(s.rows(), d)); };
}

std::vector<double> flat_params(nn::DenseNet net) {
  std::vector<double> out;
  net.for_each_parameter([&](double& p) { out.push_back(p); });
  return out;
}

// With learning rate = epsilon = 1e6 the first Adam step is -g to about 1e-6 relative error,
// so the parameter change exposes the gradient the update used.
void expose_gradient(nn::AdamState& opt) {
  opt.options.learning_rate = 1e6;
  opt.options.epsilon = 1e6;
}

double hand_q(const nn::DenseNet& q, const VectorXd& s, const VectorXd& a) {
  std::vector<double> x(s.data(), s.data() + s.size());
  x.insert(x.end(), a.data(), a.data() + a.size());
  return oracle::hand_forward(q, x)[0];
}

RunSpec tiny_run(Mode mode, long steps) {
  RunSpec spec;
  spec.env = "point-mass-reacher";
  spec.mode = mode;
  spec.seed = 7;
  auto& c = spec.config;
  c.hidden_width = 8;
  c.batch_size = 8;
  c.total_steps = steps;
  c.initial_random_steps = 50;
  c.eval_every = 50;
  c.eval_episodes = 1;
  c.replay_capacity = 10'000;
  c.offline_updates = 200;
  c.offline_window = 50;
  return spec;
}

}  // namespace

TEST(BellmanTarget, WorkedExamples) {
  const auto cfg = small_config();
  Rng rng(0);
  TwinCritic critic(2, 1, cfg, rng);
  critic.q1_target = constant_net({3, 16, 16, 1}, 2.0);
  critic.q2_target = constant_net({3, 16, 16, 1}, 3.0);
  const MatrixXd s = MatrixXd::Zero(3, 2);
  const MatrixXd a = MatrixXd::Zero(3, 1);
  VectorXd r(3);
  r << 1.0, -1.0, 0.0;
  auto batch = make_batch(s, a, r, s, {EndKind::NotDone, EndKind::Terminal, EndKind::TimeLimit});
  const auto rule = BootstrapRule::from(cfg, Mode::CGP);
  const VectorXd q = bellman_target(batch, critic, zero_actions(1), rule, rng);
  EXPECT_NEAR(q(0), 1.0 + 0.99 * 2.0, 1e-12);  // 2.98
  EXPECT_EQ(q(1), -1.0);
  EXPECT_NEAR(q(2), 0.99 * 2.0, 1e-12);

  // Time-limit example with min Q' = 5.
  critic.q1_target = constant_net({3, 16, 16, 1}, 6.0);
  critic.q2_target = constant_net({3, 16, 16, 1}, 5.0);
  EXPECT_NEAR(bellman_target(batch, critic, zero_actions(1), rule, rng)(2), 4.95, 1e-12);
}

TEST(BellmanTarget, AblationMasksTimeLimitsOnly) {
  const auto cfg = small_config();
  Rng rng(0);
  TwinCritic critic(2, 1, cfg, rng);
  critic.q1_target = constant_net({3, 16, 16, 1}, 5.0);
  critic.q2_target = constant_net({3, 16, 16, 1}, 5.0);
  VectorXd r(3);
  r << 0.5, 0.5, 0.5;
  auto batch = make_batch(MatrixXd::Zero(3, 2), MatrixXd::Zero(3, 1), r, MatrixXd::Zero(3, 2),
                          {EndKind::NotDone, EndKind::Terminal, EndKind::TimeLimit});
  auto rule = BootstrapRule::from(cfg, Mode::CGP);
  rule.bootstrap_time_limit = false;
  const VectorXd q = bellman_target(batch, critic, zero_actions(1), rule, rng);
  EXPECT_NEAR(q(0), 0.5 + 0.99 * 5.0, 1e-12);
  EXPECT_EQ(q(1), 0.5);
  EXPECT_EQ(q(2), 0.5);
}

TEST(BellmanTarget, ClippedDoubleQNeverExceedsSingle) {
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    const auto cfg = small_config();
    Rng init(seed);
    TwinCritic critic(3, 2, cfg, init);
    std::normal_distribution<double> n(0.0, 1.0);
    MatrixXd s(64, 3), s2(64, 3), a(64, 2);
    VectorXd r(64);
    a.setZero();
    for (int i = 0; i < 64; ++i) {
      for (int j = 0; j < 3; ++j) s(i, j) = n(init), s2(i, j) = n(init);
      r(i) = n(init);
    }
    auto batch = make_batch(s, a, r, s2, std::vector<EndKind>(64, EndKind::NotDone));
    auto twin = BootstrapRule::from(cfg, Mode::CGP);
    auto single = twin;
    single.clipped_double_q = false;
    auto cem_cfg = cfg.cem;
    cem_cfg.action_dim = 2;
    TargetActionFn cem_fn = [&](const MatrixXd& ns, Rng& g) {
      return cem::cem_policy_batched(ns, q_function(critic.q1_target), cem_cfg, g);
    };
    Rng g1(seed + 50), g2(seed + 50);
    const VectorXd q_min = bellman_target(batch, critic, cem_fn, twin, g1);
    const VectorXd q_one = bellman_target(batch, critic, cem_fn, single, g2);
    EXPECT_TRUE((q_min.array() <= q_one.array()).all()) << "seed " << seed;
  }
}

TEST(Smoothing, NoiseClippedThenActionsClipped) {
  Rng rng(3);
  const MatrixXd zeros = MatrixXd::Zero(2000, 2);
  const MatrixXd eps = smooth_target_actions(zeros, 0.2, 0.5, rng);
  EXPECT_LE(eps.cwiseAbs().maxCoeff(), 0.5);
  EXPECT_EQ(eps.cwiseAbs().maxCoeff(), 0.5);  // 2.5 sigma tails do get clipped
  EXPECT_NEAR(eps.mean(), 0.0, 0.01);
  const MatrixXd edge = MatrixXd::Constant(2000, 2, 0.9);
  const MatrixXd out = smooth_target_actions(edge, 0.2, 0.5, rng);
  EXPECT_LE(out.maxCoeff(), 1.0);
  EXPECT_GE(out.minCoeff(), 0.4);
  EXPECT_EQ(out.maxCoeff(), 1.0);
}

TEST(CriticUpdate, ZeroLossAtFixedPoint) {
  auto cfg = small_config();
  Rng rng(1);
  TwinCritic critic(2, 1, cfg, rng);
  const double c = 4.0;
  for (auto* q : {&critic.q1, &critic.q2, &critic.q1_target, &critic.q2_target}) *q = constant_net({3, 16, 16, 1}, c);
  VectorXd r = VectorXd::Constant(5, c * (1.0 - 0.99));
  auto batch = make_batch(MatrixXd::Ones(5, 2), MatrixXd::Zero(5, 1), r, MatrixXd::Ones(5, 2),
                          std::vector<EndKind>(5, EndKind::NotDone));
  const auto before = critic.q1;
  const auto losses = critic_update(batch, critic, zero_actions(1), BootstrapRule::from(cfg, Mode::CGP), rng);
  EXPECT_NEAR(losses.q1, 0.0, 1e-20);
  ASSERT_TRUE(losses.q2.has_value());
  EXPECT_TRUE(critic.q1 == before);
}

TEST(CriticUpdate, GradientMatchesFiniteDifferences) {
  for (std::uint64_t seed = 0; seed < 3; ++seed) {
    auto cfg = small_config(8);
    Rng rng(seed);
    TwinCritic critic(3, 2, cfg, rng);
    std::normal_distribution<double> n(0.0, 1.0);
    const int b = 6;
    MatrixXd s(b, 3), s2(b, 3), a(b, 2);
    VectorXd r(b);
    for (int i = 0; i < b; ++i) {
      for (int j = 0; j < 3; ++j) s(i, j) = n(rng), s2(i, j) = n(rng);
      for (int j = 0; j < 2; ++j) a(i, j) = std::tanh(n(rng));
      r(i) = n(rng);
    }
    auto batch = make_batch(s, a, r, s2, {EndKind::NotDone, EndKind::Terminal, EndKind::TimeLimit,
                                          EndKind::NotDone, EndKind::NotDone, EndKind::Terminal});
    auto rule = BootstrapRule::from(cfg, Mode::CGP);
    rule.smoothing = false;
    Rng t(9);
    const VectorXd target = bellman_target(batch, critic, zero_actions(2), rule, t);

    auto loss = [&](const nn::DenseNet& q) {
      double acc = 0.0;
      for (int i = 0; i < b; ++i) {
        const double e = hand_q(q, s.row(i).transpose(), a.row(i).transpose()) - target(i);
        acc += e * e;
      }
      return acc / b;
    };

    nn::DenseNet probe = critic.q1;
    const auto before = flat_params(critic.q1);
    expose_gradient(critic.q1_opt);
    critic_update(batch, critic, zero_actions(2), rule, t);
    const auto after = flat_params(critic.q1);

    std::vector<double*> params;
    probe.for_each_parameter([&](double& p) { params.push_back(&p); });
    double worst = 0.0;
    const double h = 1e-5;
    for (std::size_t k = 0; k < params.size(); ++k) {
      const double saved = *params[k];
      *params[k] = saved + h;
      const double up = loss(probe);
      *params[k] = saved - h;
      const double down = loss(probe);
      *params[k] = saved;
      worst = std::max(worst, oracle::rel_error(before[k] - after[k], (up - down) / (2.0 * h)));
    }
    EXPECT_LT(worst, 1e-4) << "seed " << seed;
  }
}

TEST(CgpPolicyUpdate, AtTargetsNoLossNoMovement) {
  auto cfg = small_config();
  Rng rng(2);
  PolicyHead policy(3, 2, cfg, rng);
  const MatrixXd s = MatrixXd::Random(10, 3);
  const MatrixXd targets = policy.net.forward(s);
  const auto before = policy.net;
  EXPECT_EQ(cgp_policy_update(s, policy, targets), 0.0);
  EXPECT_TRUE(policy.net == before);
}

TEST(CgpPolicyUpdate, LossDecreasesOnFrozenBatch) {
  auto cfg = small_config();
  Rng rng(4);
  PolicyHead policy(3, 2, cfg, rng);
  const MatrixXd s = MatrixXd::Random(32, 3);
  const MatrixXd targets = MatrixXd::Random(32, 2) * 0.8;
  double prev = cgp_policy_update(s, policy, targets);
  const double first = prev;
  int increases = 0;
  for (int i = 1; i < 1000; ++i) {
    const double l = cgp_policy_update(s, policy, targets);
    increases += l > prev;
    prev = l;
  }
  EXPECT_EQ(increases, 0);
  EXPECT_LT(prev, first);
}

TEST(CgpPolicyUpdate, RecoversLeastSquaresMean) {
  // One state with several CEM targets: the squared-loss optimum is their mean.
  auto cfg = small_config();
  cfg.hidden_layers = 0;
  cfg.policy_lr = 1e-2;
  Rng rng(5);
  PolicyHead policy(2, 1, cfg, rng);
  MatrixXd s(4, 2);
  s.rowwise() = Eigen::RowVector2d(0.3, -0.7);
  MatrixXd targets(4, 1);
  targets << 0.1, 0.3, -0.2, 0.6;
  for (int i = 0; i < 5000; ++i) cgp_policy_update(s, policy, targets);
  EXPECT_NEAR(policy.net.forward(s)(0, 0), 0.2, 1e-3);
}

TEST(QgpPolicyUpdate, AscendsLinearCritic) {
  auto cfg = small_config();
  Rng rng(6);
  PolicyHead policy(2, 1, cfg, rng);
  // Q(s, a) = 3 a, increasing in a: pi should move toward +1.
  auto q = nn::DenseNet::zeros({3, 1}, nn::Activation::Identity);
  q.layers()[0].weight(2, 0) = 3.0;
  const MatrixXd s = MatrixXd::Random(16, 2);
  const double before = policy.net.forward(s).mean();
  for (int i = 0; i < 200; ++i) qgp_policy_update(s, policy, q);
  EXPECT_GT(policy.net.forward(s).mean(), before + 0.1);
}

TEST(QgpPolicyUpdate, ConstantInActionGivesNoGradient) {
  auto cfg = small_config();
  Rng rng(7);
  PolicyHead policy(2, 1, cfg, rng);
  auto q = nn::DenseNet::zeros({3, 1}, nn::Activation::Identity);
  q.layers()[0].weight(0, 0) = 2.0;  // depends on the state only
  const MatrixXd s = MatrixXd::Random(16, 2);
  const auto before = policy.net;
  qgp_policy_update(s, policy, q);
  EXPECT_TRUE(policy.net == before);
}

TEST(QgpPolicyUpdate, GradientThroughCriticMatchesFiniteDifferences) {
  auto cfg = small_config(8);
  Rng rng(8);
  PolicyHead policy(3, 2, cfg, rng);
  nn::DenseNet q(layer_sizes(5, 1, cfg), nn::Activation::Identity, rng);
  const nn::DenseNet q_copy = q;
  const MatrixXd s = MatrixXd::Random(5, 3);

  auto loss = [&](const nn::DenseNet& pi) {
    double acc = 0.0;
    for (int i = 0; i < s.rows(); ++i) {
      const VectorXd si = s.row(i).transpose();
      const auto a = oracle::hand_forward(pi, {si.data(), si.data() + si.size()});
      acc -= hand_q(q, si, Eigen::Map<const VectorXd>(a.data(), 2));
    }
    return acc / static_cast<double>(s.rows());
  };

  nn::DenseNet probe = policy.net;
  const auto before = flat_params(policy.net);
  expose_gradient(policy.opt);
  qgp_policy_update(s, policy, q);
  const auto after = flat_params(policy.net);
  EXPECT_TRUE(q == q_copy);  // critic untouched

  std::vector<double*> params;
  probe.for_each_parameter([&](double& p) { params.push_back(&p); });
  double worst = 0.0;
  for (std::size_t k = 0; k < params.size(); ++k) {
    const double saved = *params[k];
    *params[k] = saved + 1e-5;
    const double up = loss(probe);
    *params[k] = saved - 1e-5;
    const double down = loss(probe);
    *params[k] = saved;
    worst = std::max(worst, oracle::rel_error(before[k] - after[k], (up - down) / 2e-5));
  }
  EXPECT_LT(worst, 1e-4);
}

TEST(Evaluate, PassivePendulumMatchesScriptedRollout) {
  envs::Pendulum env;
  const double theta0 = std::numbers::pi - 0.1;
  env.set_fixed_start(std::make_pair(theta0, 0.0));
  const auto res = evaluate(env, [](const VectorXd&) { return VectorXd(VectorXd::Zero(1)); }, 2, 11);
  double theta = theta0, w = 0.0, expected = 0.0;
  for (int t = 0; t < 200; ++t) {
    const double wrapped = std::remainder(theta, 2.0 * std::numbers::pi);
    expected -= wrapped * wrapped + 0.1 * w * w;
    w = std::clamp(w + 15.0 * std::sin(theta) * 0.05, -8.0, 8.0);
    theta += w * 0.05;
  }
  ASSERT_EQ(res.returns.size(), 2u);
  EXPECT_NEAR(res.returns[0], expected, 1e-9 * std::abs(expected));
  EXPECT_EQ(res.returns[0], res.returns[1]);
  EXPECT_EQ(res.mean, res.returns[0]);
}

TEST(Evaluate, SameSeedSameReturns) {
  auto env = envs::make_env("point-mass-reacher");
  auto policy = [](const VectorXd& o) { return VectorXd((-0.5 * o.head(2) - 0.8 * o.tail(2)).cwiseMax(-1).cwiseMin(1)); };
  const auto a = evaluate(*env, policy, 3, 5);
  const auto b = evaluate(*env, policy, 3, 5);
  EXPECT_EQ(a.returns, b.returns);
}

TEST(Train, DelayedUpdateCounts) {
  for (auto mode : {Mode::CGP, Mode::TD3}) {
    const auto out = train(tiny_run(mode, 101));
    EXPECT_EQ(out.record.status, RunStatus::Completed);
    EXPECT_EQ(out.record.critic_updates, 101);
    EXPECT_EQ(out.record.policy_updates, 50);
    EXPECT_EQ(out.record.target_updates, 50);
  }
  auto ddpg = train(tiny_run(Mode::DDPG, 101));
  EXPECT_EQ(ddpg.record.policy_updates, 101);
}

TEST(Train, CemOnlyWithRandomPhaseOnly) {
  auto spec = tiny_run(Mode::CEM, 50);
  const auto out = train(spec);
  EXPECT_EQ(out.record.status, RunStatus::Completed);
  EXPECT_FALSE(out.policy.has_value());
  ASSERT_EQ(out.record.series.size(), 1u);
  EXPECT_TRUE(std::isfinite(out.record.final_reward));
}

TEST(Train, IdenticalSpecsGiveIdenticalRecords) {
  const auto spec = tiny_run(Mode::CGP, 120);
  std::ostringstream a, b;
  write_record_csv(a, train(spec).record);
  write_record_csv(b, train(spec).record);
  EXPECT_EQ(a.str(), b.str());
  auto other = spec;
  other.seed = 8;
  std::ostringstream c;
  write_record_csv(c, train(other).record);
  EXPECT_NE(a.str(), c.str());
}

TEST(Train, DivergenceMarksRunFailed) {
  auto spec = tiny_run(Mode::CGP, 100);
  spec.config.q_lr = 1e300;
  const auto out = train(spec);
  EXPECT_EQ(out.record.status, RunStatus::Failed);
  EXPECT_FALSE(out.record.failure.empty());
  EXPECT_EQ(out.record.ranked_final(), -std::numeric_limits<double>::infinity());
}

TEST(Offline, DistillsFromReloadedArtifacts) {
  auto spec = tiny_run(Mode::CGP, 100);
  spec.schedule = Schedule::Offline;
  const auto out = train(spec);
  ASSERT_EQ(out.record.status, RunStatus::Completed);
  EXPECT_GT(out.record.offline_updates, 0);
  EXPECT_LE(out.record.offline_updates, 200);

  std::stringstream qs, bs;
  nn::save(out.critic.q1, qs);
  out.buffer.save(bs);
  const auto q1 = nn::load(qs);
  const auto buffer = ReplayBuffer::load(bs);

  Rng i1(1), i2(1), r1(2), r2(2);
  PolicyHead p1(4, 2, spec.config, i1), p2(4, 2, spec.config, i2);
  const auto s1 = distill_offline(p1, out.critic.q1, out.buffer, Mode::CGP, spec.config, r1);
  const auto s2 = distill_offline(p2, q1, buffer, Mode::CGP, spec.config, r2);
  EXPECT_EQ(s1.updates, s2.updates);
  EXPECT_TRUE(p1.net == p2.net);
}

TEST(ClippedDoubleQ, BanditBiasIsSmallerThanSingleCritic) {
  experiment::BanditOptions opt;
  opt.updates = 600;
  double twin = 0.0, single = 0.0;
  for (std::uint64_t seed = 0; seed < 4; ++seed) {
    twin += experiment::bandit_value_bias(seed, true, opt);
    single += experiment::bandit_value_bias(seed, false, opt);
  }
  EXPECT_LT(twin, single);
}

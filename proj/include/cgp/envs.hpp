#pragma once

// Deterministic toy continuous-control tasks. Agents always act in the (-1, 1)^d box; each env
// maps that box affinely onto its physical actuator range. Dynamics, rewards and initial
// distributions are documented in docs/environments.md.

#include <Eigen/Dense>
#include <iosfwd>
#include <memory>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "cgp/replay.hpp"
#include "cgp/rng.hpp"

namespace cgp::envs {

using Vector = Eigen::VectorXd;

struct EnvSpec {
  std::string name;
  int observation_dim = 0;
  int action_dim = 0;
  int max_episode_steps = 0;
  Vector action_low;   // physical box
  Vector action_high;

  Vector to_physical(const Vector& normalized) const;
  Vector to_normalized(const Vector& physical) const;
};

struct StepResult {
  Vector next_observation;
  double reward = 0.0;
  EndKind end_kind = EndKind::NotDone;
};

class Env {
 public:
  virtual ~Env() = default;

  virtual const EnvSpec& spec() const = 0;

  /// Starts a new episode and zeroes the step counter.
  Vector reset(Rng& rng);

  /// Advances one fixed time step. Actions outside [-1, 1] are clamped and counted.
  /// `TimeLimit` is reported exactly at step max_episode_steps unless the step was terminal.
  StepResult step(const Vector& action);

  int steps() const noexcept { return steps_; }
  bool active() const noexcept { return active_; }
  std::size_t clamp_count() const noexcept { return clamped_; }

 protected:
  struct Physics {
    Vector observation;
    double reward = 0.0;
    bool terminal = false;
  };
  virtual Vector do_reset(Rng& rng) = 0;
  virtual Physics do_step(const Vector& physical_action) = 0;

 private:
  int steps_ = 0;
  bool active_ = false;
  std::size_t clamped_ = 0;
};

/// Torque-limited pendulum swing-up. theta = 0 is upright. Never terminal.
class Pendulum final : public Env {
 public:
  static constexpr double kGravity = 10.0;
  static constexpr double kMass = 1.0;
  static constexpr double kLength = 1.0;
  static constexpr double kDt = 0.05;
  static constexpr double kMaxTorque = 2.0;
  static constexpr double kMaxSpeed = 8.0;
  static constexpr int kMaxSteps = 200;

  Pendulum();

  const EnvSpec& spec() const override { return spec_; }

  /// Pins every subsequent reset to (theta, theta_dot) instead of sampling.
  void set_fixed_start(std::optional<std::pair<double, double>> start) { fixed_start_ = start; }

  double theta() const noexcept { return theta_; }
  double theta_dot() const noexcept { return theta_dot_; }

  static double normalize_angle(double theta);
  Vector observe() const;

 protected:
  Vector do_reset(Rng& rng) override;
  Physics do_step(const Vector& physical_action) override;

 private:
  EnvSpec spec_;
  double theta_ = 0.0;
  double theta_dot_ = 0.0;
  std::optional<std::pair<double, double>> fixed_start_;
};

/// 2-D double integrator that must reach a random goal. Observation is (p - g, v).
/// Terminal when the goal ball is reached.
class PointMass final : public Env {
 public:
  static constexpr double kDt = 0.1;
  static constexpr double kMaxAccel = 1.0;
  static constexpr double kMaxSpeed = 1.0;
  static constexpr double kGoalRadius = 0.1;
  static constexpr double kMinStartDistance = 0.2;
  static constexpr int kMaxSteps = 150;

  struct Start {
    Eigen::Vector2d position;
    Eigen::Vector2d velocity;
    Eigen::Vector2d goal;
  };

  PointMass();

  const EnvSpec& spec() const override { return spec_; }
  void set_fixed_start(std::optional<Start> start) { fixed_start_ = std::move(start); }

  const Eigen::Vector2d& position() const noexcept { return pos_; }
  const Eigen::Vector2d& velocity() const noexcept { return vel_; }
  const Eigen::Vector2d& goal() const noexcept { return goal_; }
  Vector observe() const;

 protected:
  Vector do_reset(Rng& rng) override;
  Physics do_step(const Vector& physical_action) override;

 private:
  EnvSpec spec_;
  Eigen::Vector2d pos_ = Eigen::Vector2d::Zero();
  Eigen::Vector2d vel_ = Eigen::Vector2d::Zero();
  Eigen::Vector2d goal_ = Eigen::Vector2d::Zero();
  std::optional<Start> fixed_start_;
};

/// "pendulum-swingup" or "point-mass-reacher"; throws ConfigError("env", ...) otherwise.
std::unique_ptr<Env> make_env(std::string_view name);
std::vector<std::string> env_names();

struct TrajectoryRow {
  int step = 0;
  Vector observation;
  Vector action;
  double reward = 0.0;
  EndKind end_kind = EndKind::NotDone;
};

/// CSV columns: step, obs_0..obs_{k-1}, act_0..act_{d-1}, reward, end_kind.
void write_trajectory_csv(std::ostream& out, const std::vector<TrajectoryRow>& rows);

}  // namespace cgp::envs

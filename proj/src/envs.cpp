#include "cgp/envs.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <ostream>

#include "cgp/errors.hpp"
#include "cgp/serialize.hpp"

namespace cgp::envs {

Vector EnvSpec::to_physical(const Vector& normalized) const {
  return action_low + (normalized.array() + 1.0).matrix().cwiseProduct(action_high - action_low) / 2.0;
}

Vector EnvSpec::to_normalized(const Vector& physical) const {
  return (2.0 * (physical - action_low).array() / (action_high - action_low).array() - 1.0).matrix();
}

Vector Env::reset(Rng& rng) {
  steps_ = 0;
  active_ = true;
  return do_reset(rng);
}

StepResult Env::step(const Vector& action) {
  if (!active_) throw UsageError("step: episode is over, call reset()");
  const auto& s = spec();
  if (action.size() != s.action_dim) {
    throw ShapeError("step: action has " + std::to_string(action.size()) + " entries, expected " +
                     std::to_string(s.action_dim));
  }
  if (!action.allFinite()) throw NumericError("step: non-finite action");
  Vector clipped = action.cwiseMax(-1.0).cwiseMin(1.0);
  if (clipped != action) ++clamped_;

  auto phys = do_step(s.to_physical(clipped));
  ++steps_;
  StepResult out{std::move(phys.observation), phys.reward, EndKind::NotDone};
  if (phys.terminal) {
    out.end_kind = EndKind::Terminal;
  } else if (steps_ >= s.max_episode_steps) {
    out.end_kind = EndKind::TimeLimit;
  }
  if (out.end_kind != EndKind::NotDone) active_ = false;
  return out;
}

// ---------------------------------------------------------------------------------------------

Pendulum::Pendulum() {
  spec_.name = "pendulum-swingup";
  spec_.observation_dim = 3;
  spec_.action_dim = 1;
  spec_.max_episode_steps = kMaxSteps;
  spec_.action_low = Vector::Constant(1, -kMaxTorque);
  spec_.action_high = Vector::Constant(1, kMaxTorque);
}

double Pendulum::normalize_angle(double theta) {
  const double two_pi = 2.0 * std::numbers::pi;
  double x = std::fmod(theta + std::numbers::pi, two_pi);
  if (x < 0) x += two_pi;
  return x - std::numbers::pi;
}

Vector Pendulum::observe() const {
  Vector obs(3);
  obs << std::cos(theta_), std::sin(theta_), theta_dot_;
  return obs;
}

Vector Pendulum::do_reset(Rng& rng) {
  if (fixed_start_) {
    theta_ = fixed_start_->first;
    theta_dot_ = fixed_start_->second;
  } else {
    std::uniform_real_distribution<double> angle(-std::numbers::pi, std::numbers::pi);
    std::uniform_real_distribution<double> speed(-1.0, 1.0);
    theta_ = angle(rng);
    theta_dot_ = speed(rng);
  }
  return observe();
}

Env::Physics Pendulum::do_step(const Vector& physical_action) {
  const double u = physical_action(0);
  const double th = normalize_angle(theta_);
  const double cost = th * th + 0.1 * theta_dot_ * theta_dot_ + 0.001 * u * u;

  // Semi-implicit Euler: velocity first, then position with the new velocity.
  double next_dot = theta_dot_ + (3.0 * kGravity / (2.0 * kLength) * std::sin(theta_) +
                                  3.0 / (kMass * kLength * kLength) * u) *
                                     kDt;
  next_dot = std::clamp(next_dot, -kMaxSpeed, kMaxSpeed);
  theta_ = theta_ + next_dot * kDt;
  theta_dot_ = next_dot;
  return {observe(), -cost, false};
}

// ---------------------------------------------------------------------------------------------

PointMass::PointMass() {
  spec_.name = "point-mass-reacher";
  spec_.observation_dim = 4;
  spec_.action_dim = 2;
  spec_.max_episode_steps = kMaxSteps;
  spec_.action_low = Vector::Constant(2, -kMaxAccel);
  spec_.action_high = Vector::Constant(2, kMaxAccel);
}

Vector PointMass::observe() const {
  Vector obs(4);
  obs << pos_ - goal_, vel_;
  return obs;
}

Vector PointMass::do_reset(Rng& rng) {
  if (fixed_start_) {
    pos_ = fixed_start_->position;
    vel_ = fixed_start_->velocity;
    goal_ = fixed_start_->goal;
    return observe();
  }
  std::uniform_real_distribution<double> box(-1.0, 1.0);
  pos_ = {box(rng), box(rng)};
  vel_.setZero();
  do {
    goal_ = {box(rng), box(rng)};
  } while ((pos_ - goal_).norm() < kMinStartDistance);
  return observe();
}

Env::Physics PointMass::do_step(const Vector& physical_action) {
  const Eigen::Vector2d accel = physical_action.head<2>();
  vel_ = (vel_ + accel * kDt).cwiseMax(-kMaxSpeed).cwiseMin(kMaxSpeed);
  pos_ = pos_ + vel_ * kDt;
  const double dist = (pos_ - goal_).norm();
  return {observe(), -dist, dist <= kGoalRadius};
}

// ---------------------------------------------------------------------------------------------

std::unique_ptr<Env> make_env(std::string_view name) {
  if (name == "pendulum-swingup") return std::make_unique<Pendulum>();
  if (name == "point-mass-reacher") return std::make_unique<PointMass>();
  throw ConfigError("env", "unknown environment '" + std::string(name) + "'");
}

std::vector<std::string> env_names() { return {"pendulum-swingup", "point-mass-reacher"}; }

void write_trajectory_csv(std::ostream& out, const std::vector<TrajectoryRow>& rows) {
  if (rows.empty()) {
    out << "step,reward,end_kind\n";
    return;
  }
  const auto k = rows.front().observation.size();
  const auto d = rows.front().action.size();
  out << "step";
  for (Eigen::Index i = 0; i < k; ++i) out << ",obs_" << i;
  for (Eigen::Index i = 0; i < d; ++i) out << ",act_" << i;
  out << ",reward,end_kind\n";
  for (const auto& r : rows) {
    out << r.step;
    for (Eigen::Index i = 0; i < k; ++i) out << ',' << io::format_double(r.observation(i));
    for (Eigen::Index i = 0; i < d; ++i) out << ',' << io::format_double(r.action(i));
    out << ',' << io::format_double(r.reward) << ',' << to_string(r.end_kind) << '\n';
  }
}

}  // namespace cgp::envs

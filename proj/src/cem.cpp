#include "cgp/cem.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>
#include <vector>

#include "cgp/errors.hpp"

namespace cgp::cem {

void CemConfig::validate() const {
  if (iterations < 1) throw ConfigError("cem_iterations", "must be >= 1");
  if (samples < 1) throw ConfigError("cem_samples", "must be >= 1");
  if (elites < 1) throw ConfigError("cem_elites", "must be >= 1");
  if (elites > samples) throw ConfigError("cem_elites", "must not exceed cem_samples");
  if (action_dim < 1) throw ConfigError("action_dim", "must be >= 1");
  if (!(variance_floor >= 0.0)) throw ConfigError("cem_variance_floor", "must be non-negative");
}

namespace {

[[noreturn]] void throw_non_finite(const Matrix& squashed, Eigen::Index row, double value) {
  std::ostringstream msg;
  msg.precision(17);
  msg << "cem: score " << value << " for action [";
  for (Eigen::Index j = 0; j < squashed.cols(); ++j) msg << (j ? ", " : "") << squashed(row, j);
  msg << "] (sample " << row << ") is not finite";
  throw NumericError(msg.str());
}

// Shared state of one CEM problem while iterating.
struct Problem {
  Vector mean;
  Vector variance;
};

// Orders indices [first, first + n) by score descending; equal scores keep index order.
void top_k(const Vector& scores, Eigen::Index first, int n, int k, std::vector<int>& order) {
  order.resize(static_cast<std::size_t>(n));
  std::iota(order.begin(), order.end(), 0);
  auto better = [&](int a, int b) {
    const double sa = scores(first + a), sb = scores(first + b);
    return sa > sb || (sa == sb && a < b);
  };
  std::partial_sort(order.begin(), order.begin() + k, order.end(), better);
}

void refit(const Matrix& raw, Eigen::Index first, const std::vector<int>& order, int k, double floor, Problem& p) {
  const auto d = raw.cols();
  p.mean.setZero(d);
  for (int e = 0; e < k; ++e) p.mean += raw.row(first + order[e]).transpose();
  p.mean /= k;
  p.variance.setZero(d);
  for (int e = 0; e < k; ++e) p.variance += (raw.row(first + order[e]).transpose() - p.mean).array().square().matrix();
  p.variance /= k;
  p.variance = p.variance.cwiseMax(floor);
}

}  // namespace

BatchedCemResult cem_argmax_batched(const BatchScore& score, int problems, const CemConfig& config, Rng& rng) {
  config.validate();
  if (problems < 1) throw ConfigError("problems", "must be >= 1");
  const int n = config.samples, k = config.elites, d = config.action_dim;
  const Eigen::Index rows = static_cast<Eigen::Index>(problems) * n;

  std::vector<Problem> state(static_cast<std::size_t>(problems), Problem{Vector::Zero(d), Vector::Ones(d)});
  std::normal_distribution<double> normal(0.0, 1.0);
  Matrix raw(rows, d);
  Matrix squashed(rows, d);
  std::vector<int> order;

  BatchedCemResult result{Matrix(problems, d), Vector(problems), 0};
  for (int it = 0; it < config.iterations; ++it) {
    for (int m = 0; m < problems; ++m) {
      const auto& p = state[static_cast<std::size_t>(m)];
      const Vector stddev = p.variance.cwiseSqrt();
      for (int i = 0; i < n; ++i) {
        const Eigen::Index r = static_cast<Eigen::Index>(m) * n + i;
        for (int j = 0; j < d; ++j) raw(r, j) = p.mean(j) + stddev(j) * normal(rng);
      }
    }
    squashed = raw.array().tanh().matrix();
    const Vector scores = score(squashed);
    ++result.score_calls;
    if (scores.size() != rows) {
      throw ShapeError("cem: score returned " + std::to_string(scores.size()) + " values for " + std::to_string(rows) +
                       " actions");
    }
    for (Eigen::Index r = 0; r < rows; ++r) {
      if (!std::isfinite(scores(r))) throw_non_finite(squashed, r, scores(r));
    }

    const bool last = it + 1 == config.iterations;
    for (int m = 0; m < problems; ++m) {
      const Eigen::Index first = static_cast<Eigen::Index>(m) * n;
      top_k(scores, first, n, k, order);
      refit(raw, first, order, k, config.variance_floor, state[static_cast<std::size_t>(m)]);
      if (last) {
        result.actions.row(m) = squashed.row(first + order[0]);
        result.values(m) = scores(first + order[0]);
      }
    }
  }
  return result;
}

CemResult cem_argmax(const BatchScore& score, const CemConfig& config, Rng& rng) {
  config.validate();
  const int n = config.samples, k = config.elites, d = config.action_dim;
  Problem p{Vector::Zero(d), Vector::Ones(d)};
  std::normal_distribution<double> normal(0.0, 1.0);
  Matrix raw(n, d);
  std::vector<int> order;
  CemResult result;

  for (int it = 0; it < config.iterations; ++it) {
    const Vector stddev = p.variance.cwiseSqrt();
    for (int i = 0; i < n; ++i) {
      for (int j = 0; j < d; ++j) raw(i, j) = p.mean(j) + stddev(j) * normal(rng);
    }
    const Matrix squashed = raw.array().tanh().matrix();
    const Vector scores = score(squashed);
    ++result.score_calls;
    if (scores.size() != n) {
      throw ShapeError("cem: score returned " + std::to_string(scores.size()) + " values for " + std::to_string(n) +
                       " actions");
    }
    for (Eigen::Index r = 0; r < n; ++r) {
      if (!std::isfinite(scores(r))) throw_non_finite(squashed, r, scores(r));
    }
    top_k(scores, 0, n, k, order);
    refit(raw, 0, order, k, config.variance_floor, p);
    if (it + 1 == config.iterations) {
      result.action = squashed.row(order[0]).transpose();
      result.value = scores(order[0]);
    }
  }
  result.proposal = {p.mean, p.variance};
  return result;
}

Vector cem_policy(const Vector& state, const QFunction& q, const CemConfig& config, Rng& rng) {
  const Matrix states = state.transpose().replicate(config.samples, 1);
  auto score = [&](const Matrix& actions) { return q(states, actions); };
  return cem_argmax(score, config, rng).action;
}

Matrix cem_policy_batched(const Matrix& states, const QFunction& q, const CemConfig& config, Rng& rng) {
  const auto problems = static_cast<int>(states.rows());
  const int n = config.samples;
  Matrix replicated(states.rows() * n, states.cols());
  for (Eigen::Index m = 0; m < states.rows(); ++m) {
    replicated.middleRows(m * n, n) = states.row(m).replicate(n, 1);
  }
  auto score = [&](const Matrix& actions) { return q(replicated, actions); };
  return cem_argmax_batched(score, problems, config, rng).actions;
}

}  // namespace cgp::cem

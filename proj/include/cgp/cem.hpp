#pragma once

// Cross-entropy action optimizer over the open box (-1, 1)^d.
//
// Each iteration draws `samples` pre-squash actions from a diagonal Gaussian, squashes them
// with tanh, scores the whole batch in one call, keeps the top `elites` and refits the mean and
// (population) variance in pre-squash space. The result is the best squashed elite of the final
// iteration.

#include <Eigen/Dense>
#include <functional>

#include "cgp/rng.hpp"

namespace cgp::cem {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;

struct CemConfig {
  int iterations = 2;
  int samples = 64;
  int elites = 6;
  int action_dim = 1;
  double variance_floor = 1e-6;

  /// Throws ConfigError naming the offending field.
  void validate() const;
};

struct ProposalState {
  Vector mean;      // pre-tanh
  Vector variance;  // pre-tanh, >= variance_floor
};

struct CemResult {
  Vector action;  // in (-1, 1)^d
  double value = 0.0;
  ProposalState proposal;  // proposal after the last refit
  int score_calls = 0;
};

/// Scores a batch of squashed actions [n x d], returning one value per row.
using BatchScore = std::function<Vector(const Matrix& actions)>;

/// Q-function interface: (states [B x obs], actions [B x d]) -> values [B].
using QFunction = std::function<Vector(const Matrix& states, const Matrix& actions)>;

CemResult cem_argmax(const BatchScore& score, const CemConfig& config, Rng& rng);

/// Binds `state` into a score over replicated rows and runs cem_argmax.
Vector cem_policy(const Vector& state, const QFunction& q, const CemConfig& config, Rng& rng);

struct BatchedCemResult {
  Matrix actions;  // [M x d]
  Vector values;   // [M]
  int score_calls = 0;
};

/// Runs M independent CEM problems in lock step: each iteration issues one score call over
/// all M * n candidates (problem-major rows). Per problem the procedure is the same as
/// cem_argmax; only the interleaving of random draws differs.
BatchedCemResult cem_argmax_batched(const BatchScore& score, int problems, const CemConfig& config, Rng& rng);

/// CEM policy for every row of `states` at once; the states are replicated n times each.
Matrix cem_policy_batched(const Matrix& states, const QFunction& q, const CemConfig& config, Rng& rng);

}  // namespace cgp::cem

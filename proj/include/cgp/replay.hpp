#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <vector>

#include "cgp/rng.hpp"

namespace cgp {

/// How an environment step ended. Only `Terminal` stops the Bellman bootstrap.
enum class EndKind : std::uint8_t { NotDone = 0, Terminal = 1, TimeLimit = 2 };

const char* to_string(EndKind k);

struct Transition {
  Eigen::VectorXd state;
  Eigen::VectorXd action;
  double reward = 0.0;
  Eigen::VectorXd next_state;
  EndKind end_kind = EndKind::NotDone;
};

/// Column-structured minibatch; row i of every member is one transition.
struct Batch {
  Eigen::MatrixXd states;       // [b x obs]
  Eigen::MatrixXd actions;      // [b x d]
  Eigen::VectorXd rewards;      // [b]
  Eigen::MatrixXd next_states;  // [b x obs]
  std::vector<EndKind> end_kinds;

  Eigen::Index size() const noexcept { return rewards.size(); }
};

/// FIFO ring of transitions with uniform, with-replacement sampling.
/// Dimensions are fixed by the first push.
class ReplayBuffer {
 public:
  explicit ReplayBuffer(std::size_t capacity = 1'000'000);

  void push(const Transition& t);
  Batch sample(std::size_t batch_size, Rng& rng) const;

  /// Rows at explicit logical indices (0 = oldest).
  Batch gather(const std::vector<std::size_t>& indices) const;
  Transition at(std::size_t index) const;

  std::size_t size() const noexcept { return size_; }
  std::size_t capacity() const noexcept { return capacity_; }
  bool empty() const noexcept { return size_ == 0; }
  int state_dim() const noexcept { return state_dim_; }
  int action_dim() const noexcept { return action_dim_; }

  // Artifact format "CGPB" v1: capacity, size, dims, then the transitions oldest-first.
  void save(std::ostream& out) const;
  static ReplayBuffer load(std::istream& in);
  void save_file(const std::filesystem::path& path) const;
  static ReplayBuffer load_file(const std::filesystem::path& path);

 private:
  std::size_t physical(std::size_t logical) const noexcept;

  std::size_t capacity_;
  std::size_t size_ = 0;
  std::size_t head_ = 0;  // next write slot
  int state_dim_ = 0;
  int action_dim_ = 0;
  std::vector<double> states_;
  std::vector<double> actions_;
  std::vector<double> rewards_;
  std::vector<double> next_states_;
  std::vector<EndKind> end_kinds_;
};

}  // namespace cgp

#include "cgp/replay.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <span>

#include "cgp/errors.hpp"
#include "cgp/serialize.hpp"

namespace cgp {

namespace {
constexpr std::uint32_t kBufferVersion = 1;
}

const char* to_string(EndKind k) {
  switch (k) {
    case EndKind::NotDone:
      return "not_done";
    case EndKind::Terminal:
      return "terminal";
    case EndKind::TimeLimit:
      return "time_limit";
  }
  return "?";
}

ReplayBuffer::ReplayBuffer(std::size_t capacity) : capacity_(capacity) {
  if (capacity == 0) throw ConfigError("replay_capacity", "must be positive");
}

std::size_t ReplayBuffer::physical(std::size_t logical) const noexcept {
  // Before the first wrap the oldest item sits in slot 0; afterwards it sits at head_.
  return size_ < capacity_ ? logical : (head_ + logical) % capacity_;
}

void ReplayBuffer::push(const Transition& t) {
  if (size_ == 0 && states_.empty()) {
    if (t.state.size() == 0 || t.action.size() == 0) throw ShapeError("replay: empty state or action");
    state_dim_ = static_cast<int>(t.state.size());
    action_dim_ = static_cast<int>(t.action.size());
  }
  if (t.state.size() != state_dim_ || t.next_state.size() != state_dim_ || t.action.size() != action_dim_) {
    throw ShapeError("replay: transition dims (" + std::to_string(t.state.size()) + ", " +
                     std::to_string(t.action.size()) + ", " + std::to_string(t.next_state.size()) +
                     ") differ from stored (" + std::to_string(state_dim_) + ", " + std::to_string(action_dim_) +
                     ")");
  }
  if (!t.state.allFinite() || !t.next_state.allFinite() || !t.action.allFinite() || !std::isfinite(t.reward)) {
    throw NumericError("replay: non-finite transition");
  }

  const auto sd = static_cast<std::size_t>(state_dim_), ad = static_cast<std::size_t>(action_dim_);
  if (size_ < capacity_ && head_ == size_) {
    states_.insert(states_.end(), t.state.data(), t.state.data() + sd);
    actions_.insert(actions_.end(), t.action.data(), t.action.data() + ad);
    rewards_.push_back(t.reward);
    next_states_.insert(next_states_.end(), t.next_state.data(), t.next_state.data() + sd);
    end_kinds_.push_back(t.end_kind);
  } else {
    std::copy_n(t.state.data(), sd, states_.begin() + static_cast<std::ptrdiff_t>(head_ * sd));
    std::copy_n(t.action.data(), ad, actions_.begin() + static_cast<std::ptrdiff_t>(head_ * ad));
    rewards_[head_] = t.reward;
    std::copy_n(t.next_state.data(), sd, next_states_.begin() + static_cast<std::ptrdiff_t>(head_ * sd));
    end_kinds_[head_] = t.end_kind;
  }
  head_ = (head_ + 1) % capacity_;
  if (size_ < capacity_) ++size_;
}

Batch ReplayBuffer::gather(const std::vector<std::size_t>& indices) const {
  const auto b = static_cast<Eigen::Index>(indices.size());
  Batch out{Eigen::MatrixXd(b, state_dim_), Eigen::MatrixXd(b, action_dim_), Eigen::VectorXd(b),
            Eigen::MatrixXd(b, state_dim_), std::vector<EndKind>(indices.size())};
  const auto sd = static_cast<std::size_t>(state_dim_), ad = static_cast<std::size_t>(action_dim_);
  for (Eigen::Index i = 0; i < b; ++i) {
    const auto logical = indices[static_cast<std::size_t>(i)];
    if (logical >= size_) throw std::out_of_range("replay: index out of range");
    const auto p = physical(logical);
    for (std::size_t j = 0; j < sd; ++j) {
      out.states(i, static_cast<Eigen::Index>(j)) = states_[p * sd + j];
      out.next_states(i, static_cast<Eigen::Index>(j)) = next_states_[p * sd + j];
    }
    for (std::size_t j = 0; j < ad; ++j) out.actions(i, static_cast<Eigen::Index>(j)) = actions_[p * ad + j];
    out.rewards(i) = rewards_[p];
    out.end_kinds[static_cast<std::size_t>(i)] = end_kinds_[p];
  }
  return out;
}

Batch ReplayBuffer::sample(std::size_t batch_size, Rng& rng) const {
  if (size_ == 0) throw UsageError("replay: cannot sample from an empty buffer");
  std::uniform_int_distribution<std::size_t> pick(0, size_ - 1);
  std::vector<std::size_t> idx(batch_size);
  for (auto& i : idx) i = pick(rng);
  return gather(idx);
}

Transition ReplayBuffer::at(std::size_t index) const {
  const auto b = gather({index});
  return {b.states.row(0).transpose(), b.actions.row(0).transpose(), b.rewards(0), b.next_states.row(0).transpose(),
          b.end_kinds[0]};
}

void ReplayBuffer::save(std::ostream& out) const {
  io::BinaryWriter w(out, "CGPB", kBufferVersion);
  w.u64(capacity_);
  w.u64(size_);
  w.u64(static_cast<std::uint64_t>(state_dim_));
  w.u64(static_cast<std::uint64_t>(action_dim_));
  for (std::size_t i = 0; i < size_; ++i) {
    const auto t = at(i);
    w.f64s({t.state.data(), static_cast<std::size_t>(t.state.size())});
    w.f64s({t.action.data(), static_cast<std::size_t>(t.action.size())});
    w.f64(t.reward);
    w.f64s({t.next_state.data(), static_cast<std::size_t>(t.next_state.size())});
    w.u32(static_cast<std::uint32_t>(t.end_kind));
  }
}

ReplayBuffer ReplayBuffer::load(std::istream& in) {
  io::BinaryReader r(in, "CGPB", kBufferVersion);
  const auto capacity = r.u64();
  const auto size = r.u64();
  const auto sd = r.u64();
  const auto ad = r.u64();
  if (capacity == 0 || size > capacity || sd > (1u << 16) || ad > (1u << 16)) {
    throw FormatError("buffer file: inconsistent header");
  }
  ReplayBuffer buf(capacity);
  for (std::uint64_t i = 0; i < size; ++i) {
    Transition t{Eigen::VectorXd(sd), Eigen::VectorXd(ad), 0.0, Eigen::VectorXd(sd), EndKind::NotDone};
    r.f64s({t.state.data(), sd});
    r.f64s({t.action.data(), ad});
    t.reward = r.f64();
    r.f64s({t.next_state.data(), sd});
    const auto k = r.u32();
    if (k > 2) throw FormatError("buffer file: unknown end kind");
    t.end_kind = static_cast<EndKind>(k);
    buf.push(t);
  }
  return buf;
}

void ReplayBuffer::save_file(const std::filesystem::path& path) const {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot open " + path.string() + " for writing");
  save(out);
}

ReplayBuffer ReplayBuffer::load_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  return load(in);
}

}  // namespace cgp

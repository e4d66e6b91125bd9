#pragma once

// Agent hyperparameters and the flat key = value text format used by config files,
// CLI flags, sweep axes and run metadata.
//
// Every key defaults to the benchmark configuration, so an empty file is a valid config.

#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "cgp/cem.hpp"

namespace cgp {

enum class Mode { CGP, QGP, DDPG, TD3, CEM };
enum class Schedule { Online, Offline };
/// PerStep: one critic update per environment step. PerEpisode: the same number of updates,
/// batched at each episode end.
enum class UpdateCadence { PerStep, PerEpisode };

const char* to_string(Mode m);
const char* to_string(Schedule s);
const char* to_string(UpdateCadence c);
Mode parse_mode(std::string_view s);
Schedule parse_schedule(std::string_view s);
UpdateCadence parse_cadence(std::string_view s);

/// True for modes that train a deterministic policy network.
bool has_policy(Mode m);
/// True for modes whose behavior and bootstrap actions come from CEM.
bool uses_cem(Mode m);

struct AgentConfig {
  double discount = 0.99;
  double tau = 0.005;
  double q_lr = 1e-3;
  double policy_lr = 1e-3;
  int batch_size = 128;
  int target_update_freq = 2;
  double policy_noise = 0.2;
  double noise_clip = 0.5;
  double exploration_noise = 0.0;
  long initial_random_steps = 10'000;
  cem::CemConfig cem;  // action_dim is filled in from the environment
  long total_steps = 1'000'000;
  long eval_every = 10'000;
  int eval_episodes = 5;
  int hidden_width = 256;
  int hidden_layers = 2;
  double weight_decay = 0.0;
  long replay_capacity = 1'000'000;
  bool target_smoothing = true;
  bool bootstrap_time_limit = true;
  long offline_updates = 200'000;
  long offline_window = 1'000;
  double offline_min_improvement = 1e-5;
  UpdateCadence update_cadence = UpdateCadence::PerStep;
  std::optional<double> stop_at_reward;

  /// Throws ConfigError naming the first invalid field.
  void validate() const;
};

/// Everything that identifies one training run.
struct RunSpec {
  std::string env = "pendulum-swingup";
  Mode mode = Mode::CGP;
  Schedule schedule = Schedule::Online;
  std::uint64_t seed = 0;
  AgentConfig config;

  void validate() const;
};

/// Every recognised key in canonical order.
const std::vector<std::string>& config_keys();

/// Applies one `key = value` setting. Unknown keys and unparsable values raise ConfigError
/// naming the key.
void apply_setting(RunSpec& spec, std::string_view key, std::string_view value);

/// Parses a config file body: `key = value` lines, `#` comments, blank lines ignored.
/// Lines starting with `axis` are returned untouched in `extra_lines` when provided.
void apply_config_text(RunSpec& spec, std::string_view text, std::vector<std::string>* extra_lines = nullptr);

/// Canonical `key = value` listing (all keys, full-precision floats).
std::string to_config_text(const RunSpec& spec);

/// FNV-1a over the canonical text minus the seed; identifies a sweep cell.
std::uint64_t config_hash(const RunSpec& spec);
std::string hash_hex(std::uint64_t h);

}  // namespace cgp

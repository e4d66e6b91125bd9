#include "cgp/config.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <functional>
#include <sstream>

#include "cgp/envs.hpp"
#include "cgp/errors.hpp"
#include "cgp/serialize.hpp"

namespace cgp {

const char* to_string(Mode m) {
  switch (m) {
    case Mode::CGP:
      return "cgp";
    case Mode::QGP:
      return "qgp";
    case Mode::DDPG:
      return "ddpg";
    case Mode::TD3:
      return "td3";
    case Mode::CEM:
      return "cem";
  }
  return "?";
}

const char* to_string(Schedule s) { return s == Schedule::Online ? "online" : "offline"; }
const char* to_string(UpdateCadence c) { return c == UpdateCadence::PerStep ? "per_step" : "per_episode"; }

Mode parse_mode(std::string_view s) {
  for (auto m : {Mode::CGP, Mode::QGP, Mode::DDPG, Mode::TD3, Mode::CEM}) {
    if (s == to_string(m)) return m;
  }
  throw ConfigError("mode", "unknown mode '" + std::string(s) + "' (cgp, qgp, ddpg, td3, cem)");
}

Schedule parse_schedule(std::string_view s) {
  if (s == "online") return Schedule::Online;
  if (s == "offline") return Schedule::Offline;
  throw ConfigError("schedule", "unknown schedule '" + std::string(s) + "' (online, offline)");
}

UpdateCadence parse_cadence(std::string_view s) {
  if (s == "per_step") return UpdateCadence::PerStep;
  if (s == "per_episode") return UpdateCadence::PerEpisode;
  throw ConfigError("update_cadence", "unknown cadence '" + std::string(s) + "' (per_step, per_episode)");
}

bool has_policy(Mode m) { return m != Mode::CEM; }
bool uses_cem(Mode m) { return m == Mode::CGP || m == Mode::QGP || m == Mode::CEM; }

void AgentConfig::validate() const {
  auto require = [](bool ok, const char* field, const char* msg) {
    if (!ok) throw ConfigError(field, msg);
  };
  require(discount > 0.0 && discount < 1.0, "discount", "must lie in (0, 1)");
  require(tau > 0.0 && tau <= 1.0, "tau", "must lie in (0, 1]");
  require(q_lr > 0.0 && std::isfinite(q_lr), "q_lr", "must be positive");
  require(policy_lr > 0.0 && std::isfinite(policy_lr), "policy_lr", "must be positive");
  require(batch_size >= 1, "batch_size", "must be >= 1");
  require(target_update_freq >= 1, "target_update_freq", "must be >= 1");
  require(policy_noise >= 0.0, "policy_noise", "must be non-negative");
  require(noise_clip >= 0.0, "noise_clip", "must be non-negative");
  require(exploration_noise >= 0.0, "exploration_noise", "must be non-negative");
  require(initial_random_steps >= 0, "initial_random_steps", "must be non-negative");
  require(total_steps >= 0, "total_steps", "must be non-negative");
  require(eval_every >= 1, "eval_every", "must be >= 1");
  require(eval_episodes >= 1, "eval_episodes", "must be >= 1");
  require(hidden_width >= 1, "hidden_width", "must be >= 1");
  require(hidden_layers >= 0, "hidden_layers", "must be non-negative");
  require(weight_decay >= 0.0, "weight_decay", "must be non-negative");
  require(replay_capacity >= 1, "replay_capacity", "must be >= 1");
  require(offline_updates >= 0, "offline_updates", "must be non-negative");
  require(offline_window >= 1, "offline_window", "must be >= 1");
  require(offline_min_improvement >= 0.0, "offline_min_improvement", "must be non-negative");
  auto c = cem;
  c.action_dim = std::max(1, c.action_dim);
  c.validate();
}

void RunSpec::validate() const {
  config.validate();
  (void)envs::make_env(env);
  if (schedule == Schedule::Offline && !(mode == Mode::CGP || mode == Mode::QGP)) {
    throw ConfigError("schedule", "offline distillation applies to cgp and qgp only");
  }
}

namespace {

template <typename T>
T parse_number(std::string_view key, std::string_view text) {
  T value{};
  const char* first = text.data();
  const char* last = text.data() + text.size();
  if (!text.empty() && *first == '+') ++first;
  auto [ptr, ec] = std::from_chars(first, last, value);
  if (ec != std::errc{} || ptr != last) {
    throw ConfigError(std::string(key), "cannot parse '" + std::string(text) + "' as a number");
  }
  return value;
}

double parse_real(std::string_view key, std::string_view text) {
  // Accepts integer-looking reals and scientific notation ("1e6").
  return parse_number<double>(key, text);
}

long parse_count(std::string_view key, std::string_view text) {
  const double v = parse_real(key, text);
  if (v != std::floor(v) || std::abs(v) > 9e15) {
    throw ConfigError(std::string(key), "expected an integer, got '" + std::string(text) + "'");
  }
  return static_cast<long>(v);
}

bool parse_bool(std::string_view key, std::string_view text) {
  if (text == "true" || text == "1" || text == "yes") return true;
  if (text == "false" || text == "0" || text == "no") return false;
  throw ConfigError(std::string(key), "expected true/false, got '" + std::string(text) + "'");
}

struct Field {
  std::string key;
  std::function<void(RunSpec&, std::string_view)> set;
  std::function<std::string(const RunSpec&)> get;
};

std::string fmt_int(long v) { return std::to_string(v); }
std::string fmt_bool(bool v) { return v ? "true" : "false"; }

#define CGP_REAL(name, member)                                                                                    \
  Field {                                                                                                         \
    name, [](RunSpec& s, std::string_view v) { s.config.member = parse_real(name, v); },                         \
        [](const RunSpec& s) { return io::format_double(s.config.member); }                                       \
  }
#define CGP_INT(name, member)                                                                                     \
  Field {                                                                                                         \
    name, [](RunSpec& s, std::string_view v) { s.config.member = static_cast<decltype(s.config.member)>(parse_count(name, v)); }, \
        [](const RunSpec& s) { return fmt_int(static_cast<long>(s.config.member)); }                              \
  }
#define CGP_BOOL(name, member)                                                                                    \
  Field {                                                                                                         \
    name, [](RunSpec& s, std::string_view v) { s.config.member = parse_bool(name, v); },                         \
        [](const RunSpec& s) { return fmt_bool(s.config.member); }                                                \
  }

const std::vector<Field>& fields() {
  static const std::vector<Field> table = {
      {"env", [](RunSpec& s, std::string_view v) { s.env = std::string(v); }, [](const RunSpec& s) { return s.env; }},
      {"mode", [](RunSpec& s, std::string_view v) { s.mode = parse_mode(v); },
       [](const RunSpec& s) { return std::string(to_string(s.mode)); }},
      {"schedule", [](RunSpec& s, std::string_view v) { s.schedule = parse_schedule(v); },
       [](const RunSpec& s) { return std::string(to_string(s.schedule)); }},
      {"seed", [](RunSpec& s, std::string_view v) { s.seed = parse_number<std::uint64_t>("seed", v); },
       [](const RunSpec& s) { return std::to_string(s.seed); }},
      CGP_REAL("discount", discount),
      CGP_REAL("tau", tau),
      CGP_REAL("q_lr", q_lr),
      CGP_REAL("policy_lr", policy_lr),
      CGP_INT("batch_size", batch_size),
      CGP_INT("target_update_freq", target_update_freq),
      CGP_REAL("policy_noise", policy_noise),
      CGP_REAL("noise_clip", noise_clip),
      CGP_REAL("exploration_noise", exploration_noise),
      CGP_INT("initial_random_steps", initial_random_steps),
      CGP_INT("cem_iterations", cem.iterations),
      CGP_INT("cem_samples", cem.samples),
      CGP_INT("cem_elites", cem.elites),
      CGP_REAL("cem_variance_floor", cem.variance_floor),
      CGP_INT("total_steps", total_steps),
      CGP_INT("eval_every", eval_every),
      CGP_INT("eval_episodes", eval_episodes),
      CGP_INT("hidden_width", hidden_width),
      CGP_INT("hidden_layers", hidden_layers),
      CGP_REAL("weight_decay", weight_decay),
      CGP_INT("replay_capacity", replay_capacity),
      CGP_BOOL("target_smoothing", target_smoothing),
      CGP_BOOL("bootstrap_time_limit", bootstrap_time_limit),
      CGP_INT("offline_updates", offline_updates),
      CGP_INT("offline_window", offline_window),
      CGP_REAL("offline_min_improvement", offline_min_improvement),
      {"update_cadence", [](RunSpec& s, std::string_view v) { s.config.update_cadence = parse_cadence(v); },
       [](const RunSpec& s) { return std::string(to_string(s.config.update_cadence)); }},
      {"stop_at_reward",
       [](RunSpec& s, std::string_view v) {
         if (v == "none" || v.empty()) {
           s.config.stop_at_reward.reset();
         } else {
           s.config.stop_at_reward = parse_real("stop_at_reward", v);
         }
       },
       [](const RunSpec& s) {
         return s.config.stop_at_reward ? io::format_double(*s.config.stop_at_reward) : std::string("none");
       }},
  };
  return table;
}

#undef CGP_REAL
#undef CGP_INT
#undef CGP_BOOL

std::string_view trim(std::string_view s) {
  const auto ws = " \t\r\n";
  const auto b = s.find_first_not_of(ws);
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(ws);
  return s.substr(b, e - b + 1);
}

}  // namespace

const std::vector<std::string>& config_keys() {
  static const std::vector<std::string> keys = [] {
    std::vector<std::string> k;
    for (const auto& f : fields()) k.push_back(f.key);
    return k;
  }();
  return keys;
}

void apply_setting(RunSpec& spec, std::string_view key, std::string_view value) {
  key = trim(key);
  value = trim(value);
  for (const auto& f : fields()) {
    if (f.key == key) {
      f.set(spec, value);
      return;
    }
  }
  throw ConfigError(std::string(key), "unknown configuration key");
}

void apply_config_text(RunSpec& spec, std::string_view text, std::vector<std::string>* extra_lines) {
  std::istringstream in{std::string(text)};
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    auto body = std::string_view(line);
    if (const auto hash = body.find('#'); hash != std::string_view::npos) body = body.substr(0, hash);
    body = trim(body);
    if (body.empty()) continue;
    if (body.starts_with("axis") && extra_lines) {
      extra_lines->emplace_back(body);
      continue;
    }
    const auto eq = body.find('=');
    if (eq == std::string_view::npos) {
      throw ConfigError("line " + std::to_string(lineno), "expected 'key = value'");
    }
    apply_setting(spec, body.substr(0, eq), body.substr(eq + 1));
  }
}

std::string to_config_text(const RunSpec& spec) {
  std::string out;
  for (const auto& f : fields()) out += f.key + " = " + f.get(spec) + "\n";
  return out;
}

std::uint64_t config_hash(const RunSpec& spec) {
  std::uint64_t h = 14695981039346656037ull;
  for (const auto& f : fields()) {
    if (f.key == "seed") continue;
    const auto line = f.key + "=" + f.get(spec) + "\n";
    for (unsigned char c : line) {
      h ^= c;
      h *= 1099511628211ull;
    }
  }
  return h;
}

std::string hash_hex(std::uint64_t h) {
  static const char* digits = "0123456789abcdef";
  std::string s(16, '0');
  for (int i = 15; i >= 0; --i) {
    s[static_cast<std::size_t>(i)] = digits[h & 0xf];
    h >>= 4;
  }
  return s;
}

}  // namespace cgp

#include "cgp/harness.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <fstream>
#include <limits>
#include <memory>
#include <mutex>
#include <sstream>
#include <thread>

#include "cgp/errors.hpp"
#include "cgp/serialize.hpp"
#include "json.hpp"

namespace cgp::harness {

namespace {

constexpr const char* kVersion = "cgp-toolkit 0.1.0";

std::vector<std::string> split(std::string_view s, char sep) {
  std::vector<std::string> out;
  std::size_t start = 0;
  for (;;) {
    const auto pos = s.find(sep, start);
    auto piece = s.substr(start, pos == std::string_view::npos ? std::string_view::npos : pos - start);
    const auto b = piece.find_first_not_of(" \t");
    const auto e = piece.find_last_not_of(" \t");
    out.emplace_back(b == std::string_view::npos ? std::string_view{} : piece.substr(b, e - b + 1));
    if (pos == std::string_view::npos) break;
    start = pos + 1;
  }
  return out;
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << text;
}

nlohmann::json config_json(const RunSpec& spec) {
  nlohmann::json j = nlohmann::json::object();
  std::istringstream in(to_config_text(spec));
  std::string line;
  while (std::getline(in, line)) {
    const auto eq = line.find(" = ");
    j[line.substr(0, eq)] = line.substr(eq + 3);
  }
  return j;
}

}  // namespace

fs::path run_directory(const fs::path& root, const RunSpec& spec) {
  return root / (spec.env + "-" + to_string(spec.mode) + "-" + to_string(spec.schedule) + "-" +
                 hash_hex(config_hash(spec))) /
         ("seed-" + std::to_string(spec.seed));
}

RunRecord run_single(const RunSpec& spec, const fs::path& out_root, const agents::ProgressFn& progress) {
  spec.validate();
  const auto dir = run_directory(out_root, spec);
  fs::create_directories(dir);

  const auto start = std::chrono::steady_clock::now();
  auto out = agents::train(spec, progress);
  const double seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  const auto& rec = out.record;

  {
    std::ofstream csv(dir / "record.csv", std::ios::binary);
    if (!csv) throw std::runtime_error("cannot write " + (dir / "record.csv").string());
    write_record_csv(csv, rec);
  }
  write_text(dir / "config.txt", to_config_text(spec));
  nn::save_file(out.critic.q1, dir / "q1.cgpn");
  nn::save_file(out.critic.q2, dir / "q2.cgpn");
  nn::save_file(out.critic.q1_target, dir / "q1_target.cgpn");
  nn::save_file(out.critic.q2_target, dir / "q2_target.cgpn");
  if (out.policy) {
    nn::save_file(out.policy->net, dir / "policy.cgpn");
    nn::save_file(out.policy->target, dir / "policy_target.cgpn");
  }
  out.buffer.save_file(dir / "buffer.cgpb");

  nlohmann::json meta;
  meta["version"] = kVersion;
  meta["config"] = config_json(spec);
  meta["config_hash"] = rec.config_hash;
  meta["seed"] = spec.seed;
  meta["status"] = to_string(rec.status);
  meta["failure"] = rec.failure;
  meta["final_reward"] = io::format_double(rec.final_reward);
  meta["steps_taken"] = rec.steps_taken;
  meta["critic_updates"] = rec.critic_updates;
  meta["policy_updates"] = rec.policy_updates;
  meta["target_updates"] = rec.target_updates;
  meta["offline_updates"] = rec.offline_updates;
  meta["clamped_actions"] = rec.clamped_actions;
  meta["wall_clock_seconds"] = seconds;
  write_text(dir / "meta.json", meta.dump(2) + "\n");
  return rec;
}

Axis parse_axis(std::string_view text) {
  if (text.starts_with("axis")) {
    text.remove_prefix(4);
    const auto b = text.find_first_not_of(" \t");
    text = b == std::string_view::npos ? std::string_view{} : text.substr(b);
  }
  const auto eq = text.find('=');
  if (eq == std::string_view::npos) throw ConfigError("axis", "expected 'key[,key...]=v[,v...];...'");
  Axis axis;
  axis.keys = split(text.substr(0, eq), ',');
  for (const auto& k : axis.keys) {
    if (std::find(config_keys().begin(), config_keys().end(), k) == config_keys().end()) {
      throw ConfigError(k, "unknown configuration key in sweep axis");
    }
  }
  for (const auto& group : split(text.substr(eq + 1), ';')) {
    if (group.empty()) continue;
    auto vals = split(group, ',');
    if (vals.size() != axis.keys.size()) {
      throw ConfigError("axis", "value group '" + group + "' does not match " + std::to_string(axis.keys.size()) +
                                    " key(s)");
    }
    axis.values.push_back(std::move(vals));
  }
  if (axis.values.empty()) throw ConfigError("axis", "axis has no values");
  return axis;
}

std::size_t SweepSpec::cell_count() const {
  std::size_t n = 1;
  for (const auto& a : axes) n *= a.values.size();
  return n;
}

std::vector<RunSpec> SweepSpec::expand() const {
  if (seeds_per_cell < 1) throw ConfigError("seeds", "must be >= 1");
  for (const auto& a : axes) {
    if (a.values.empty()) throw ConfigError("axis", "axis has no values");
  }
  std::vector<RunSpec> out;
  const auto cells = cell_count();
  for (std::size_t cell = 0; cell < cells; ++cell) {
    RunSpec cell_spec = base;
    std::size_t rem = cell;
    // Last axis varies fastest.
    for (std::size_t ai = axes.size(); ai-- > 0;) {
      const auto& axis = axes[ai];
      const auto& vals = axis.values[rem % axis.values.size()];
      rem /= axis.values.size();
      for (std::size_t k = 0; k < axis.keys.size(); ++k) apply_setting(cell_spec, axis.keys[k], vals[k]);
    }
    cell_spec.config.validate();
    for (int r = 0; r < seeds_per_cell; ++r) {
      RunSpec s = cell_spec;
      s.seed = derive_seed({master_seed, static_cast<std::uint64_t>(cell), static_cast<std::uint64_t>(r)});
      out.push_back(std::move(s));
    }
  }
  return out;
}

std::vector<SweepEntry> run_sweep(const SweepSpec& spec, int parallelism, const fs::path& out_root,
                                  const std::function<void(std::size_t)>& announce) {
  const auto runs = spec.expand();
  if (announce) announce(runs.size());
  fs::create_directories(out_root);

  std::vector<SweepEntry> entries(runs.size());
  std::atomic<std::size_t> next{0};
  auto worker = [&] {
    for (;;) {
      const auto i = next.fetch_add(1);
      if (i >= runs.size()) return;
      auto& e = entries[i];
      e.cell = i / static_cast<std::size_t>(spec.seeds_per_cell);
      e.replicate = static_cast<int>(i % static_cast<std::size_t>(spec.seeds_per_cell));
      e.directory = run_directory(fs::path{}, runs[i]);  // relative to out_root
      try {
        e.record = run_single(runs[i], out_root);
      } catch (const std::exception& ex) {
        e.record.config_hash = hash_hex(config_hash(runs[i]));
        e.record.env = runs[i].env;
        e.record.mode = runs[i].mode;
        e.record.schedule = runs[i].schedule;
        e.record.seed = runs[i].seed;
        e.record.status = RunStatus::Failed;
        e.record.failure = ex.what();
        e.record.final_reward = std::numeric_limits<double>::quiet_NaN();
      }
    }
  };
  const int threads = std::max(1, std::min<int>(parallelism, static_cast<int>(runs.size())));
  if (threads == 1) {
    worker();
  } else {
    std::vector<std::jthread> pool;
    for (int t = 0; t < threads; ++t) pool.emplace_back(worker);
  }

  std::ofstream index(out_root / "index.csv", std::ios::binary);
  if (!index) throw std::runtime_error("cannot write " + (out_root / "index.csv").string());
  write_index_csv(index, entries);
  return entries;
}

void write_index_csv(std::ostream& out, const std::vector<SweepEntry>& entries) {
  out << "# cgp-sweep-index v1\n";
  out << "cell,replicate,seed,config_hash,env,mode,schedule,status,final_reward,path\n";
  for (const auto& e : entries) {
    const auto& r = e.record;
    out << e.cell << ',' << e.replicate << ',' << r.seed << ',' << r.config_hash << ',' << r.env << ','
        << to_string(r.mode) << ',' << to_string(r.schedule) << ',' << to_string(r.status) << ','
        << io::format_double(r.final_reward) << ',' << e.directory.generic_string() << '\n';
  }
}

std::vector<RunRecord> read_index_csv(std::istream& in) {
  std::string line;
  if (!std::getline(in, line) || line != "# cgp-sweep-index v1") throw FormatError("index csv: missing v1 header");
  if (!std::getline(in, line)) throw FormatError("index csv: missing column header");
  std::vector<RunRecord> out;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    const auto cells = split(line, ',');
    if (cells.size() < 10) throw FormatError("index csv: short row");
    RunRecord r;
    r.seed = std::stoull(cells[2]);
    r.config_hash = cells[3];
    r.env = cells[4];
    r.mode = parse_mode(cells[5]);
    r.schedule = parse_schedule(cells[6]);
    r.status = cells[7] == "completed" ? RunStatus::Completed : RunStatus::Failed;
    r.final_reward = cells[8] == "nan" ? std::numeric_limits<double>::quiet_NaN() : std::stod(cells[8]);
    out.push_back(std::move(r));
  }
  return out;
}

std::vector<StabilityPoint> stability_curve(const std::vector<RunRecord>& records, std::vector<double> reward_grid) {
  if (records.empty()) throw std::invalid_argument("stability_curve: no records");
  std::sort(reward_grid.begin(), reward_grid.end());
  std::vector<double> finals;
  finals.reserve(records.size());
  for (const auto& r : records) finals.push_back(r.ranked_final());
  std::sort(finals.begin(), finals.end());

  std::vector<StabilityPoint> out;
  out.reserve(reward_grid.size());
  const double n = static_cast<double>(finals.size());
  for (double level : reward_grid) {
    const auto first_ge = std::lower_bound(finals.begin(), finals.end(), level);
    out.push_back({level, static_cast<double>(finals.end() - first_ge) / n});
  }
  return out;
}

std::vector<BenchRow> runtime_bench(const std::string& env_name, const std::vector<BenchPolicy>& policies, int episodes,
                                    std::uint64_t seed) {
  if (episodes < 1) throw ConfigError("episodes", "must be >= 1");
  std::vector<BenchRow> rows;
  for (const auto& p : policies) {
    if (!p.policy) throw UsageError("runtime_bench: policy '" + p.name + "' is missing");
    auto env = envs::make_env(env_name);
    Rng rng(seed);
    double total = 0.0;
    for (int e = 0; e < episodes; ++e) {
      const auto t0 = std::chrono::steady_clock::now();
      auto obs = env->reset(rng);
      for (;;) {
        const auto step = env->step(p.policy(obs));
        obs = step.next_observation;
        if (step.end_kind != EndKind::NotDone) break;
      }
      total += std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    }
    rows.push_back({p.name, total / episodes, episodes});
  }
  return rows;
}

std::vector<BenchPolicy> standard_bench_policies(const std::string& env_name, const nn::DenseNet& critic,
                                                 const std::vector<std::pair<std::string, nn::DenseNet>>& distilled,
                                                 const cem::CemConfig& base_cem, std::uint64_t seed) {
  const auto action_dim = envs::make_env(env_name)->spec().action_dim;
  auto q = std::make_shared<nn::DenseNet>(critic);
  std::vector<BenchPolicy> out;

  auto random_rng = std::make_shared<Rng>(derive_seed({seed, 1}));
  out.push_back({"random", [random_rng, action_dim](const agents::Vector&) {
                   std::uniform_real_distribution<double> u(-1.0, 1.0);
                   agents::Vector a(action_dim);
                   for (int j = 0; j < action_dim; ++j) a(j) = u(*random_rng);
                   return a;
                 }});
  for (int iterations : {2, 4}) {
    auto cfg = base_cem;
    cfg.iterations = iterations;
    cfg.action_dim = action_dim;
    auto rng = std::make_shared<Rng>(derive_seed({seed, 2, static_cast<std::uint64_t>(iterations)}));
    out.push_back({"cem-" + std::to_string(iterations), [q, cfg, rng](const agents::Vector& obs) {
                     return cem::cem_policy(obs, agents::q_function(*q), cfg, *rng);
                   }});
  }
  for (const auto& [name, net] : distilled) {
    auto policy = std::make_shared<nn::DenseNet>(net);
    out.push_back({name, [policy](const agents::Vector& obs) -> agents::Vector {
                     return policy->forward(obs.transpose()).row(0).transpose();
                   }});
  }
  return out;
}

void write_bench_csv(std::ostream& out, const std::vector<BenchRow>& rows) {
  out << "# cgp-runtime-bench v1\n";
  out << "method,mean_inference_seconds,episodes\n";
  for (const auto& r : rows) out << r.name << ',' << io::format_double(r.mean_seconds) << ',' << r.episodes << '\n';
}

}  // namespace cgp::harness

// cgp: command line front end for training, evaluation, sweeps, stability curves and the
// inference benchmark. Run `cgp <verb> --help` for the flags of each verb.

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "cgp/agents.hpp"
#include "cgp/errors.hpp"
#include "cgp/harness.hpp"
#include "cgp/serialize.hpp"

namespace fs = std::filesystem;
using namespace cgp;

namespace {

std::string read_text(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot read " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

fs::path default_out_root() {
  const char* env = std::getenv("CGP_OUT_ROOT");
  return env && *env ? fs::path(env) : fs::path("runs");
}

// Config assembled from --config, then per-key flags, then --set, in that order.
struct ConfigFlags {
  std::string config_file;
  std::map<std::string, std::string> by_key;
  std::vector<std::string> sets;

  void attach(CLI::App& app) {
    app.add_option("--config", config_file, "key = value config file");
    app.add_option("--set", sets, "override as key=value (repeatable)");
    for (const auto& key : config_keys()) {
      app.add_option("--" + key, by_key[key], "config key '" + key + "'");
    }
  }

  RunSpec build(std::vector<std::string>* axis_lines = nullptr) const {
    RunSpec spec;
    if (!config_file.empty()) apply_config_text(spec, read_text(config_file), axis_lines);
    for (const auto& key : config_keys()) {
      const auto it = by_key.find(key);
      if (it != by_key.end() && !it->second.empty()) apply_setting(spec, key, it->second);
    }
    for (const auto& s : sets) {
      const auto eq = s.find('=');
      if (eq == std::string::npos) throw ConfigError(s, "--set expects key=value");
      apply_setting(spec, s.substr(0, eq), s.substr(eq + 1));
    }
    return spec;
  }
};

RunSpec load_run_spec(const fs::path& run_dir) {
  RunSpec spec;
  apply_config_text(spec, read_text(run_dir / "config.txt"));
  return spec;
}

agents::PolicyFn load_policy(const fs::path& run_dir, const RunSpec& spec, bool force_cem, std::uint64_t seed) {
  if (!force_cem && has_policy(spec.mode)) {
    auto net = std::make_shared<nn::DenseNet>(nn::load_file(run_dir / "policy.cgpn"));
    return [net](const agents::Vector& obs) -> agents::Vector { return net->forward(obs.transpose()).row(0).transpose(); };
  }
  auto q = std::make_shared<nn::DenseNet>(nn::load_file(run_dir / "q1.cgpn"));
  auto cfg = spec.config.cem;
  cfg.action_dim = envs::make_env(spec.env)->spec().action_dim;
  auto rng = std::make_shared<Rng>(seed);
  return [q, cfg, rng](const agents::Vector& obs) { return cem::cem_policy(obs, agents::q_function(*q), cfg, *rng); };
}

std::vector<double> parse_list(const std::string& text) {
  std::vector<double> out;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    if (!item.empty()) out.push_back(std::stod(item));
  }
  return out;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"CEM Q-learning with distilled policies"};
  app.require_subcommand(1);
  std::string out_root = default_out_root().string();
  app.add_option("--out", out_root, "output root (default: $CGP_OUT_ROOT or ./runs)");

  // train
  auto* train = app.add_subcommand("train", "train one run and save its artifacts");
  ConfigFlags train_flags;
  train_flags.attach(*train);
  bool quiet = false;
  train->add_flag("--quiet", quiet, "no per-evaluation progress");

  // eval
  auto* eval = app.add_subcommand("eval", "evaluate a saved run");
  std::string eval_run;
  int eval_episodes = 10;
  std::uint64_t eval_seed = 12345;
  bool eval_cem = false;
  eval->add_option("--run", eval_run, "run directory")->required();
  eval->add_option("--episodes", eval_episodes, "episodes");
  eval->add_option("--seed", eval_seed, "evaluation seed");
  eval->add_flag("--cem", eval_cem, "act with CEM over q1 instead of the policy network");

  // distill
  auto* distill = app.add_subcommand("distill", "offline distillation from a saved critic and buffer");
  std::string distill_run, distill_mode = "cgp", distill_out;
  std::uint64_t distill_seed = 0;
  distill->add_option("--run", distill_run, "run directory with q1.cgpn and buffer.cgpb")->required();
  distill->add_option("--mode", distill_mode, "cgp or qgp");
  distill->add_option("--seed", distill_seed, "seed for policy init and sampling");
  distill->add_option("--policy-out", distill_out, "output file (default <run>/policy_offline.cgpn)");

  // sweep
  auto* sweep = app.add_subcommand("sweep", "grid sweep over config axes");
  ConfigFlags sweep_flags;
  sweep_flags.attach(*sweep);
  std::vector<std::string> axes;
  int seeds = 4;
  std::uint64_t master_seed = 0;
  int parallel = 1;
  sweep->add_option("--axis", axes, "axis as key[,key]=v[,v];v[,v] (repeatable)");
  sweep->add_option("--seeds", seeds, "seeds per cell");
  sweep->add_option("--master-seed", master_seed, "master seed");
  sweep->add_option("--parallel", parallel, "worker threads");

  // stability
  auto* stability = app.add_subcommand("stability", "stability curve from a sweep index");
  std::string index_path, levels;
  stability->add_option("--index", index_path, "index.csv written by sweep")->required();
  stability->add_option("--levels", levels, "comma-separated reward levels")->required();

  // bench
  auto* bench = app.add_subcommand("bench", "inference seconds per episode");
  std::string bench_run;
  std::vector<std::string> bench_distilled;
  int bench_episodes = 10;
  std::uint64_t bench_seed = 7;
  bench->add_option("--run", bench_run, "run directory providing q1.cgpn (and policy.cgpn)")->required();
  bench->add_option("--distilled", bench_distilled, "extra policy as name=path (repeatable)");
  bench->add_option("--episodes", bench_episodes, "episodes per policy");
  bench->add_option("--seed", bench_seed, "seed");

  CLI11_PARSE(app, argc, argv);

  try {
    if (*train) {
      const auto spec = train_flags.build();
      agents::ProgressFn progress;
      if (!quiet) {
        progress = [](const EvalPoint& p) {
          std::cerr << "step " << p.step << " eval_mean " << io::format_double(p.mean) << '\n';
        };
      }
      const auto rec = harness::run_single(spec, out_root, progress);
      std::cout << harness::run_directory(out_root, spec).generic_string() << '\n';
      std::cout << "status " << to_string(rec.status) << " final_reward " << io::format_double(rec.final_reward) << '\n';
      if (rec.status == RunStatus::Failed) std::cout << "failure " << rec.failure << '\n';
      return rec.status == RunStatus::Completed ? 0 : 3;
    }
    if (*eval) {
      const auto spec = load_run_spec(eval_run);
      auto env = envs::make_env(spec.env);
      const auto res = agents::evaluate(*env, load_policy(eval_run, spec, eval_cem, eval_seed), eval_episodes, eval_seed);
      std::cout << "mean " << io::format_double(res.mean) << '\n';
      for (std::size_t i = 0; i < res.returns.size(); ++i) {
        std::cout << "episode " << i << ' ' << io::format_double(res.returns[i]) << '\n';
      }
      return 0;
    }
    if (*distill) {
      auto spec = load_run_spec(distill_run);
      spec.mode = parse_mode(distill_mode);
      if (spec.mode != Mode::CGP && spec.mode != Mode::QGP) throw ConfigError("mode", "distill supports cgp or qgp");
      const auto q1 = nn::load_file(fs::path(distill_run) / "q1.cgpn");
      const auto buffer = ReplayBuffer::load_file(fs::path(distill_run) / "buffer.cgpb");
      const auto env = envs::make_env(spec.env);
      auto config = spec.config;
      config.cem.action_dim = env->spec().action_dim;
      Rng init(derive_seed({distill_seed, 1}));
      agents::PolicyHead policy(env->spec().observation_dim, env->spec().action_dim, config, init);
      Rng rng(derive_seed({distill_seed, 9}));
      const auto stats = agents::distill_offline(policy, q1, buffer, spec.mode, config, rng);
      const fs::path out = distill_out.empty() ? fs::path(distill_run) / "policy_offline.cgpn" : fs::path(distill_out);
      nn::save_file(policy.net, out);
      std::cout << out.generic_string() << '\n'
                << "updates " << stats.updates << " final_loss " << io::format_double(stats.final_loss)
                << (stats.early_stopped ? " early_stopped" : "") << '\n';
      return 0;
    }
    if (*sweep) {
      std::vector<std::string> axis_lines;
      harness::SweepSpec s;
      s.base = sweep_flags.build(&axis_lines);
      for (const auto& a : axis_lines) s.axes.push_back(harness::parse_axis(a));
      for (const auto& a : axes) s.axes.push_back(harness::parse_axis(a));
      s.seeds_per_cell = seeds;
      s.master_seed = master_seed;
      const auto entries = harness::run_sweep(s, parallel, out_root, [&](std::size_t n) {
        std::cerr << s.cell_count() << " cell(s) x " << seeds << " seed(s) = " << n << " run(s)\n";
      });
      long failed = 0;
      for (const auto& e : entries) failed += e.record.status == RunStatus::Failed;
      std::cout << (fs::path(out_root) / "index.csv").generic_string() << '\n'
                << entries.size() << " runs, " << failed << " failed\n";
      return 0;
    }
    if (*stability) {
      std::ifstream in(index_path, std::ios::binary);
      if (!in) throw std::runtime_error("cannot read " + index_path);
      const auto curve = harness::stability_curve(harness::read_index_csv(in), parse_list(levels));
      std::cout << "# cgp-stability v1\nlevel,fraction\n";
      for (const auto& p : curve) std::cout << io::format_double(p.level) << ',' << io::format_double(p.fraction) << '\n';
      return 0;
    }
    if (*bench) {
      const auto spec = load_run_spec(bench_run);
      std::vector<std::pair<std::string, nn::DenseNet>> distilled;
      if (fs::exists(fs::path(bench_run) / "policy.cgpn")) {
        distilled.emplace_back("policy", nn::load_file(fs::path(bench_run) / "policy.cgpn"));
      }
      for (const auto& d : bench_distilled) {
        const auto eq = d.find('=');
        if (eq == std::string::npos) throw ConfigError("distilled", "expected name=path");
        distilled.emplace_back(d.substr(0, eq), nn::load_file(d.substr(eq + 1)));
      }
      const auto q1 = nn::load_file(fs::path(bench_run) / "q1.cgpn");
      const auto policies = harness::standard_bench_policies(spec.env, q1, distilled, spec.config.cem, bench_seed);
      harness::write_bench_csv(std::cout, harness::runtime_bench(spec.env, policies, bench_episodes, bench_seed));
      return 0;
    }
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}

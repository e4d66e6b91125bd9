#pragma once

// Run orchestration: single runs with persisted artifacts, grid sweeps, stability curves and
// the inference runtime benchmark.

#include <filesystem>
#include <functional>
#include <iosfwd>
#include <string>
#include <utility>
#include <vector>

#include "cgp/agents.hpp"
#include "cgp/record.hpp"

namespace cgp::harness {

namespace fs = std::filesystem;

/// Directory for a run: <root>/<env>-<mode>-<schedule>-<config hash>/seed-<seed>.
fs::path run_directory(const fs::path& root, const RunSpec& spec);

/// Trains and writes, inside run_directory(out_root, spec):
///   record.csv   evaluation series (see write_record_csv)
///   meta.json    full config, seed, status, counters, version, wall-clock seconds
///   config.txt   canonical key = value config
///   q1.cgpn q2.cgpn q1_target.cgpn q2_target.cgpn [policy.cgpn policy_target.cgpn]
///   buffer.cgpb
RunRecord run_single(const RunSpec& spec, const fs::path& out_root, const agents::ProgressFn& progress = {});

/// One grid axis; all keys vary together, values[i] holds one value per key.
struct Axis {
  std::vector<std::string> keys;
  std::vector<std::vector<std::string>> values;
};

/// Parses "k1,k2=v1a,v2a;v1b,v2b" (also accepted with a leading "axis ").
Axis parse_axis(std::string_view text);

struct SweepSpec {
  RunSpec base;
  std::vector<Axis> axes;  // cartesian product; no axes means a single cell
  int seeds_per_cell = 4;
  std::uint64_t master_seed = 0;

  std::size_t cell_count() const;
  /// Run specs in (cell, replicate) order with seeds derived from (master, cell, replicate).
  std::vector<RunSpec> expand() const;
};

struct SweepEntry {
  std::size_t cell = 0;
  int replicate = 0;
  RunRecord record;
  fs::path directory;  // relative to the sweep root
};

/// Executes every (cell x seed) once using up to `parallelism` worker threads, then writes
/// <out_root>/index.csv. Individual failures are recorded, never fatal. `announce` receives the
/// total run count before anything starts.
std::vector<SweepEntry> run_sweep(const SweepSpec& spec, int parallelism, const fs::path& out_root,
                                  const std::function<void(std::size_t)>& announce = {});

/// Index CSV schema v1: cell,replicate,seed,config_hash,env,mode,schedule,status,final_reward,path
void write_index_csv(std::ostream& out, const std::vector<SweepEntry>& entries);
std::vector<RunRecord> read_index_csv(std::istream& in);

struct StabilityPoint {
  double level = 0.0;
  double fraction = 0.0;
};

/// Fraction of runs whose final reward is >= each level. Failed runs count as -inf.
std::vector<StabilityPoint> stability_curve(const std::vector<RunRecord>& records, std::vector<double> reward_grid);

struct BenchPolicy {
  std::string name;
  agents::PolicyFn policy;
};

struct BenchRow {
  std::string name;
  double mean_seconds = 0.0;
  int episodes = 0;
};

/// Mean wall-clock seconds per complete episode for each policy.
std::vector<BenchRow> runtime_bench(const std::string& env_name, const std::vector<BenchPolicy>& policies, int episodes,
                                    std::uint64_t seed);

/// The standard table: random, cem@N=2, cem@N=4 over `critic`, plus each named distilled policy.
std::vector<BenchPolicy> standard_bench_policies(const std::string& env_name, const nn::DenseNet& critic,
                                                 const std::vector<std::pair<std::string, nn::DenseNet>>& distilled,
                                                 const cem::CemConfig& base_cem, std::uint64_t seed);

void write_bench_csv(std::ostream& out, const std::vector<BenchRow>& rows);

}  // namespace cgp::harness

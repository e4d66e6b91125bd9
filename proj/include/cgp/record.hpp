#pragma once

#include <cstdint>
#include <iosfwd>
#include <string>
#include <vector>

#include "cgp/config.hpp"

namespace cgp {

enum class RunStatus { Completed, Failed };
const char* to_string(RunStatus s);

struct EvalPoint {
  long step = 0;
  double mean = 0.0;
  std::vector<double> returns;
};

/// Evaluation history of one run plus the metadata needed to aggregate it.
struct RunRecord {
  std::string config_hash;
  std::string env;
  Mode mode = Mode::CGP;
  Schedule schedule = Schedule::Online;
  std::uint64_t seed = 0;
  std::vector<EvalPoint> series;
  double final_reward = 0.0;  // last eval mean; NaN when no evaluation happened
  RunStatus status = RunStatus::Completed;
  std::string failure;  // empty unless failed

  long steps_taken = 0;
  long critic_updates = 0;
  long policy_updates = 0;
  long target_updates = 0;
  long offline_updates = 0;
  long clamped_actions = 0;  // behavior actions the env had to clamp into [-1, 1]

  /// Final reward used for stability curves: -inf for failed or never-evaluated runs.
  double ranked_final() const;
};

/// Record CSV, schema v1:
///   `# cgp-run-record v1`
///   `step,eval_mean,eval_0,...,eval_{E-1}` then one row per evaluation.
/// Floats use shortest round-trip formatting, so reruns compare byte-for-byte.
void write_record_csv(std::ostream& out, const RunRecord& record);
std::vector<EvalPoint> read_record_csv(std::istream& in);

}  // namespace cgp

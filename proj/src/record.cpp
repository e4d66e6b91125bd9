#include "cgp/record.hpp"

#include <cmath>
#include <istream>
#include <limits>
#include <ostream>
#include <sstream>

#include "cgp/errors.hpp"
#include "cgp/serialize.hpp"

namespace cgp {

const char* to_string(RunStatus s) { return s == RunStatus::Completed ? "completed" : "failed"; }

double RunRecord::ranked_final() const {
  if (status == RunStatus::Failed || !std::isfinite(final_reward)) return -std::numeric_limits<double>::infinity();
  return final_reward;
}

void write_record_csv(std::ostream& out, const RunRecord& record) {
  std::size_t episodes = 0;
  for (const auto& p : record.series) episodes = std::max(episodes, p.returns.size());
  out << "# cgp-run-record v1\n";
  out << "step,eval_mean";
  for (std::size_t i = 0; i < episodes; ++i) out << ",eval_" << i;
  out << '\n';
  for (const auto& p : record.series) {
    out << p.step << ',' << io::format_double(p.mean);
    for (double r : p.returns) out << ',' << io::format_double(r);
    out << '\n';
  }
}

std::vector<EvalPoint> read_record_csv(std::istream& in) {
  std::string line;
  if (!std::getline(in, line) || line != "# cgp-run-record v1") throw FormatError("record csv: missing v1 header");
  if (!std::getline(in, line) || !line.starts_with("step,eval_mean")) throw FormatError("record csv: bad column header");
  std::vector<EvalPoint> out;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::istringstream row(line);
    std::string cell;
    EvalPoint p;
    if (!std::getline(row, cell, ',')) throw FormatError("record csv: empty row");
    p.step = std::stol(cell);
    if (!std::getline(row, cell, ',')) throw FormatError("record csv: missing eval_mean");
    p.mean = std::stod(cell);
    while (std::getline(row, cell, ',')) p.returns.push_back(std::stod(cell));
    out.push_back(std::move(p));
  }
  return out;
}

}  // namespace cgp

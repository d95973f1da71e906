#pragma once

#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "kato/scenario.hpp"

namespace kato {

/// Process exit codes of the scenario runner.
namespace exit_status {
inline constexpr int ok = 0;
inline constexpr int assertion = 1;  // an asserted check failed
inline constexpr int usage = 2;      // invalid scenario or command line
}  // namespace exit_status

/// One asserted inequality. `tag` names the estimate it instantiates.
struct Check {
  std::string name;
  std::string tag;
  double value = 0.0;
  double limit = 0.0;
  std::string relation;  // "<=", ">=", "<", ">"
  bool pass = false;
};

struct ReportBundle {
  nlohmann::json summary;           // the machine contract, deterministic
  nlohmann::json provenance;        // timestamp and timings, not deterministic
  std::vector<std::string> files;   // written files, relative to the output directory
  std::vector<Check> failures;

  [[nodiscard]] bool pass() const { return failures.empty(); }
  [[nodiscard]] int exit_code() const { return pass() ? exit_status::ok : exit_status::assertion; }
};

struct RunOptions {
  bool write = true;   // write summary.json, provenance.json and CSV tables
  bool quiet = false;  // no progress lines on stderr
};

/// Runs the experiments of the scenario in dependency order and writes the
/// bundle into scenario.out. Throws ScenarioError when the operator cannot
/// be built from the scenario.
[[nodiscard]] ReportBundle run(const Scenario& scenario, const RunOptions& options = {});

/// summary.json serialization used for the determinism contract.
[[nodiscard]] std::string dump_summary(const nlohmann::json& summary);

/// Human-readable table of a summary: constants and checks per experiment.
[[nodiscard]] std::string render_report(const nlohmann::json& summary);

}  // namespace kato

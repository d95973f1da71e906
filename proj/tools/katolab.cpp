// Command-line front end: run, sweep and report scenario bundles.

#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include <CLI11.hpp>

#include "kato/parallel.hpp"
#include "kato/runner.hpp"
#include "kato/scenario.hpp"
#include "kato/toml_lite.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

struct Overrides {
  int threads = -1;
  std::optional<std::uint64_t> seed;
  std::string out;
};

json load_document(const std::string& path) {
  try {
    return kato::toml::parse_file(path);
  } catch (const kato::toml::ParseError& e) {
    throw kato::ScenarioError(path + ": " + e.what());
  } catch (const std::runtime_error& e) {
    throw kato::ScenarioError(e.what());
  }
}

void apply(json& doc, const Overrides& o) {
  if (o.seed) kato::set_path(doc, "seed", *o.seed);
  if (!o.out.empty()) kato::set_path(doc, "out", o.out);
  if (o.threads >= 0)
    kato::set_path(doc, "threads", o.threads == 0 ? int(std::thread::hardware_concurrency()) : o.threads);
}

int report_failures(const kato::ReportBundle& b) {
  for (const auto& c : b.failures)
    std::cerr << "check failed: " << c.name << " [" << c.tag << "] value " << c.value << " "
              << c.relation << " " << c.limit << "\n";
  return b.exit_code();
}

int cmd_run(const std::string& path, const Overrides& o) {
  json doc = load_document(path);
  apply(doc, o);
  const kato::Scenario sc = kato::Scenario::from_json(doc);
  const kato::ReportBundle b = kato::run(sc);
  std::cout << fs::path(sc.out) / "summary.json" << "\n";
  return report_failures(b);
}

/// One run per value of a dotted scenario path; bundles go to
/// <out>/<last path component>=<value>/ and an index to <out>/sweep.json.
int cmd_sweep(const std::string& path, const std::string& param, const std::string& values,
              const Overrides& o) {
  json base = load_document(path);
  apply(base, o);
  const kato::Scenario base_sc = kato::Scenario::from_json(base);
  std::vector<json> parsed;
  std::stringstream ss(values);
  for (std::string item; std::getline(ss, item, ',');) {
    try {
      parsed.push_back(kato::toml::parse_value(item));
    } catch (const kato::toml::ParseError&) {
      parsed.emplace_back(item);  // bare words are strings
    }
  }
  if (parsed.empty()) throw kato::ScenarioError("--values is empty");
  const std::string leaf = param.substr(param.rfind('.') + 1);
  json index = {{"param", param}, {"runs", json::array()}};
  int status = kato::exit_status::ok;
  for (const json& v : parsed) {
    json doc = base;
    kato::set_path(doc, param, v);
    const std::string label = leaf + "=" + (v.is_string() ? v.get<std::string>() : v.dump());
    kato::set_path(doc, "out", (fs::path(base_sc.out) / label).string());
    const kato::Scenario sc = kato::Scenario::from_json(doc);
    std::cerr << "== " << label << "\n";
    const kato::ReportBundle b = kato::run(sc);
    index["runs"].push_back({{"value", v},
                             {"dir", label},
                             {"scenario_hash", b.summary["scenario_hash"]},
                             {"pass", b.pass()}});
    if (report_failures(b) != kato::exit_status::ok) status = kato::exit_status::assertion;
  }
  fs::create_directories(base_sc.out);
  std::ofstream(fs::path(base_sc.out) / "sweep.json") << index.dump(2) << "\n";
  return status;
}

/// Prints every summary.json under dir; exit 1 if any recorded a failure.
int cmd_report(const std::string& dir) {
  std::vector<fs::path> found;
  if (fs::is_regular_file(dir)) {
    found.push_back(dir);
  } else if (fs::is_directory(dir)) {
    for (const auto& entry : fs::recursive_directory_iterator(dir))
      if (entry.is_regular_file() && entry.path().filename() == "summary.json")
        found.push_back(entry.path());
  }
  if (found.empty()) throw kato::ScenarioError("no summary.json under " + dir);
  std::sort(found.begin(), found.end());
  bool pass = true;
  for (const fs::path& p : found) {
    std::ifstream in(p);
    const json summary = json::parse(in);
    std::cout << "# " << p.string() << "\n" << kato::render_report(summary) << "\n";
    pass = pass && summary.value("pass", false);
  }
  return pass ? kato::exit_status::ok : kato::exit_status::assertion;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Weighted parabolic Kato square-root experiments"};
  app.require_subcommand(1);
  // Subcommands inherit this, so global flags work after the subcommand too.
  app.fallthrough();
  Overrides o;
  app.add_option("--threads", o.threads, "worker threads, 0 for all cores")->check(CLI::NonNegativeNumber);
  app.add_option("--seed", o.seed, "override the scenario seed");
  app.add_option("--out", o.out, "override the output directory");

  std::string scenario_path, param, values, report_dir;
  auto* run = app.add_subcommand("run", "run a scenario");
  run->add_option("scenario", scenario_path, "scenario file (TOML)")->required();
  auto* sweep = app.add_subcommand("sweep", "run a scenario once per parameter value");
  sweep->add_option("scenario", scenario_path, "scenario file (TOML)")->required();
  sweep->add_option("--param", param, "dotted scenario path, e.g. grid.Nx")->required();
  sweep->add_option("--values", values, "comma-separated values")->required();
  auto* report = app.add_subcommand("report", "print the summaries found under a directory");
  report->add_option("dir", report_dir, "bundle directory or summary.json")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kato::exit_status::ok : kato::exit_status::usage;
  }

  try {
    if (*run) return cmd_run(scenario_path, o);
    if (*sweep) return cmd_sweep(scenario_path, param, values, o);
    if (*report) return cmd_report(report_dir);
  } catch (const kato::ScenarioError& e) {
    std::cerr << "invalid scenario: " << e.what() << "\n";
    return kato::exit_status::usage;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kato::exit_status::assertion;
  }
  return kato::exit_status::usage;
}

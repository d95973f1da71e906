#include <gtest/gtest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>

#include "kato/runner.hpp"
#include "kato/scenario.hpp"
#include "kato/toml_lite.hpp"

namespace kato {
namespace {

namespace fs = std::filesystem;
using nlohmann::json;

// ---------------------------------------------------------------------------
// TOML subset

TEST(Toml, ScalarsTablesAndArrays) {
  const json doc = toml::parse(R"(
# comment
name = "demo"   # trailing comment
literal = 'C:\path'
escaped = "tab\tquote\"u\u00e9"
count = 1_000
hex = 0xff
neg = -3
ratio = 2.5e-1
big = inf
flag = true
list = [1, 2,
        3,]
mixed = [ "a", 'b' ]
point = { x = 1, y = "two" }
dotted.key = 4

[grid]
Nx = 32
[grid.extra]
deep = false
)");
  EXPECT_EQ(doc["name"], "demo");
  EXPECT_EQ(doc["literal"], "C:\\path");
  EXPECT_EQ(doc["escaped"], "tab\tquote\"u\xc3\xa9");
  EXPECT_EQ(doc["count"], 1000);
  EXPECT_EQ(doc["hex"], 255);
  EXPECT_EQ(doc["neg"], -3);
  EXPECT_DOUBLE_EQ(doc["ratio"].get<double>(), 0.25);
  EXPECT_TRUE(std::isinf(doc["big"].get<double>()));
  EXPECT_EQ(doc["flag"], true);
  EXPECT_EQ(doc["list"], json::array({1, 2, 3}));
  EXPECT_EQ(doc["mixed"], json::array({"a", "b"}));
  EXPECT_EQ(doc["point"]["y"], "two");
  EXPECT_EQ(doc["dotted"]["key"], 4);
  EXPECT_EQ(doc["grid"]["Nx"], 32);
  EXPECT_EQ(doc["grid"]["extra"]["deep"], false);
}

TEST(Toml, ErrorsCarryLineNumbers) {
  try {
    (void)toml::parse("a = 1\nb = [1, 2\n");
    FAIL() << "expected a parse error";
  } catch (const toml::ParseError& e) {
    EXPECT_GE(e.line(), 2);
  }
  EXPECT_THROW((void)toml::parse("a = 1\na = 2\n"), toml::ParseError);
  EXPECT_THROW((void)toml::parse("[t]\n[t]\n"), toml::ParseError);
  EXPECT_THROW((void)toml::parse("[[arr]]\n"), toml::ParseError);
  EXPECT_THROW((void)toml::parse("d = 1979-05-27\n"), toml::ParseError);
  EXPECT_THROW((void)toml::parse("s = \"\"\"multi\"\"\"\n"), toml::ParseError);
  EXPECT_THROW((void)toml::parse("s = \"open\n"), toml::ParseError);
  EXPECT_THROW((void)toml::parse("= 3\n"), toml::ParseError);
}

TEST(Toml, SingleValues) {
  EXPECT_EQ(toml::parse_value("42"), 42);
  EXPECT_EQ(toml::parse_value("\"x\""), "x");
  EXPECT_EQ(toml::parse_value("[0.5, 1]"), json::array({0.5, 1}));
  EXPECT_THROW((void)toml::parse_value("bare"), toml::ParseError);
}

// ---------------------------------------------------------------------------
// Scenario

constexpr const char* kSmall = R"(
name = "small"
seed = 3
experiments = ["ellipticity", "coercivity", "resolvents"]
out = "unused"

[grid]
n = 1
Nx = 16
Nt = 16

[weight]
kind = "power"
exponent = 0.5

[coefficients]
kind = "random"
kappa = 0.5

[coercivity]
samples = 10

[resolvents]
samples = 4
)";

TEST(Scenario, ParsesAndNormalizes) {
  const Scenario sc = Scenario::from_toml(kSmall);
  EXPECT_EQ(sc.name, "small");
  EXPECT_EQ(sc.seed, 3u);
  EXPECT_EQ(sc.grid.Nx, 16);
  EXPECT_EQ(sc.experiments.size(), 3u);
  EXPECT_EQ(sc.coercivity.samples, 10);
  // Seeds not given explicitly derive from the master seed.
  EXPECT_FALSE(sc.coefficient_seed_set);
  EXPECT_EQ(sc.coefficient_seed(), Scenario::from_toml(kSmall).coefficient_seed());
  EXPECT_NE(sc.coefficient_seed(), sc.weight_seed());
}

TEST(Scenario, JsonRoundTripKeepsHash) {
  const Scenario sc = Scenario::from_toml(kSmall);
  const Scenario back = Scenario::from_json(sc.to_json());
  EXPECT_EQ(back.hash(), sc.hash());
  EXPECT_EQ(back.to_json(), sc.to_json());
}

TEST(Scenario, HashIgnoresOutputAndThreads) {
  json doc = toml::parse(kSmall);
  const std::uint64_t h = Scenario::from_json(doc).hash();
  set_path(doc, "out", "elsewhere");
  set_path(doc, "threads", 7);
  EXPECT_EQ(Scenario::from_json(doc).hash(), h);
  set_path(doc, "seed", 4);
  EXPECT_NE(Scenario::from_json(doc).hash(), h);
  set_path(doc, "seed", 3);
  set_path(doc, "grid.Nx", 32);
  EXPECT_NE(Scenario::from_json(doc).hash(), h);
}

TEST(Scenario, RejectsInvalidInput) {
  auto with = [](const std::string& path, json value) {
    json doc = toml::parse(kSmall);
    set_path(doc, path, std::move(value));
    return doc;
  };
  EXPECT_THROW((void)Scenario::from_json(with("grid.Nx", 12)), ScenarioError);
  EXPECT_THROW((void)Scenario::from_json(with("grid.n", 3)), ScenarioError);
  EXPECT_THROW((void)Scenario::from_json(with("grid.typo", 1)), ScenarioError);
  EXPECT_THROW((void)Scenario::from_json(with("unknown_section.x", 1)), ScenarioError);
  EXPECT_THROW((void)Scenario::from_json(with("experiments", json::array({"nope"}))), ScenarioError);
  EXPECT_THROW((void)Scenario::from_json(with("weight.kind", "spiky")), ScenarioError);
  EXPECT_THROW((void)Scenario::from_json(with("coefficients.kappa", 1.5)), ScenarioError);
  EXPECT_THROW((void)Scenario::from_json(with("seed", "seven")), ScenarioError);
  EXPECT_THROW((void)Scenario::from_json(with("seed", -1)), ScenarioError);
  EXPECT_THROW((void)Scenario::from_json(with("kato.method", "eigen")), ScenarioError);
}

TEST(Scenario, ExperimentNamesRoundTrip) {
  for (int i = 0; i < experiment_count; ++i) {
    const Experiment e = static_cast<Experiment>(i);
    EXPECT_EQ(experiment_from_name(experiment_name(e)), e);
  }
  EXPECT_FALSE(experiment_from_name("kato2").has_value());
}

TEST(Scenario, HashHelpers) {
  // FNV-1a 64 reference values.
  EXPECT_EQ(fnv1a(""), 0xcbf29ce484222325ULL);
  EXPECT_EQ(fnv1a("a"), 0xaf63dc4c8601ec8cULL);
  EXPECT_EQ(hex64(0xabcULL), "0000000000000abc");
}

// ---------------------------------------------------------------------------
// Runner

RunOptions in_memory() { return RunOptions{false, true}; }

TEST(Runner, EmptyExperimentListPasses) {
  json doc = toml::parse(kSmall);
  set_path(doc, "experiments", json::array());
  const ReportBundle b = run(Scenario::from_json(doc), in_memory());
  EXPECT_TRUE(b.pass());
  EXPECT_EQ(b.exit_code(), exit_status::ok);
  EXPECT_TRUE(b.summary["experiments"].empty());
  EXPECT_EQ(b.summary["pass"], true);
}

TEST(Runner, SummaryCarriesChecksAndTags) {
  const ReportBundle b = run(Scenario::from_toml(kSmall), in_memory());
  ASSERT_TRUE(b.pass()) << dump_summary(b.summary);
  const json& ex = b.summary["experiments"];
  ASSERT_TRUE(ex.contains("coercivity"));
  EXPECT_EQ(ex["coercivity"]["tag"], "hidden_coercivity");
  for (const auto& c : ex["coercivity"]["checks"]) {
    EXPECT_TRUE(c.contains("relation"));
    EXPECT_EQ(c["pass"], true);
  }
  EXPECT_EQ(b.summary["scenario_hash"], hex64(Scenario::from_toml(kSmall).hash()));
  EXPECT_FALSE(b.summary["scenario"].contains("out"));
  EXPECT_FALSE(b.summary.contains("timestamp"));
  EXPECT_TRUE(b.provenance.contains("timestamp"));
}

TEST(Runner, FailingToleranceGivesAssertionExit) {
  json doc = toml::parse(kSmall);
  set_path(doc, "experiments", json::array({"resolvents"}));
  set_path(doc, "tolerances.resolvent_ceiling", 1e-6);
  const ReportBundle b = run(Scenario::from_json(doc), in_memory());
  EXPECT_FALSE(b.pass());
  EXPECT_EQ(b.exit_code(), exit_status::assertion);
  EXPECT_EQ(b.summary["pass"], false);
  EXPECT_FALSE(b.summary["failures"].empty());
}

TEST(Runner, UnitKatoRatiosInBand) {
  json doc = toml::parse(kSmall);
  set_path(doc, "experiments", json::array({"kato"}));
  set_path(doc, "weight", json{{"kind", "unit"}});
  set_path(doc, "coefficients", json{{"kind", "identity"}});
  set_path(doc, "tolerances.kato_min", std::pow(2.0, -0.25) - 1e-6);
  set_path(doc, "tolerances.kato_max", 1.0 + 1e-6);
  const ReportBundle b = run(Scenario::from_json(doc), in_memory());
  EXPECT_TRUE(b.pass()) << dump_summary(b.summary);
}

TEST(Runner, SummaryIsByteIdenticalAcrossThreadCounts) {
  json doc = toml::parse(kSmall);
  set_path(doc, "threads", 1);
  const std::string a = dump_summary(run(Scenario::from_json(doc), in_memory()).summary);
  const std::string b = dump_summary(run(Scenario::from_json(doc), in_memory()).summary);
  set_path(doc, "threads", 3);
  const std::string c = dump_summary(run(Scenario::from_json(doc), in_memory()).summary);
  EXPECT_EQ(a, b);
  EXPECT_EQ(a, c);
}

TEST(Runner, WritesBundleFiles) {
  const fs::path dir = fs::temp_directory_path() / "katolab_test_bundle";
  fs::remove_all(dir);
  json doc = toml::parse(kSmall);
  set_path(doc, "out", dir.string());
  const ReportBundle b = run(Scenario::from_json(doc), RunOptions{true, true});
  EXPECT_TRUE(fs::exists(dir / "summary.json"));
  EXPECT_TRUE(fs::exists(dir / "provenance.json"));
  for (const std::string& f : b.files) EXPECT_TRUE(fs::exists(dir / f)) << f;
  std::ifstream in(dir / "summary.json");
  const std::string text((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  EXPECT_EQ(text, dump_summary(b.summary));
  EXPECT_FALSE(render_report(b.summary).empty());
  fs::remove_all(dir);
}

// ---------------------------------------------------------------------------
// Command line

int run_cli(const std::string& args) {
  const std::string cmd = std::string(KATOLAB_CLI) + " " + args + " >/dev/null 2>&1";
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

TEST(Cli, ExitCodes) {
  const fs::path dir = fs::temp_directory_path() / "katolab_test_cli";
  fs::remove_all(dir);
  fs::create_directories(dir);
  const fs::path good = dir / "good.toml";
  std::ofstream(good) << kSmall;
  const fs::path bad = dir / "bad.toml";
  std::ofstream(bad) << "name = \"bad\"\n[grid]\nNx = 12\n";
  const fs::path failing = dir / "failing.toml";
  std::ofstream(failing) << kSmall << "\n[tolerances]\nresolvent_ceiling = 1e-6\n";

  const std::string out = " --out " + (dir / "bundle").string();
  EXPECT_EQ(run_cli("run " + good.string() + out), 0);
  EXPECT_EQ(run_cli("report " + (dir / "bundle").string()), 0);
  EXPECT_EQ(run_cli("run " + bad.string() + out), 2);
  EXPECT_EQ(run_cli("run " + failing.string() + out), 1);
  EXPECT_EQ(run_cli("report " + (dir / "bundle").string()), 1);
  EXPECT_EQ(run_cli("run"), 2);
  EXPECT_EQ(run_cli("frobnicate"), 2);
  EXPECT_EQ(run_cli("run " + (dir / "missing.toml").string()), 2);
  EXPECT_EQ(run_cli("sweep " + good.string() + out + "/sweep --param coercivity.samples --values 4,6"), 0);
  EXPECT_TRUE(fs::exists(dir / "bundle" / "sweep" / "sweep.json"));
  EXPECT_TRUE(fs::exists(dir / "bundle" / "sweep" / "samples=6" / "summary.json"));
  fs::remove_all(dir);
}

}  // namespace
}  // namespace kato

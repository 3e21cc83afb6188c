#include <catch_amalgamated.hpp>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>

#include "trapsim/app/experiments.hpp"

using namespace trapsim;
using namespace trapsim::app;
namespace fs = std::filesystem;

namespace {

std::string errors_of(const std::vector<std::string>& overrides,
                      const std::optional<std::string>& file = std::nullopt) {
  try {
    load_config(file, std::nullopt, overrides);
  } catch (const ConfigError& e) {
    return e.what();
  }
  return {};
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream os;
  os << in.rdbuf();
  return os.str();
}

fs::path scratch(const std::string& name) {
  auto p = fs::temp_directory_path() / ("trapsim_cli_" + name);
  fs::remove_all(p);
  return p;
}

int shell(const std::string& cmd) {
  const int rc = std::system(cmd.c_str());
  return WIFEXITED(rc) ? WEXITSTATUS(rc) : -1;
}

}  // namespace

TEST_CASE("default configuration") {
  const auto c = load_config(std::nullopt);
  CHECK(c.warnings.empty());
  CHECK(c.kind == ExperimentKind::Sim3D);
  CHECK(c.seed == 1);
  CHECK_THAT(c.resonator.johnson_floor(), Catch::Matchers::WithinRel(6.63e-17, 0.01));
}

TEST_CASE("every preset validates") {
  for (const auto& p : presets()) {
    INFO(p.name);
    const auto c = load_config(std::nullopt, p.name);
    CHECK(c.warnings.empty());
  }
  CHECK_THROWS_AS(load_config(std::nullopt, std::string("nope")), ConfigError);
}

TEST_CASE("validation names the offending key") {
  CHECK_THAT(errors_of({"resonator.Q=0"}), Catch::Matchers::ContainsSubstring("ResonatorParams.Q"));
  const auto kind = errors_of({"experiment.kind=Bogus"});
  CHECK_THAT(kind, Catch::Matchers::ContainsSubstring("ExperimentSpec.kind"));
  for (const auto& [name, k] : experiment_kinds()) CHECK_THAT(kind, Catch::Matchers::ContainsSubstring(name));
  CHECK_THAT(errors_of({"trap.bogus=1"}), Catch::Matchers::ContainsSubstring("TrapParams.bogus"));
  // all problems in one report
  const auto many = errors_of({"resonator.Q=-1", "trap.bogus=1", "experiment.kind=Bogus"});
  CHECK_THAT(many, Catch::Matchers::ContainsSubstring("ResonatorParams.Q"));
  CHECK_THAT(many, Catch::Matchers::ContainsSubstring("TrapParams.bogus"));
  CHECK_THAT(many, Catch::Matchers::ContainsSubstring("ExperimentSpec.kind"));
}

TEST_CASE("degenerate radial frequencies warn") {
  const auto c = load_config(std::nullopt, std::nullopt, {"trap.secular_MHz=[200, 200, 70]"});
  REQUIRE(c.warnings.size() == 1);
}

TEST_CASE("parse errors carry a location") {
  const auto p = scratch("bad.yaml");
  std::ofstream(p) << "trap:\n  secular_MHz: [200, 173\n  rf_MHz: 1452\n";
  const auto e = errors_of({}, p.string());
  CHECK_THAT(e, Catch::Matchers::ContainsSubstring("bad.yaml:"));
  CHECK_THAT(e, Catch::Matchers::ContainsSubstring("parse error"));
  fs::remove(p);
}

TEST_CASE("seed plan") {
  const auto a = seed_plan(1, 200), b = seed_plan(1, 200), c = seed_plan(2, 200);
  REQUIRE(a.size() == 200);
  std::set<std::pair<std::uint64_t, std::uint64_t>> pairs, other;
  for (std::size_t i = 0; i < a.size(); ++i) {
    CHECK(a[i].streams == b[i].streams);
    CHECK(a[i].seed == b[i].seed);
    for (auto s : a[i].streams) pairs.insert({a[i].seed, s});
    for (auto s : c[i].streams) other.insert({c[i].seed, s});
  }
  CHECK(pairs.size() == 600);
  for (const auto& p : other) CHECK(pairs.count(p) == 0);
  CHECK_THROWS_AS(seed_plan(1, 0), DomainError);
}

TEST_CASE("command line runs and re-runs from its manifest") {
  const char* exe = std::getenv("TRAPSIM_CLI");
  if (!exe) SKIP("TRAPSIM_CLI not set");
  const std::string cli = exe;
  CHECK(shell(cli + " list-presets > /dev/null") == 0);
  CHECK(shell(cli + " validate --preset snr-desk > /dev/null") == 0);
  CHECK(shell(cli + " validate --override resonator.Q=0 > /dev/null 2>&1") == 1);

  const auto a = scratch("run_a"), b = scratch("run_b");
  const std::string opts = " --preset bursts --override run.burst_samples=20000 --override run.burst_series_length=50";
  REQUIRE(shell(cli + " run" + opts + " --seed 4 --out " + a.string() + " > /dev/null") == 0);
  REQUIRE(fs::exists(a / "manifest.json"));
  REQUIRE(shell(cli + " run --config " + (a / "manifest.json").string() + " --out " + b.string() +
                " > /dev/null") == 0);
  std::size_t compared = 0;
  for (const auto& e : fs::directory_iterator(a)) {
    const auto name = e.path().filename();
    if (name == "manifest.json") continue;
    INFO(name);
    CHECK(slurp(e.path()) == slurp(b / name));
    ++compared;
  }
  CHECK(compared >= 3);
  const auto m = nlohmann::json::parse(slurp(b / "manifest.json"));
  CHECK(m["seed"] == 4);
  CHECK(m["status"] == 0);
  fs::remove_all(a);
  fs::remove_all(b);
}

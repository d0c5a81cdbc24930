#include "atvi/config.hpp"

#include <fstream>

#include "atvi/runner.hpp"
#include "doctest.h"

using namespace atvi;
using namespace atvi::config;

TEST_SUITE_BEGIN("config");

namespace {

const char* kGood = R"(
# run configuration
[target]
name = "sir"
data = "data.csv"

[method]
name = "atvi"

[flow]
knots = 8
layers_per_block = 10

[surjection]
r_frac = 0.05

[ladder]
temperatures = [3.0, 1.0]

[train]
m = 100
lr = 3e-3

[seed]
value = 7
)";

}  // namespace

TEST_CASE("parse and resolve a full config") {
  const auto cfg = RunConfig::from_toml(Toml::parse(kGood));
  CHECK(cfg.target == TargetKind::sir);
  CHECK(cfg.data_path == "data.csv");
  CHECK(cfg.method == Method::atvi);
  CHECK(cfg.ladder == std::vector<double>{3.0, 1.0});
  CHECK(cfg.seed == 7);
  CHECK(cfg.train.batch == 100);
  CHECK(cfg.train.lr == 3e-3);
  CHECK(cfg.flow_hidden == 32);  // default
}

TEST_CASE("resolved snapshot is deterministic and re-parseable") {
  const auto cfg = RunConfig::from_toml(Toml::parse(kGood));
  const std::string snap1 = cfg.to_toml();
  const std::string snap2 = cfg.to_toml();
  CHECK(snap1 == snap2);
  const auto back = RunConfig::from_toml(Toml::parse(snap1));
  CHECK(back.to_toml() == snap1);
}

TEST_CASE("schema violations are rejected") {
  CHECK_THROWS_AS(RunConfig::from_toml(Toml::parse("[target]\nname = \"sir\"\n[nonsense]\nx = 1\n")),
                  ConfigError);
  CHECK_THROWS_AS(RunConfig::from_toml(Toml::parse("[train]\nbogus_key = 1\n")), ConfigError);
  CHECK_THROWS_AS(RunConfig::from_toml(Toml::parse("[target]\nname = \"unknown\"\n")), ConfigError);
  CHECK_THROWS_AS(RunConfig::from_toml(Toml::parse("[train]\nm = 1.5\n")), ConfigError);
}

TEST_CASE("increasing temperature ladders are rejected") {
  CHECK_THROWS(RunConfig::from_toml(Toml::parse("[ladder]\ntemperatures = [1.0, 3.0]\n")));
  CHECK_THROWS(RunConfig::from_toml(Toml::parse("[ladder]\ntemperatures = [3.0, 2.0]\n")));
}

TEST_CASE("mcmc settings are validated") {
  CHECK_THROWS(RunConfig::from_toml(Toml::parse("[mcmc]\nn_iter = 100\nburn_in = 200\n")));
}

TEST_CASE("toml subset details") {
  const auto t = Toml::parse("[a]\nx = 1 # comment\ns = \"hash # inside\"\narr = [1, 2, 3]\nflag = true\n");
  CHECK(t.number("a", "x") == 1.0);
  CHECK(t.text("a", "s") == "hash # inside");
  CHECK(t.numbers("a", "arr") == std::vector<double>{1.0, 2.0, 3.0});
  CHECK(t.boolean_or("a", "flag", false));
  CHECK_THROWS_AS(Toml::parse("x = 1\n"), ConfigError);       // key outside section
  CHECK_THROWS_AS(Toml::parse("[a]\nx 1\n"), ConfigError);    // missing equals
  CHECK_THROWS_AS(Toml::parse("[a]\nx = oops\n"), ConfigError);
  CHECK_THROWS(Toml::parse_file("does_not_exist.toml"));
}

TEST_CASE("threads env parsing") {
  CHECK(runner::threads_from_env() >= 1);
}

TEST_SUITE_END();

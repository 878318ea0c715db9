#include <catch2/catch_amalgamated.hpp>

#include <sys/wait.h>

#include <cstdio>
#include <cstdlib>
#include <string>

#include <nlohmann/json.hpp>

#include "helpers.hpp"
#include "rmpw/data.hpp"
#include "rmpw/simulation.hpp"

namespace {

struct CliRun {
  int code = -1;
  std::string out;
  std::string err;
};

CliRun cli(const std::string& args) {
  const std::string out_path = testutil::temp_path("stdout.txt");
  const std::string err_path = testutil::temp_path("stderr.txt");
  const std::string cmd = std::string(RMPW_CLI_PATH) + " " + args + " > " +
                          out_path + " 2> " + err_path;
  const int raw = std::system(cmd.c_str());
  CliRun r;
  r.code = WIFEXITED(raw) ? WEXITSTATUS(raw) : -1;
  r.out = testutil::slurp(out_path);
  r.err = testutil::slurp(err_path);
  return r;
}

// Formats a double exactly as the text renderer does.
std::string printed(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.6g", v);
  return buf;
}

// One generated dataset shared by the happy-path sections.
const std::string& fixture_csv() {
  static const std::string path = [] {
    const rmpw::Scenario sc = rmpw::load_scenario(
        std::string(RMPW_SCENARIO_DIR) + "/basic_interaction.json");
    const auto g = rmpw::generate(sc, 400, 3);
    const std::string p = testutil::temp_path("fixture.csv");
    rmpw::write_csv(p, g.data);
    return p;
  }();
  return path;
}

}  // namespace

TEST_CASE("usage errors exit with code 1") {
  CHECK(cli("--help").code == 0);
  CHECK_THAT(cli("--help").out, Catch::Matchers::ContainsSubstring("estimate"));
  CHECK_THAT(cli("--help").out, Catch::Matchers::ContainsSubstring("simulate"));

  const auto none = cli("");
  CHECK(none.code == 1);
  CHECK_FALSE(none.err.empty());

  const auto nodata = cli("estimate");
  CHECK(nodata.code == 1);
  CHECK_THAT(nodata.err, Catch::Matchers::ContainsSubstring("--data"));

  const auto badflag = cli("estimate --data x.csv --weight-method banana");
  CHECK(badflag.code == 1);
}

TEST_CASE("configuration and data errors are told apart") {
  SECTION("an out-of-range stratum count is configuration") {
    const auto r = cli("estimate --data " + fixture_csv() +
                       " --covariates x --randomized --strata 50");
    CHECK(r.code == 1);
    CHECK_THAT(r.err, Catch::Matchers::ContainsSubstring("error (config)"));
    CHECK_THAT(r.err, Catch::Matchers::ContainsSubstring("stratum count"));
  }
  SECTION("a missing input file is data") {
    const auto r = cli("estimate --data /nonexistent/q.csv --randomized");
    CHECK(r.code == 2);
    CHECK_THAT(r.err, Catch::Matchers::ContainsSubstring("error (data)"));
  }
  SECTION("an empty arm fails the positivity gate") {
    const auto p = testutil::write_file(
        "one_arm.csv", "a,z,y\n1,0,1.5\n1,1,2\n1,0,0.5\n1,1,1\n");
    const auto r = cli("estimate --data " + p + " --randomized");
    CHECK(r.code == 2);
    CHECK_THAT(r.err,
               Catch::Matchers::ContainsSubstring("treatment positivity"));
  }
}

TEST_CASE("estimate writes a self-describing report") {
  const std::string json_path = testutil::temp_path("report.json");
  const auto r = cli("estimate --data " + fixture_csv() +
                     " --covariates x --randomized --weight-method parametric"
                     " --seed 7 --out " + json_path);
  REQUIRE(r.code == 0);

  const auto j = nlohmann::json::parse(testutil::slurp(json_path));
  CHECK(j.at("schema_version") == 1);
  CHECK(j.at("config").at("weight_method") == "parametric");
  CHECK(j.at("config").at("randomized") == true);
  CHECK(j.at("config").at("seed") == 7);
  CHECK(j.at("config").at("se_method") == "robust");
  CHECK(j.at("data").at("n") == 400);

  const auto& eff = j.at("estimates").at("effects");
  const double direct = eff.at("direct").at("estimate").get<double>();
  const double mediated = eff.at("mediated").at("estimate").get<double>();
  // Generated from a design whose direct effect is 1.3 and mediated
  // effect 1.2; n = 400 keeps estimates within a few tenths.
  CHECK(direct == Catch::Approx(1.3).margin(0.5));
  CHECK(mediated == Catch::Approx(1.2).margin(0.5));
  CHECK(eff.at("direct").at("se").get<double>() > 0.0);

  SECTION("the text output quotes the JSON numbers") {
    CHECK_THAT(r.out, Catch::Matchers::ContainsSubstring(printed(direct)));
    CHECK_THAT(r.out, Catch::Matchers::ContainsSubstring(printed(mediated)));
  }
  SECTION("diagnose reports weights but no effects") {
    const std::string diag_path = testutil::temp_path("diag.json");
    const auto d = cli("diagnose --data " + fixture_csv() +
                       " --covariates x --randomized"
                       " --weight-method parametric --out " + diag_path);
    REQUIRE(d.code == 0);
    const auto dj = nlohmann::json::parse(testutil::slurp(diag_path));
    CHECK(dj.contains("weights"));
    CHECK_FALSE(dj.contains("estimates"));
  }
}

TEST_CASE("bootstrap runs are reproducible byte for byte") {
  const std::string base = "estimate --data " + fixture_csv() +
                           " --covariates x --randomized"
                           " --weight-method parametric --se bootstrap"
                           " --bootstrap-reps 120 --seed 7";
  const std::string p1 = testutil::temp_path("boot1.json");
  const std::string p2 = testutil::temp_path("boot2.json");
  const std::string p3 = testutil::temp_path("boot3.json");
  REQUIRE(cli(base + " --out " + p1).code == 0);
  REQUIRE(cli(base + " --out " + p2).code == 0);
  REQUIRE(cli(base + " --threads 2 --out " + p3).code == 0);
  const auto b1 = testutil::slurp(p1);
  CHECK(b1 == testutil::slurp(p2));
  CHECK(b1 == testutil::slurp(p3));
  const auto j = nlohmann::json::parse(b1);
  CHECK(j.at("config").at("se_method") == "bootstrap");
  CHECK(j.at("estimates").at("bootstrap").at("failed") == 0);
}

TEST_CASE("simulate runs a small replication study") {
  const std::string scenario =
      std::string(RMPW_SCENARIO_DIR) + "/basic_interaction.json";
  const std::string base = "simulate --scenario " + scenario +
                           " --reps 10 --n 300 --estimators stratified,path"
                           " --seed 5";
  const std::string p1 = testutil::temp_path("study1.json");
  const std::string p2 = testutil::temp_path("study2.json");
  const auto r1 = cli(base + " --out " + p1);
  REQUIRE(r1.code == 0);
  REQUIRE(cli(base + " --out " + p2).code == 0);
  CHECK(testutil::slurp(p1) == testutil::slurp(p2));

  const auto j = nlohmann::json::parse(testutil::slurp(p1));
  CHECK(j.at("reps") == 10);
  CHECK(j.at("truth").at("exact") == true);
  REQUIRE(j.at("estimators").size() == 2);
  CHECK(j.at("estimators")[0].at("label") == "stratified(k=5)");
  CHECK(j.at("estimators")[1].at("label") == "path-analysis");
  // The rendered text goes to stdout and, with --out, to a file too.
  CHECK(r1.out == testutil::slurp(p1 + ".txt"));

  SECTION("estimator tokens are validated") {
    const auto bad = cli("simulate --scenario " + scenario +
                         " --reps 10 --n 100 --estimators warp");
    CHECK(bad.code == 1);
    CHECK_THAT(bad.err,
               Catch::Matchers::ContainsSubstring("unknown estimator 'warp'"));
  }
  SECTION("scenario typos are caught and named") {
    const auto p = testutil::write_file("typo.json", R"({
      "name": "typo",
      "covariates": [{ "name": "x", "dist": "bernoulli", "p": 0.5 }],
      "treatment": { "randomized": true, "p": 0.5 },
      "mediator": {
        "control": { "intercept": -0.4 },
        "treated": { "intercept": 0.3 }
      },
      "outcome": { "family": "gaussian", "intercept": 0.0, "treatment": 1.0,
                   "mediator": 1.0, "interaction": 0.0, "sgima": 1.0 }
    })");
    const auto r = cli("simulate --scenario " + p + " --reps 10 --n 100");
    CHECK(r.code == 1);
    CHECK_THAT(r.err, Catch::Matchers::ContainsSubstring("unknown key 'sgima'"));
  }
}

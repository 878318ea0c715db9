#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <string>

#include "helpers.hpp"
#include "rmpw/report.hpp"
#include "rmpw/simulation.hpp"

using namespace rmpw;
using Catch::Matchers::ContainsSubstring;

namespace {

std::string scenario_path(const char* stem) {
  return std::string(RMPW_SCENARIO_DIR) + "/" + stem + ".json";
}

// Small noiseless scenario built in code: one Bernoulli covariate,
// randomized arms, no interaction.
Scenario flat_scenario() {
  Scenario sc;
  sc.name = "flat";
  CovariateSpec x;
  x.name = "x";
  x.p = 0.5;
  sc.covariates.push_back(x);
  sc.mediator_model[0] = {-0.4, {{"x", 0.5}}};
  sc.mediator_model[1] = {0.3, {{"x", 0.5}}};
  sc.outcome.intercept = 0.5;
  sc.outcome.treatment = 1.7;
  sc.outcome.mediator = 0.9;
  sc.outcome.interaction = 0.0;
  sc.outcome.sigma = 0.0;
  sc.seed = 4;
  return sc;
}

}  // namespace

TEST_CASE("exact truth by enumeration matches hand algebra") {
  const Scenario sc = load_scenario(scenario_path("basic_interaction"));
  const auto t = compute_truth_exact(sc);
  CHECK(t.exact);
  CHECK(t.ey_0z0 == Catch::Approx(1.6).margin(1e-12));
  CHECK(t.ey_1z0 == Catch::Approx(2.9).margin(1e-12));
  CHECK(t.ey_1z1 == Catch::Approx(4.1).margin(1e-12));
  CHECK(t.nde == Catch::Approx(1.3).margin(1e-12));
  CHECK(t.nie == Catch::Approx(1.2).margin(1e-12));
  CHECK(t.te == Catch::Approx(2.5).margin(1e-12));
  CHECK(t.nde + t.nie == Catch::Approx(t.te).margin(1e-12));
  CHECK(t.se_nde == 0.0);

  SECTION("removing every treatment path zeroes the direct effect") {
    auto sc2 = sc;
    sc2.outcome.treatment = 0.0;
    sc2.outcome.interaction = 0.0;
    const auto t2 = compute_truth_exact(sc2);
    CHECK(t2.nde == Catch::Approx(0.0).margin(1e-12));
    CHECK(t2.nie > 0.0);
  }
  SECTION("equal mediator models zero the mediated effect") {
    auto sc2 = sc;
    sc2.mediator_model[1] = sc2.mediator_model[0];
    const auto t2 = compute_truth_exact(sc2);
    CHECK(t2.nie == Catch::Approx(0.0).margin(1e-12));
    CHECK(t2.nde > 0.0);
  }
}

TEST_CASE("generation is seeded, consistent, and respects the design") {
  const Scenario sc = load_scenario(scenario_path("basic_interaction"));

  SECTION("the same seed reproduces the draw exactly") {
    const auto g1 = generate(sc, 400, 9);
    const auto g2 = generate(sc, 400, 9);
    CHECK(g1.data.treatment == g2.data.treatment);
    CHECK(g1.data.mediator == g2.data.mediator);
    CHECK(g1.data.outcome == g2.data.outcome);
    CHECK(g1.potentials.y11 == g2.potentials.y11);
    const auto g3 = generate(sc, 400, 10);
    CHECK(g1.data.outcome != g3.data.outcome);
  }
  SECTION("observed rows agree with the potential table") {
    const auto g = generate(sc, 300, 21);
    const auto& pt = g.potentials;
    for (std::size_t i = 0; i < g.data.size(); ++i) {
      const int a = g.data.treatment[i];
      const int z = g.data.mediator[i];
      CHECK(z == (a == 1 ? pt.z1[i] : pt.z0[i]));
      const double y_table = a == 1 ? (z == 1 ? pt.y11[i] : pt.y10[i])
                                    : (z == 1 ? pt.y01[i] : pt.y00[i]);
      CHECK(g.data.outcome[i] == y_table);
    }
  }
  SECTION("without an interaction the unit-level gap is constant") {
    const auto g = generate(flat_scenario(), 200, 6);
    const auto& pt = g.potentials;
    for (std::size_t i = 0; i < pt.y00.size(); ++i) {
      CHECK(pt.y10[i] - pt.y00[i] == Catch::Approx(1.7).margin(1e-12));
      CHECK(pt.y11[i] - pt.y01[i] == Catch::Approx(1.7).margin(1e-12));
    }
  }
  SECTION("randomization hits its assignment probability") {
    const auto g = generate(sc, 10000, 11);
    double share = 0.0;
    for (int a : g.data.treatment) share += a;
    share /= static_cast<double>(g.data.size());
    CHECK(share == Catch::Approx(0.5).margin(0.02));
  }
}

TEST_CASE("Monte Carlo truth agrees with enumeration") {
  for (const char* stem : {"basic_interaction", "no_interaction",
                           "post_treatment", "post_treatment_confounded"}) {
    INFO("scenario " << stem);
    const Scenario sc = load_scenario(scenario_path(stem));
    const auto ex = compute_truth_exact(sc);
    const auto mc = compute_truth_mc(sc, 1000000, 77);
    CHECK_FALSE(mc.exact);
    CHECK(mc.mc_draws == 1000000);
    CHECK(mc.se_nde > 0.0);
    CHECK(std::abs(mc.nde - ex.nde) <= 4.0 * mc.se_nde);
    CHECK(std::abs(mc.nie - ex.nie) <= 4.0 * mc.se_nie);
    CHECK(std::abs(mc.te - ex.te) <= 4.0 * mc.se_te);
    CHECK(std::abs(mc.ey_1z0 - ex.ey_1z0) <= 4.0 * mc.se_ey_1z0);
  }
}

TEST_CASE("true scores evaluate the generating models") {
  SECTION("mediator scores follow the logistic models by covariate level") {
    const Scenario sc = load_scenario(scenario_path("basic_interaction"));
    const auto g = generate(sc, 60, 13);
    const auto s = true_scores(sc, g.data);
    CHECK(s.randomized);
    CHECK(s.marginal_treated == Catch::Approx(0.5).margin(1e-15));
    const auto& x = g.data.covariate("x");
    for (std::size_t i = 0; i < g.data.size(); ++i) {
      CHECK(s.theta_treat[i] == Catch::Approx(0.5).margin(1e-15));
      CHECK(s.theta_med[0][i] ==
            Catch::Approx(x[i] == 1.0 ? 0.4 : 0.2).margin(1e-12));
      CHECK(s.theta_med[1][i] ==
            Catch::Approx(x[i] == 1.0 ? 0.8 : 0.6).margin(1e-12));
    }
    CHECK_FALSE(s.has_post_scores);
  }
  SECTION("post-conditioned scores use the observed intermediate value") {
    const Scenario sc = load_scenario(scenario_path("post_treatment"));
    const auto g = generate(sc, 80, 14);
    const auto s = true_scores(sc, g.data);
    REQUIRE(s.has_post_scores);
    const auto& x = g.data.covariate("x");
    const auto& l = g.data.post_treatment_column("l");
    for (std::size_t i = 0; i < g.data.size(); ++i) {
      // Control scores never involve the intermediate variable here.
      CHECK(s.theta_med[0][i] ==
            Catch::Approx(inv_logit(-1.0 + 0.6 * x[i])).margin(1e-12));
      if (g.data.treatment[i] == 1) {
        CHECK(s.theta_med_post[i] ==
              Catch::Approx(inv_logit(-0.2 + 0.5 * x[i] + 0.9 * l[i]))
                  .margin(1e-12));
        // The unconditional treated score averages over the L draw.
        const double pl = inv_logit(0.3 + 0.5 * x[i]);
        const double marg = pl * inv_logit(-0.2 + 0.5 * x[i] + 0.9) +
                            (1.0 - pl) * inv_logit(-0.2 + 0.5 * x[i]);
        CHECK(s.theta_med[1][i] == Catch::Approx(marg).margin(1e-12));
      } else {
        CHECK(std::isnan(s.theta_med_post[i]));
      }
    }
  }
}

TEST_CASE("scenario files are parsed strictly") {
  const std::string good = R"({
    "name": "tiny",
    "covariates": [{ "name": "x", "dist": "bernoulli", "p": 0.5 }],
    "treatment": { "randomized": true, "p": 0.5 },
    "mediator": {
      "control": { "intercept": -0.4, "coef": { "x": 0.5 } },
      "treated": { "intercept": 0.3, "coef": { "x": 0.5 } }
    },
    "outcome": { "family": "gaussian", "intercept": 0.0, "treatment": 1.0,
                 "mediator": 1.0, "interaction": 0.0, "sigma": 1.0 }
  })";
  CHECK(load_scenario(testutil::write_file("ok.json", good)).name == "tiny");

  auto expect_error = [&](const std::string& body, const char* needle) {
    const auto path = testutil::write_file("bad.json", body);
    REQUIRE_THROWS_WITH(load_scenario(path), ContainsSubstring(needle));
    try {
      load_scenario(path);
    } catch (const Error& e) {
      CHECK(e.kind() == ErrorKind::Config);
    }
  };

  SECTION("unknown keys are named") {
    std::string s = good;
    s.replace(s.find("\"sigma\""), 7, "\"sgima\"");
    expect_error(s, "unknown key 'sgima'");
  }
  SECTION("missing blocks are named") {
    std::string s = good;
    const auto at = s.find("\"treatment\": { \"randomized\": true, \"p\": 0.5 },");
    s.erase(at, s.find('\n', at) - at);
    expect_error(s, "missing key 'treatment'");
  }
  SECTION("sigma is rejected for binomial outcomes") {
    std::string s = good;
    s.replace(s.find("gaussian"), 8, "binomial");
    expect_error(s, "'sigma' applies only to the gaussian");
  }
  SECTION("a randomized treatment cannot carry a model") {
    std::string s = good;
    s.replace(s.find("\"randomized\": true, \"p\": 0.5"),
              std::string("\"randomized\": true, \"p\": 0.5").size(),
              "\"randomized\": true, \"p\": 0.5, "
              "\"model\": { \"intercept\": 0.0 }");
    expect_error(s, "randomized treatment takes no 'model'");
  }
  SECTION("near-degenerate mediator models are flagged with the probe point") {
    std::string s = good;
    s.replace(s.find("\"intercept\": 0.3"), 16, "\"intercept\": 6.0");
    expect_error(s, "mediator positivity fails in arm 1");
    expect_error(s, "x=0");
  }
  SECTION("model terms must reference declared variables") {
    std::string s = good;
    s.replace(s.find("{ \"x\": 0.5 } },\n      \"treated\""),
              std::string("{ \"x\": 0.5 } },").size(),
              "{ \"x\": 0.5, \"w\": 1.0 } },");
    expect_error(s, "unknown variable 'w'");
  }
  SECTION("broken JSON names the file") {
    expect_error("{ \"name\": ", "not valid JSON");
  }
}

TEST_CASE("replication studies aggregate and reproduce") {
  const Scenario sc = load_scenario(scenario_path("basic_interaction"));

  SECTION("the oracle estimator has zero bias, zero spread, full coverage") {
    EstimatorSpec oracle;
    oracle.kind = EstimatorSpec::Kind::Oracle;
    const auto rep = run_study(sc, {oracle}, 40, 50, 3);
    REQUIRE(rep.configs.size() == 1);
    const auto& cs = rep.configs[0];
    CHECK(cs.failures == 0);
    CHECK(cs.nde.mean_bias == Catch::Approx(0.0).margin(1e-14));
    CHECK(cs.nde.sd == Catch::Approx(0.0).margin(1e-14));
    CHECK(cs.nie.rmse == Catch::Approx(0.0).margin(1e-14));
    CHECK(cs.te.coverage == 1.0);
  }
  SECTION("reports are identical across runs and thread counts") {
    EstimatorSpec strat;
    strat.kind = EstimatorSpec::Kind::RmpwStratified;
    strat.strata = 4;
    EstimatorSpec path;
    path.kind = EstimatorSpec::Kind::PathAnalysis;
    const auto r1 = run_study(sc, {strat, path}, 20, 150, 5, 1);
    const auto r2 = run_study(sc, {strat, path}, 20, 150, 5, 1);
    const auto r4 = run_study(sc, {strat, path}, 20, 150, 5, 4);
    const auto d1 = build_study_json(r1).dump();
    CHECK(d1 == build_study_json(r2).dump());
    CHECK(d1 == build_study_json(r4).dump());
    CHECK(r1.configs[0].label == "stratified(k=4)");
    CHECK(r1.configs[1].label == "path-analysis");
  }
  SECTION("a study needs at least two replicates") {
    EstimatorSpec oracle;
    oracle.kind = EstimatorSpec::Kind::Oracle;
    REQUIRE_THROWS_WITH(run_study(sc, {oracle}, 1, 50, 3),
                        ContainsSubstring("at least 2 replicates"));
  }
}

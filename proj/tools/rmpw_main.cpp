// rmpw: ratio-of-mediator-probability weighting for natural direct and
// indirect effects of a binary treatment through a binary mediator.
//
// Exit codes: 0 success, 1 usage or configuration error, 2 data or
// numeric error.

#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "rmpw/rmpw.hpp"

namespace {

struct CommonArgs {
  std::string data_path;
  std::string id_col;
  std::string treatment_col = "a";
  std::string mediator_col = "z";
  std::string outcome_col = "y";
  std::vector<std::string> covariates;
  std::vector<std::string> post_treatment;
  std::string weight_method = "stratified";
  int strata = 5;
  bool randomized = false;
  std::string family = "gaussian";
  std::string se = "robust";
  int bootstrap_reps = 1000;
  std::uint64_t seed = 0;
  int threads = 1;
  std::string out_path;
  double truncate = 0.0;
  bool normalize = false;
  bool outcome_covariates = false;
  std::string iptw_factor = "match-method";
  std::string treatment_terms;
  std::string mediator_terms;
};

void add_data_flags(CLI::App* cmd, CommonArgs& a) {
  cmd->add_option("--data", a.data_path, "input CSV file")->required();
  cmd->add_option("--id", a.id_col, "unit id column (default: row numbers)");
  cmd->add_option("--treatment", a.treatment_col, "treatment column (0/1)")
      ->capture_default_str();
  cmd->add_option("--mediator", a.mediator_col, "mediator column (0/1)")
      ->capture_default_str();
  cmd->add_option("--outcome", a.outcome_col, "outcome column")
      ->capture_default_str();
  cmd->add_option("--covariates", a.covariates, "covariate columns")
      ->delimiter(',');
  cmd->add_option("--post-treatment", a.post_treatment,
                  "post-treatment columns; providing them switches the "
                  "treated-arm mediator model to condition on them")
      ->delimiter(',');
}

void add_analysis_flags(CLI::App* cmd, CommonArgs& a) {
  cmd->add_option("--weight-method", a.weight_method,
                  "mediator-probability construction")
      ->check(CLI::IsMember({"stratified", "parametric"}))
      ->capture_default_str();
  cmd->add_option("--strata", a.strata, "stratum count for stratified scores")
      ->capture_default_str();
  cmd->add_flag("--randomized", a.randomized,
                "treatment is randomized; skip the treatment-probability factor");
  cmd->add_option("--family", a.family, "outcome family")
      ->check(CLI::IsMember({"gaussian", "binomial"}))
      ->capture_default_str();
  cmd->add_option("--iptw-factor", a.iptw_factor,
                  "treatment-probability factor construction")
      ->check(CLI::IsMember({"match-method", "parametric", "stratified"}))
      ->capture_default_str();
  cmd->add_option("--truncate", a.truncate,
                  "cap weights at this upper quantile (0 = off)")
      ->capture_default_str();
  cmd->add_flag("--normalize", a.normalize, "rescale each weight set to mean 1");
  cmd->add_flag("--outcome-covariates", a.outcome_covariates,
                "add covariate main effects to the outcome model (precision "
                "aid; coefficient-to-mean identities become model-based)");
  cmd->add_option("--treatment-terms", a.treatment_terms,
                  "treatment model terms (comma list; 'x1:x2' for a product; "
                  "default: covariate main effects)");
  cmd->add_option("--mediator-terms", a.mediator_terms,
                  "mediator model terms (same language)");
}

rmpw::VariableRoles make_roles(const CommonArgs& a) {
  rmpw::VariableRoles roles;
  roles.id = a.id_col;
  roles.treatment = a.treatment_col;
  roles.mediator = a.mediator_col;
  roles.outcome = a.outcome_col;
  roles.covariates = a.covariates;
  roles.post_treatment = a.post_treatment;
  return roles;
}

rmpw::AnalysisConfig make_config(const CommonArgs& a) {
  rmpw::AnalysisConfig cfg;
  cfg.weight_method = a.weight_method == "parametric"
                          ? rmpw::WeightRule::Parametric
                          : rmpw::WeightRule::Stratified;
  cfg.strata = a.strata;
  cfg.randomized = a.randomized;
  cfg.use_post_treatment = !a.post_treatment.empty();
  cfg.family = a.family == "binomial" ? rmpw::Family::BinomialLogit
                                      : rmpw::Family::Gaussian;
  cfg.se_method = a.se == "bootstrap" ? rmpw::SeMethod::Bootstrap
                                      : rmpw::SeMethod::Robust;
  cfg.bootstrap_reps = a.bootstrap_reps;
  cfg.seed = a.seed;
  cfg.threads = a.threads;
  cfg.truncate_quantile = a.truncate;
  cfg.normalize_weights = a.normalize;
  cfg.outcome_covariates = a.outcome_covariates;
  cfg.treatment_terms = a.treatment_terms;
  cfg.mediator_terms = a.mediator_terms;
  if (a.iptw_factor == "parametric")
    cfg.iptw_factor = rmpw::IptwFactorRule::Parametric;
  else if (a.iptw_factor == "stratified")
    cfg.iptw_factor = rmpw::IptwFactorRule::Stratified;
  return cfg;
}

void write_file(const std::string& path, const std::string& content) {
  std::ofstream out(path);
  if (!out) rmpw::throw_config("cannot write to '" + path + "'");
  out << content;
  if (!out) rmpw::throw_config("write to '" + path + "' failed");
}

int run_estimate(const CommonArgs& a, bool diagnostics_only) {
  const rmpw::Dataset ds = rmpw::load_csv(a.data_path, make_roles(a));
  const rmpw::AnalysisConfig cfg = make_config(a);
  nlohmann::json report;
  if (diagnostics_only) {
    const rmpw::PipelineResult res = rmpw::run_pipeline(
        ds, cfg, nullptr, rmpw::PipelineStage::DiagnosticsOnly);
    report = rmpw::build_report_json(ds, cfg, res);
  } else if (cfg.se_method == rmpw::SeMethod::Bootstrap) {
    const rmpw::BootstrapResult boot = rmpw::run_bootstrap(ds, cfg);
    report = rmpw::build_report_json(ds, cfg, boot.base, &boot);
  } else {
    const rmpw::PipelineResult res = rmpw::run_pipeline(ds, cfg);
    report = rmpw::build_report_json(ds, cfg, res);
  }
  std::cout << rmpw::render_report_text(report);
  if (!a.out_path.empty()) write_file(a.out_path, report.dump(2) + "\n");
  return 0;
}

struct SimulateArgs {
  std::string scenario_path;
  std::vector<std::string> estimators = {"stratified", "parametric", "path",
                                         "regression-impute"};
  std::size_t reps = 500;
  std::size_t n = 2000;
  std::uint64_t seed = 0;
  bool seed_given = false;
  int strata = 5;
  int threads = 1;
  std::string out_path;
};

// Estimator tokens: a base name with optional ':'-separated modifiers.
// Bases: parametric, stratified, path, regression-impute, oracle.
// Modifiers (weighting bases only): true (scenario-true scores), post
// (condition the treated mediator model on the post-treatment variable).
rmpw::EstimatorSpec parse_estimator(const std::string& token, int strata) {
  rmpw::EstimatorSpec spec;
  spec.strata = strata;
  std::vector<std::string> parts;
  std::string cur;
  for (char c : token) {
    if (c == ':') {
      parts.push_back(cur);
      cur.clear();
    } else {
      cur += c;
    }
  }
  parts.push_back(cur);
  const std::string& base = parts.front();
  if (base == "parametric") {
    spec.kind = rmpw::EstimatorSpec::Kind::RmpwParametric;
  } else if (base == "stratified") {
    spec.kind = rmpw::EstimatorSpec::Kind::RmpwStratified;
  } else if (base == "path") {
    spec.kind = rmpw::EstimatorSpec::Kind::PathAnalysis;
  } else if (base == "regression-impute") {
    spec.kind = rmpw::EstimatorSpec::Kind::RegressionImpute;
  } else if (base == "oracle") {
    spec.kind = rmpw::EstimatorSpec::Kind::Oracle;
  } else {
    rmpw::throw_config("unknown estimator '" + base +
                       "'; expected parametric, stratified, path, "
                       "regression-impute, or oracle");
  }
  for (std::size_t k = 1; k < parts.size(); ++k) {
    const std::string& mod = parts[k];
    const bool weighting = spec.kind == rmpw::EstimatorSpec::Kind::RmpwParametric ||
                           spec.kind == rmpw::EstimatorSpec::Kind::RmpwStratified;
    if (!weighting)
      rmpw::throw_config("estimator '" + base + "' takes no ':" + mod +
                         "' modifier");
    if (mod == "true")
      spec.true_scores = true;
    else if (mod == "post")
      spec.use_post = true;
    else
      rmpw::throw_config("unknown estimator modifier ':" + mod +
                         "'; expected :true or :post");
  }
  return spec;
}

int run_simulate(const SimulateArgs& a) {
  const rmpw::Scenario sc = rmpw::load_scenario(a.scenario_path);
  std::vector<rmpw::EstimatorSpec> specs;
  for (const auto& token : a.estimators)
    specs.push_back(parse_estimator(token, a.strata));
  const std::uint64_t seed = a.seed_given ? a.seed : sc.seed;
  const rmpw::StudyReport report =
      rmpw::run_study(sc, specs, a.reps, a.n, seed, a.threads);
  const nlohmann::json j = rmpw::build_study_json(report);
  const std::string text = rmpw::render_study_text(j);
  std::cout << text;
  if (!a.out_path.empty()) {
    write_file(a.out_path, j.dump(2) + "\n");
    write_file(a.out_path + ".txt", text);
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{
      "rmpw: natural direct and indirect effects of a binary treatment "
      "through a binary mediator, via ratio-of-mediator-probability "
      "weighting"};
  app.require_subcommand(1);

  CommonArgs est_args;
  CLI::App* est = app.add_subcommand(
      "estimate", "fit weights and estimate effects from a CSV dataset");
  add_data_flags(est, est_args);
  add_analysis_flags(est, est_args);
  est->add_option("--se", est_args.se, "standard-error method")
      ->check(CLI::IsMember({"robust", "bootstrap"}))
      ->capture_default_str();
  est->add_option("--bootstrap-reps", est_args.bootstrap_reps,
                  "bootstrap replicate count")
      ->capture_default_str();
  est->add_option("--seed", est_args.seed, "master RNG seed")
      ->capture_default_str();
  est->add_option("--threads", est_args.threads, "bootstrap worker threads")
      ->capture_default_str();
  est->add_option("--out", est_args.out_path, "write the JSON report here");

  CommonArgs diag_args;
  CLI::App* diag = app.add_subcommand(
      "diagnose",
      "validation, score, weight, and balance diagnostics without estimation");
  add_data_flags(diag, diag_args);
  add_analysis_flags(diag, diag_args);
  diag->add_option("--out", diag_args.out_path, "write the JSON report here");

  SimulateArgs sim_args;
  CLI::App* sim = app.add_subcommand(
      "simulate", "replication study on a scenario file");
  sim->add_option("--scenario", sim_args.scenario_path, "scenario JSON file")
      ->required();
  sim->add_option("--estimators", sim_args.estimators,
                  "estimator tokens: parametric, stratified, path, "
                  "regression-impute, oracle; weighting bases accept :true "
                  "(scenario-true scores) and :post modifiers")
      ->delimiter(',')
      ->capture_default_str();
  sim->add_option("--reps", sim_args.reps, "replicate count")
      ->capture_default_str();
  sim->add_option("--n", sim_args.n, "sample size per replicate")
      ->capture_default_str();
  CLI::Option* seed_opt =
      sim->add_option("--seed", sim_args.seed,
                      "master RNG seed (default: the scenario's own seed)");
  sim->add_option("--strata", sim_args.strata,
                  "stratum count for stratified estimators")
      ->capture_default_str();
  sim->add_option("--threads", sim_args.threads, "replicate worker threads")
      ->capture_default_str();
  sim->add_option("--out", sim_args.out_path,
                  "write the JSON report here (text alongside as .txt)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    // CLI11 returns 0 for --help; anything else is a usage error.
    return code == 0 ? 0 : 1;
  }

  try {
    if (est->parsed()) return run_estimate(est_args, false);
    if (diag->parsed()) return run_estimate(diag_args, true);
    sim_args.seed_given = seed_opt->count() > 0;
    return run_simulate(sim_args);
  } catch (const rmpw::Error& e) {
    std::cerr << "error (" << rmpw::error_kind_name(e.kind()) << "): "
              << e.what() << "\n";
    return e.kind() == rmpw::ErrorKind::Config ? 1 : 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
}

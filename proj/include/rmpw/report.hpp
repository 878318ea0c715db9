#pragma once

// Report assembly. The JSON document is the single source of numbers:
// the text renderers read values back out of the JSON, so a printed
// figure can never drift from the machine-readable one. Keys serialize
// sorted and no timestamps or environment details are recorded, which
// keeps byte-identical reruns possible.

#include <cmath>
#include <cstdio>
#include <iomanip>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "rmpw/pipeline.hpp"
#include "rmpw/simulation.hpp"

namespace rmpw {

constexpr int kSchemaVersion = 1;

namespace detail {

inline nlohmann::json json_number(double v) {
  if (std::isnan(v) || std::isinf(v)) return nullptr;
  return v;
}

inline std::string fmt_num(double v) {
  if (std::isnan(v)) return "n/a";
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.6g", v);
  return buf;
}

inline std::string fmt_json_num(const nlohmann::json& j) {
  if (j.is_null()) return "n/a";
  return fmt_num(j.get<double>());
}

inline nlohmann::json param_json(const ParamEstimate& p) {
  nlohmann::json j;
  j["estimate"] = json_number(p.estimate);
  j["se"] = json_number(p.se);
  j["ci_lower"] = json_number(p.ci_lower);
  j["ci_upper"] = json_number(p.ci_upper);
  return j;
}

inline nlohmann::json glm_json(const GlmFit& fit) {
  nlohmann::json coef = nlohmann::json::object();
  for (std::size_t j = 0; j < fit.names.size(); ++j)
    coef[fit.names[j]] = json_number(fit.coefficients[j]);
  nlohmann::json out;
  out["family"] = family_name(fit.family);
  out["coefficients"] = coef;
  out["converged"] = fit.converged;
  out["iterations"] = fit.iterations;
  out["deviance"] = json_number(fit.deviance);
  return out;
}

inline nlohmann::json strata_json(const StratumAssignment& s) {
  nlohmann::json j;
  j["basis"] = s.basis;
  j["requested"] = s.requested;
  j["n_strata"] = s.n_strata;
  j["cutpoints"] = nlohmann::json::array();
  for (double c : s.cutpoints) j["cutpoints"].push_back(json_number(c));
  j["notes"] = s.notes;
  return j;
}

inline nlohmann::json weight_set_json(const WeightSummary& w,
                                      const std::vector<std::string>& names) {
  nlohmann::json j;
  j["label"] = w.label;
  j["a"] = w.a;
  j["a_prime"] = w.a_prime;
  j["method"] = weight_method_name(w.method);
  j["n_defined"] = w.n_defined;
  j["n_excluded"] = w.n_excluded;
  j["min"] = json_number(w.min);
  j["q25"] = json_number(w.q25);
  j["median"] = json_number(w.median);
  j["q75"] = json_number(w.q75);
  j["max"] = json_number(w.max);
  j["mean"] = json_number(w.mean);
  j["ess"] = json_number(w.ess);
  j["mediator_mean"] = json_number(w.mediator_mean);
  nlohmann::json means = nlohmann::json::object();
  nlohmann::json diffs = nlohmann::json::object();
  for (std::size_t k = 0; k < w.covariate_means.size(); ++k) {
    means[names[k]] = json_number(w.covariate_means[k]);
    diffs[names[k]] = json_number(w.std_diff_vs_sample[k]);
  }
  j["covariate_means"] = means;
  j["std_diff_vs_sample"] = diffs;
  return j;
}

}  // namespace detail

// Configuration echo. Every analysis-relevant knob appears, so a report
// is self-describing without the command line that produced it.
inline nlohmann::json config_json(const AnalysisConfig& cfg) {
  nlohmann::json j;
  j["weight_method"] = weight_rule_name(cfg.weight_method);
  j["strata"] = cfg.strata;
  j["randomized"] = cfg.randomized;
  j["use_post_treatment"] = cfg.use_post_treatment;
  j["iptw_factor"] = iptw_factor_rule_name(cfg.iptw_factor);
  j["family"] = family_name(cfg.family);
  j["se_method"] = se_method_name(cfg.se_method);
  // The thread count is deliberately not echoed: results are identical
  // for any value, so it is an execution detail, not configuration.
  j["bootstrap_reps"] = cfg.bootstrap_reps;
  j["seed"] = cfg.seed;
  j["truncate_quantile"] = detail::json_number(cfg.truncate_quantile);
  j["normalize_weights"] = cfg.normalize_weights;
  j["treatment_terms"] = cfg.treatment_terms;
  j["mediator_terms"] = cfg.mediator_terms;
  j["outcome_covariates"] = cfg.outcome_covariates;
  return j;
}

// Full analysis report. `boot` adds bootstrap intervals when the run
// used resampling; the point estimates stay those of the full sample.
inline nlohmann::json build_report_json(const Dataset& ds, const AnalysisConfig& cfg,
                                        const PipelineResult& res,
                                        const BootstrapResult* boot = nullptr) {
  nlohmann::json j;
  j["schema_version"] = kSchemaVersion;
  j["tool"] = {{"name", "rmpw"}, {"version", kVersion}};
  j["config"] = config_json(cfg);

  {
    nlohmann::json d;
    d["n"] = res.validation.n;
    d["cells"] = {{"a0_z0", res.validation.cell_counts[0][0]},
                  {"a0_z1", res.validation.cell_counts[0][1]},
                  {"a1_z0", res.validation.cell_counts[1][0]},
                  {"a1_z1", res.validation.cell_counts[1][1]}};
    d["covariates"] = ds.covariate_names;
    d["post_treatment"] = ds.post_treatment_names;
    d["outcome_binary"] = ds.outcome_is_binary();
    j["data"] = d;
  }

  {
    nlohmann::json s;
    s["randomized"] = res.scores.randomized;
    s["marginal_treated"] = detail::json_number(res.scores.marginal_treated);
    s["treatment_model"] = res.scores.treatment_fit
                               ? detail::glm_json(*res.scores.treatment_fit)
                               : nlohmann::json(nullptr);
    s["mediator_model_control"] = res.scores.mediator_fit[0]
                                      ? detail::glm_json(*res.scores.mediator_fit[0])
                                      : nlohmann::json(nullptr);
    s["mediator_model_treated"] = res.scores.mediator_fit[1]
                                      ? detail::glm_json(*res.scores.mediator_fit[1])
                                      : nlohmann::json(nullptr);
    s["mediator_model_treated_post"] =
        res.scores.mediator_post_fit ? detail::glm_json(*res.scores.mediator_post_fit)
                                     : nlohmann::json(nullptr);
    j["scores"] = s;
  }

  {
    nlohmann::json st = nlohmann::json::object();
    if (res.strata_numerator)
      st["numerator"] = detail::strata_json(*res.strata_numerator);
    if (res.strata_denominator)
      st["denominator"] = detail::strata_json(*res.strata_denominator);
    if (res.strata_treatment)
      st["treatment"] = detail::strata_json(*res.strata_treatment);
    j["strata"] = st;
  }

  {
    nlohmann::json w;
    w["control_mediator_mean"] =
        detail::json_number(res.balance.control_mediator_mean);
    w["treated_mediator_mean"] =
        detail::json_number(res.balance.treated_mediator_mean);
    w["sets"] = nlohmann::json::array();
    for (const auto& set : res.balance.sets)
      w["sets"].push_back(
          detail::weight_set_json(set, res.balance.covariate_names));
    j["weights"] = w;
  }

  {
    nlohmann::json sup;
    sup["off_support"] = nlohmann::json::array();
    for (const auto& f : res.support.off_support) {
      sup["off_support"].push_back(
          {{"unit", ds.unit_ids[f.unit]},
           {"score", f.score},
           {"value", detail::json_number(f.value)},
           {"opposite_min", detail::json_number(f.opposite_min)},
           {"opposite_max", detail::json_number(f.opposite_max)}});
    }
    sup["empty_cells"] = nlohmann::json::array();
    for (const auto& f : res.support.empty_cells) {
      sup["empty_cells"].push_back({{"basis", f.basis},
                                    {"stratum", f.stratum},
                                    {"arm", f.arm},
                                    {"mediator", f.mediator}});
    }
    j["support"] = sup;
  }

  {
    // Unit-level exclusion list, capped to keep reports readable.
    nlohmann::json ex;
    std::vector<std::pair<std::string, std::string>> rows;
    auto collect = [&](const WeightSet& ws) {
      for (const auto& e : ws.exclusions)
        rows.emplace_back(ds.unit_ids[e.unit], e.reason);
    };
    collect(res.w00);
    collect(res.w10);
    collect(res.w11);
    ex["count"] = rows.size();
    constexpr std::size_t cap = 50;
    ex["units"] = nlohmann::json::array();
    for (std::size_t k = 0; k < rows.size() && k < cap; ++k)
      ex["units"].push_back({{"unit", rows[k].first}, {"reason", rows[k].second}});
    ex["truncated_listing"] = rows.size() > cap;
    j["exclusions"] = ex;
  }

  if (res.estimated) {
    const EffectEstimates& est = boot ? boot->estimates : res.estimates;
    nlohmann::json e;
    e["family"] = family_name(est.family);
    e["se_method"] = se_method_name(est.se_method);
    e["covariate_adjusted"] = est.covariate_adjusted;
    e["n_rows"] = est.n_rows;
    e["n_controls"] = est.n_controls;
    e["n_treated"] = est.n_treated;
    e["gamma"] = {{"g0", detail::param_json(est.gamma0)},
                  {"g1", detail::param_json(est.gamma1)},
                  {"g2", detail::param_json(est.gamma2)}};
    e["means"] = {
        {"y_control_mediator_control", detail::json_number(est.mean_y_0z0)},
        {"y_treated_mediator_control", detail::json_number(est.mean_y_1z0)},
        {"y_treated_mediator_treated", detail::json_number(est.mean_y_1z1)}};
    e["effects"] = {{"direct", detail::param_json(est.direct)},
                    {"mediated", detail::param_json(est.mediated)},
                    {"total", detail::param_json(est.total)}};
    if (boot) {
      e["bootstrap"] = {{"requested", boot->requested}, {"failed", boot->failed}};
    }
    j["estimates"] = e;
  }

  j["notes"] = res.notes;
  return j;
}

// Text rendering. Reads every number back out of the JSON document.
inline std::string render_report_text(const nlohmann::json& j) {
  using detail::fmt_json_num;
  std::ostringstream out;
  out << "ratio-of-mediator-probability weighting report\n";
  out << "==============================================\n\n";

  const auto& d = j.at("data");
  const auto& cells = d.at("cells");
  const std::size_t n0 = cells.at("a0_z0").get<std::size_t>() +
                         cells.at("a0_z1").get<std::size_t>();
  const std::size_t n1 = cells.at("a1_z0").get<std::size_t>() +
                         cells.at("a1_z1").get<std::size_t>();
  out << "data: " << d.at("n").get<std::size_t>() << " units (" << n0
      << " control, " << n1 << " treated)\n";
  out << "mediator cells: a=0: z=0 " << cells.at("a0_z0").get<std::size_t>()
      << ", z=1 " << cells.at("a0_z1").get<std::size_t>() << " | a=1: z=0 "
      << cells.at("a1_z0").get<std::size_t>() << ", z=1 "
      << cells.at("a1_z1").get<std::size_t>() << "\n";

  const auto& cfg = j.at("config");
  out << "weights: " << cfg.at("weight_method").get<std::string>();
  if (cfg.at("weight_method").get<std::string>() == "stratified")
    out << " (" << cfg.at("strata").get<int>() << " strata)";
  out << "; treatment "
      << (cfg.at("randomized").get<bool>() ? "randomized" : "modeled") << "\n";
  if (cfg.at("use_post_treatment").get<bool>())
    out << "post-treatment conditioning: on\n";
  out << "outcome family: " << cfg.at("family").get<std::string>()
      << "; standard errors: " << cfg.at("se_method").get<std::string>() << "\n\n";

  const auto& w = j.at("weights");
  out << "weight sets\n";
  out << "  " << std::left << std::setw(6) << "set" << std::setw(12) << "method"
      << std::right << std::setw(9) << "defined" << std::setw(9) << "excl"
      << std::setw(11) << "mean" << std::setw(11) << "ess" << std::setw(11)
      << "min" << std::setw(11) << "median" << std::setw(11) << "max" << "\n";
  for (const auto& set : w.at("sets")) {
    out << "  " << std::left << std::setw(6) << set.at("label").get<std::string>()
        << std::setw(12) << set.at("method").get<std::string>() << std::right
        << std::setw(9) << set.at("n_defined").get<std::size_t>() << std::setw(9)
        << set.at("n_excluded").get<std::size_t>() << std::setw(11)
        << fmt_json_num(set.at("mean")) << std::setw(11)
        << fmt_json_num(set.at("ess")) << std::setw(11)
        << fmt_json_num(set.at("min")) << std::setw(11)
        << fmt_json_num(set.at("median")) << std::setw(11)
        << fmt_json_num(set.at("max")) << "\n";
  }
  out << "\nmediator balance\n";
  out << "  observed mean, control arm: "
      << fmt_json_num(w.at("control_mediator_mean")) << "\n";
  out << "  observed mean, treated arm: "
      << fmt_json_num(w.at("treated_mediator_mean")) << "\n";
  for (const auto& set : w.at("sets"))
    out << "  weighted mean under " << set.at("label").get<std::string>() << ": "
        << fmt_json_num(set.at("mediator_mean")) << "\n";

  bool any_diff = false;
  for (const auto& set : w.at("sets"))
    any_diff = any_diff || !set.at("std_diff_vs_sample").empty();
  if (any_diff) {
    out << "\ncovariate balance (standardized difference vs full sample)\n";
    for (const auto& set : w.at("sets")) {
      out << "  " << set.at("label").get<std::string>() << ":";
      for (const auto& [name, val] : set.at("std_diff_vs_sample").items())
        out << " " << name << "=" << fmt_json_num(val);
      out << "\n";
    }
  }

  const auto& ex = j.at("exclusions");
  if (ex.at("count").get<std::size_t>() > 0) {
    out << "\nexcluded units: " << ex.at("count").get<std::size_t>() << "\n";
    for (const auto& u : ex.at("units"))
      out << "  " << u.at("unit").get<std::string>() << ": "
          << u.at("reason").get<std::string>() << "\n";
    if (ex.at("truncated_listing").get<bool>())
      out << "  (listing capped at 50 units)\n";
  }

  const auto& sup = j.at("support");
  if (!sup.at("off_support").empty() || !sup.at("empty_cells").empty()) {
    out << "\nsupport warnings\n";
    const auto& off = sup.at("off_support");
    if (!off.empty()) {
      out << "  units whose score lies outside the other arm's range: "
          << off.size() << "\n";
      constexpr std::size_t cap = 20;
      for (std::size_t k = 0; k < off.size() && k < cap; ++k) {
        const auto& f = off[k];
        out << "    unit " << f.at("unit").get<std::string>() << ": "
            << f.at("score").get<std::string>() << " = "
            << fmt_json_num(f.at("value")) << " outside ["
            << fmt_json_num(f.at("opposite_min")) << ", "
            << fmt_json_num(f.at("opposite_max")) << "]\n";
      }
      if (off.size() > cap) out << "    (listing capped at 20 units)\n";
    }
    for (const auto& f : sup.at("empty_cells"))
      out << "  " << f.at("basis").get<std::string>() << " stratum "
          << f.at("stratum").get<int>() << ", arm " << f.at("arm").get<int>()
          << ": no units with mediator=" << f.at("mediator").get<int>() << "\n";
  }

  if (j.contains("estimates")) {
    const auto& e = j.at("estimates");
    auto line = [&](const char* name, const nlohmann::json& p) {
      out << "  " << std::left << std::setw(26) << name << std::right
          << std::setw(11) << fmt_json_num(p.at("estimate"));
      if (!p.at("se").is_null()) out << "  se " << fmt_json_num(p.at("se"));
      if (!p.at("ci_lower").is_null())
        out << "  (" << fmt_json_num(p.at("ci_lower")) << ", "
            << fmt_json_num(p.at("ci_upper")) << ")";
      out << "\n";
    };
    out << "\nestimates";
    if (e.contains("bootstrap"))
      out << " (bootstrap: "
          << e.at("bootstrap").at("requested").get<std::size_t>() << " replicates, "
          << e.at("bootstrap").at("failed").get<std::size_t>() << " failed)";
    out << "\n";
    const auto& means = e.at("means");
    auto mean_line = [&](const char* name, const nlohmann::json& v) {
      out << "  " << std::left << std::setw(26) << name << std::right
          << std::setw(11) << fmt_json_num(v) << "\n";
    };
    mean_line("E[Y(0, Z(0))]", means.at("y_control_mediator_control"));
    mean_line("E[Y(1, Z(0))]", means.at("y_treated_mediator_control"));
    mean_line("E[Y(1, Z(1))]", means.at("y_treated_mediator_treated"));
    const auto& eff = e.at("effects");
    line("natural direct effect", eff.at("direct"));
    line("natural indirect effect", eff.at("mediated"));
    line("total effect", eff.at("total"));
    if (e.at("covariate_adjusted").get<bool>())
      out << "  (outcome model adjusted for covariates)\n";
  } else {
    out << "\nestimates: not computed (diagnostics only)\n";
  }

  const auto& notes = j.at("notes");
  if (!notes.empty()) {
    out << "\nnotes\n";
    for (const auto& note : notes)
      out << "  - " << note.get<std::string>() << "\n";
  }
  return out.str();
}

namespace detail {

inline nlohmann::json param_stats_json(const ParamStats& s) {
  nlohmann::json j;
  j["mean_bias"] = json_number(s.mean_bias);
  j["sd"] = json_number(s.sd);
  j["rmse"] = json_number(s.rmse);
  j["mean_se"] = json_number(s.mean_se);
  j["coverage"] = json_number(s.coverage);
  j["n_se"] = s.n_se;
  return j;
}

}  // namespace detail

inline nlohmann::json build_study_json(const StudyReport& report) {
  nlohmann::json j;
  j["schema_version"] = kSchemaVersion;
  j["tool"] = {{"name", "rmpw"}, {"version", kVersion}};
  j["scenario"] = report.scenario_name;
  j["reps"] = report.reps;
  j["n"] = report.n;
  j["seed"] = report.seed;
  {
    nlohmann::json t;
    t["exact"] = report.truth.exact;
    t["mc_draws"] = report.truth.mc_draws;
    t["ey_0z0"] = detail::json_number(report.truth.ey_0z0);
    t["ey_1z0"] = detail::json_number(report.truth.ey_1z0);
    t["ey_1z1"] = detail::json_number(report.truth.ey_1z1);
    t["ey_0z1"] = detail::json_number(report.truth.ey_0z1);
    t["nde"] = detail::json_number(report.truth.nde);
    t["nie"] = detail::json_number(report.truth.nie);
    t["te"] = detail::json_number(report.truth.te);
    t["se_nde"] = detail::json_number(report.truth.se_nde);
    t["se_nie"] = detail::json_number(report.truth.se_nie);
    t["se_te"] = detail::json_number(report.truth.se_te);
    j["truth"] = t;
  }
  j["estimators"] = nlohmann::json::array();
  for (const auto& cs : report.configs) {
    nlohmann::json c;
    c["label"] = cs.label;
    c["failures"] = cs.failures;
    c["nde"] = detail::param_stats_json(cs.nde);
    c["nie"] = detail::param_stats_json(cs.nie);
    c["te"] = detail::param_stats_json(cs.te);
    j["estimators"].push_back(c);
  }
  return j;
}

inline std::string render_study_text(const nlohmann::json& j) {
  using detail::fmt_json_num;
  std::ostringstream out;
  out << "replication study: scenario '" << j.at("scenario").get<std::string>()
      << "', " << j.at("reps").get<std::size_t>() << " replicates of n="
      << j.at("n").get<std::size_t>() << ", seed "
      << j.at("seed").get<std::uint64_t>() << "\n";
  const auto& t = j.at("truth");
  out << "truth (" << (t.at("exact").get<bool>() ? "exact" : "monte carlo")
      << "): nde=" << fmt_json_num(t.at("nde")) << " nie="
      << fmt_json_num(t.at("nie")) << " te=" << fmt_json_num(t.at("te")) << "\n";
  for (const auto& c : j.at("estimators")) {
    out << c.at("label").get<std::string>() << ":";
    const char* params[3] = {"nde", "nie", "te"};
    for (const char* p : params) {
      const auto& s = c.at(p);
      out << " " << p << "[bias=" << fmt_json_num(s.at("mean_bias"))
          << " sd=" << fmt_json_num(s.at("sd")) << " rmse="
          << fmt_json_num(s.at("rmse"));
      if (!s.at("coverage").is_null())
        out << " cover=" << fmt_json_num(s.at("coverage"));
      out << "]";
    }
    if (c.at("failures").get<std::size_t>() > 0)
      out << " failures=" << c.at("failures").get<std::size_t>();
    out << "\n";
  }
  return out.str();
}

}  // namespace rmpw

#pragma once

// End-to-end analysis pipeline: validate, fit scores, build weights,
// augment, estimate, and attach diagnostics. Bootstrap inference
// re-runs the whole pipeline on within-arm resamples.

#include <cstdint>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "rmpw/data.hpp"
#include "rmpw/estimator.hpp"
#include "rmpw/propensity.hpp"
#include "rmpw/weights.hpp"

namespace rmpw {

enum class WeightRule { Parametric, Stratified };

inline const char* weight_rule_name(WeightRule r) {
  return r == WeightRule::Parametric ? "parametric" : "stratified";
}

// Which construction supplies the treatment-probability factor inside
// the weights. MatchMethod follows weight_method; the explicit values
// mix, e.g. stratified mediator ratios with a model-based IPTW part.
enum class IptwFactorRule { MatchMethod, Parametric, Stratified };

inline const char* iptw_factor_rule_name(IptwFactorRule r) {
  switch (r) {
    case IptwFactorRule::MatchMethod: return "match-method";
    case IptwFactorRule::Parametric: return "parametric";
    case IptwFactorRule::Stratified: return "stratified";
  }
  return "unknown";
}

struct AnalysisConfig {
  WeightRule weight_method = WeightRule::Stratified;
  int strata = 5;
  bool randomized = false;
  bool use_post_treatment = false;
  Family family = Family::Gaussian;
  SeMethod se_method = SeMethod::Robust;
  int bootstrap_reps = 1000;
  std::uint64_t seed = 0;
  int threads = 1;
  std::string treatment_terms;  // terms language; empty = main effects
  std::string mediator_terms;
  double truncate_quantile = 0.0;  // 0 = off
  bool normalize_weights = false;
  bool outcome_covariates = false;
  IptwFactorRule iptw_factor = IptwFactorRule::MatchMethod;

  // Flag-combination validation; runs before any computation.
  void check(const Dataset& ds) const {
    if (strata < 2 || strata > 20)
      throw_config("stratum count must lie in [2, 20]; got " + std::to_string(strata));
    if (threads < 1) throw_config("thread count must be at least 1");
    if (se_method == SeMethod::Bootstrap && bootstrap_reps < 100)
      throw_config("bootstrap needs at least 100 replicates; got " +
                   std::to_string(bootstrap_reps));
    if (truncate_quantile != 0.0 &&
        !(truncate_quantile > 0.0 && truncate_quantile < 1.0))
      throw_config("truncation quantile must be 0 (off) or in (0,1)");
    if (use_post_treatment && ds.post_treatment_names.empty())
      throw_config("post-treatment adjustment requested but the dataset binds "
                   "no post-treatment columns");
    if (family == Family::BinomialLogit && !ds.outcome_is_binary())
      throw_data("binomial family requires a 0/1 outcome column");
  }
};

struct PipelineResult {
  ValidationReport validation;
  PropensityScores scores;
  std::optional<StratumAssignment> strata_numerator;    // control-arm mediator score
  std::optional<StratumAssignment> strata_denominator;  // treated-arm mediator score
  std::optional<StratumAssignment> strata_treatment;
  WeightSet w00, w10, w11;
  BalanceReport balance;
  SupportReport support;
  EffectEstimates estimates;
  bool estimated = false;
  std::vector<std::string> notes;
};

enum class PipelineStage { Full, DiagnosticsOnly };

namespace detail {

inline void gate_validation(const ValidationReport& rep) {
  for (int a = 0; a < 2; ++a)
    if (rep.arm_empty[a])
      throw_data("treatment positivity violated: arm " + std::to_string(a) +
                 " is empty (every unit needs a nonzero probability of each "
                 "treatment value)");
  if (!rep.empty_cells.empty()) {
    const auto [a, z] = rep.empty_cells.front();
    throw_data("mediator positivity violated: no units with mediator=" +
               std::to_string(z) + " in arm " + std::to_string(a));
  }
  if (!rep.duplicate_ids.empty())
    throw_data("duplicate unit ids (first: '" + rep.duplicate_ids.front() + "')");
}

inline void pipeline_body(const Dataset& ds, const AnalysisConfig& cfg,
                          const PropensityScores* precomputed,
                          PipelineStage stage, PipelineResult& res) {
  if (precomputed != nullptr) {
    if (precomputed->theta_treat.size() != ds.size())
      throw_config("precomputed scores disagree with the dataset on unit count");
    if (cfg.use_post_treatment && !precomputed->has_post_scores)
      throw_config("post-treatment adjustment requested but precomputed scores "
                   "carry no post-treatment mediator probabilities");
    res.scores = *precomputed;
  } else {
    res.scores = estimate_scores(ds, cfg.randomized, cfg.use_post_treatment,
                                 cfg.treatment_terms, cfg.mediator_terms);
  }
  const PropensityScores& scores = res.scores;

  const IptwFactorRule factor_rule =
      cfg.iptw_factor != IptwFactorRule::MatchMethod ? cfg.iptw_factor
      : cfg.weight_method == WeightRule::Stratified  ? IptwFactorRule::Stratified
                                                     : IptwFactorRule::Parametric;
  if (!cfg.randomized && factor_rule == IptwFactorRule::Stratified)
    res.strata_treatment = stratify(scores.theta_treat, cfg.strata, "treatment");

  // w00 / w11 are plain treatment weights; fixed at 1 when randomized.
  auto arm_weights = [&](int arm) {
    if (cfg.randomized) return unit_weights(ds, arm);
    if (factor_rule == IptwFactorRule::Stratified)
      return iptw_stratified(ds, *res.strata_treatment, scores.marginal_treated, arm);
    return iptw(ds, scores, arm);
  };
  res.w00 = arm_weights(0);
  res.w11 = arm_weights(1);
  const WeightSet* treat_factor = cfg.randomized ? nullptr : &res.w11;

  if (cfg.weight_method == WeightRule::Stratified) {
    res.strata_numerator =
        stratify(scores.theta_med[0], cfg.strata, "mediator_control");
    if (cfg.use_post_treatment)
      res.strata_denominator =
          stratify(scores.theta_med_post, cfg.strata, "mediator_treated_post");
    else
      res.strata_denominator =
          stratify(scores.theta_med[1], cfg.strata, "mediator_treated");
    res.w10 = rmpw_stratified(ds, *res.strata_numerator, *res.strata_denominator,
                              treat_factor);
  } else {
    res.w10 = rmpw_parametric(ds, scores, 1, 0, cfg.use_post_treatment, treat_factor);
  }
  for (const auto* sa :
       {&res.strata_numerator, &res.strata_denominator, &res.strata_treatment})
    if (sa->has_value())
      for (const auto& note : (*sa)->notes) res.notes.push_back(note);

  if (cfg.truncate_quantile > 0.0) {
    res.w00 = truncate_at_quantile(std::move(res.w00), cfg.truncate_quantile);
    res.w10 = truncate_at_quantile(std::move(res.w10), cfg.truncate_quantile);
    res.w11 = truncate_at_quantile(std::move(res.w11), cfg.truncate_quantile);
    res.notes.push_back("weights truncated at their " +
                        std::to_string(cfg.truncate_quantile) + " quantile");
  }
  if (cfg.normalize_weights) {
    res.w00 = normalize_mean_one(std::move(res.w00));
    res.w10 = normalize_mean_one(std::move(res.w10));
    res.w11 = normalize_mean_one(std::move(res.w11));
  }

  res.balance = balance_diagnostics(
      ds, {{"w00", &res.w00}, {"w10", &res.w10}, {"w11", &res.w11}});
  std::vector<const StratumAssignment*> strata_list;
  for (const auto* sa :
       {&res.strata_numerator, &res.strata_denominator, &res.strata_treatment})
    if (sa->has_value()) strata_list.push_back(&sa->value());
  res.support = overlap_report(ds, scores, strata_list);

  if (stage == PipelineStage::DiagnosticsOnly) return;

  const AugmentedDataset aug = build_augmented(ds, res.w00, res.w10, res.w11);
  if (!aug.exclusions.empty())
    res.notes.push_back(std::to_string(aug.exclusions.size()) +
                        " unit(s) excluded from estimation; see exclusion list");
  if (cfg.outcome_covariates)
    res.notes.push_back(
        "outcome model includes covariate main effects; coefficient-to-mean "
        "identities are model-based, not exact");
  const SeMethod run_se =
      cfg.se_method == SeMethod::Robust ? SeMethod::Robust : SeMethod::None;
  res.estimates = estimate_effects(aug, cfg.family, run_se,
                                   cfg.outcome_covariates ? &ds : nullptr);
  res.estimated = true;
}

}  // namespace detail

// Single estimation pass. precomputed scores (e.g. known truths from a
// designed experiment) bypass score fitting but still flow through the
// same weighting and estimation code. The diagnostics stage reports as
// much as the data allows instead of failing.
inline PipelineResult run_pipeline(const Dataset& ds, const AnalysisConfig& cfg,
                                   const PropensityScores* precomputed = nullptr,
                                   PipelineStage stage = PipelineStage::Full) {
  cfg.check(ds);
  PipelineResult res;
  res.validation = validate(ds);
  if (stage == PipelineStage::Full) {
    detail::gate_validation(res.validation);
    detail::pipeline_body(ds, cfg, precomputed, stage, res);
    return res;
  }
  for (int a = 0; a < 2; ++a)
    if (res.validation.arm_empty[a])
      res.notes.push_back("arm " + std::to_string(a) + " is empty");
  for (const auto& [a, z] : res.validation.empty_cells)
    res.notes.push_back("no units with mediator=" + std::to_string(z) +
                        " in arm " + std::to_string(a));
  for (const auto& id : res.validation.duplicate_ids)
    res.notes.push_back("duplicate unit id '" + id + "'");
  if (!res.validation.arms_ok()) return res;  // nothing further is computable
  try {
    detail::pipeline_body(ds, cfg, precomputed, stage, res);
  } catch (const Error& e) {
    res.notes.push_back(std::string("diagnostics incomplete: ") + e.what());
  }
  return res;
}

// Within-arm resample with fresh sequential ids (source units can repeat,
// so original ids would collide).
inline Dataset resample_within_arms(const Dataset& ds, Rng& rng) {
  std::vector<std::size_t> pool[2];
  for (std::size_t i = 0; i < ds.size(); ++i)
    pool[ds.treatment[i]].push_back(i);
  Dataset out;
  out.covariate_names = ds.covariate_names;
  out.covariates.assign(ds.covariates.size(), {});
  out.post_treatment_names = ds.post_treatment_names;
  out.post_treatment.assign(ds.post_treatment.size(), {});
  std::size_t next_id = 0;
  for (int arm = 0; arm < 2; ++arm) {
    for (std::size_t k = 0; k < pool[arm].size(); ++k) {
      const std::size_t i = pool[arm][rng.index(pool[arm].size())];
      out.unit_ids.push_back(std::to_string(++next_id));
      out.treatment.push_back(ds.treatment[i]);
      out.mediator.push_back(ds.mediator[i]);
      out.outcome.push_back(ds.outcome[i]);
      for (std::size_t j = 0; j < ds.covariates.size(); ++j)
        out.covariates[j].push_back(ds.covariates[j][i]);
      for (std::size_t j = 0; j < ds.post_treatment.size(); ++j)
        out.post_treatment[j].push_back(ds.post_treatment[j][i]);
    }
  }
  return out;
}

struct BootstrapResult {
  PipelineResult base;        // full-sample pass, point estimates
  EffectEstimates estimates;  // base points with bootstrap SEs and CIs
  std::size_t requested = 0;
  std::size_t failed = 0;
};

// Percentile bootstrap over the whole pipeline. Replicate r draws its
// own seed from the master seed, so results are identical for any
// thread count and any subset ordering. Replicates that fail with a
// data/numeric error are dropped and counted; more than 5% failures is
// an error.
inline BootstrapResult run_bootstrap(const Dataset& ds, const AnalysisConfig& cfg) {
  if (cfg.se_method != SeMethod::Bootstrap)
    throw_config("run_bootstrap requires se_method = bootstrap");
  cfg.check(ds);
  BootstrapResult out;
  out.requested = static_cast<std::size_t>(cfg.bootstrap_reps);

  AnalysisConfig point_cfg = cfg;
  point_cfg.se_method = SeMethod::None;
  out.base = run_pipeline(ds, point_cfg);

  struct Replicate {
    bool ok = false;
    double v[6] = {0, 0, 0, 0, 0, 0};  // gamma0..2, direct, mediated, total
  };
  std::vector<Replicate> reps(out.requested);
  parallel_for(out.requested, cfg.threads, [&](std::size_t r) {
    Rng rng(derive_seed(cfg.seed, r));
    try {
      const Dataset rds = resample_within_arms(ds, rng);
      const PipelineResult pr = run_pipeline(rds, point_cfg);
      reps[r].v[0] = pr.estimates.gamma0.estimate;
      reps[r].v[1] = pr.estimates.gamma1.estimate;
      reps[r].v[2] = pr.estimates.gamma2.estimate;
      reps[r].v[3] = pr.estimates.direct.estimate;
      reps[r].v[4] = pr.estimates.mediated.estimate;
      reps[r].v[5] = pr.estimates.total.estimate;
      reps[r].ok = true;
    } catch (const Error&) {
      reps[r].ok = false;
    }
  });

  std::vector<double> draws[6];
  for (const auto& rep : reps) {
    if (!rep.ok) {
      ++out.failed;
      continue;
    }
    for (int j = 0; j < 6; ++j) draws[j].push_back(rep.v[j]);
  }
  if (static_cast<double>(out.failed) >
      0.05 * static_cast<double>(out.requested))
    throw_numeric(std::to_string(out.failed) + " of " +
                  std::to_string(out.requested) +
                  " bootstrap replicates failed (more than 5%)");

  auto fill = [&](ParamEstimate& p, int j) {
    const auto& d = draws[j];
    const double n = static_cast<double>(d.size());
    double mean = 0.0;
    for (double v : d) mean += v;
    mean /= n;
    double ss = 0.0;
    for (double v : d) ss += (v - mean) * (v - mean);
    p.se = n > 1.0 ? std::sqrt(ss / (n - 1.0)) : 0.0;
    std::vector<double> sorted = d;
    std::sort(sorted.begin(), sorted.end());
    p.ci_lower = quantile_sorted(sorted, 0.025);
    p.ci_upper = quantile_sorted(sorted, 0.975);
  };
  out.estimates = out.base.estimates;
  out.estimates.se_method = SeMethod::Bootstrap;
  fill(out.estimates.gamma0, 0);
  fill(out.estimates.gamma1, 1);
  fill(out.estimates.gamma2, 2);
  fill(out.estimates.direct, 3);
  fill(out.estimates.mediated, 4);
  fill(out.estimates.total, 5);
  return out;
}

}  // namespace rmpw

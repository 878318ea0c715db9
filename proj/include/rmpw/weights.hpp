#pragma once

// Weight constructions. Each estimand weight targets one treatment arm:
//   w00 reweights controls to the covariate marginal (IPTW),
//   w11 reweights treated units the same way,
//   w10 multiplies the treated IPTW factor by the ratio of the
//       control-arm to treated-arm probability of the unit's observed
//       mediator value, which shifts the treated group's mediator
//       distribution to its under-control counterpart.
// The ratio can come from fitted mediator models (parametric) or from
// cell proportions within score strata (stratified).

#include <algorithm>
#include <array>
#include <cmath>
#include <limits>
#include <string>
#include <vector>

#include "rmpw/propensity.hpp"

namespace rmpw {

enum class WeightMethod { Unit, Iptw, IptwStratified, RmpwParametric, RmpwStratified };

inline const char* weight_method_name(WeightMethod m) {
  switch (m) {
    case WeightMethod::Unit: return "unit";
    case WeightMethod::Iptw: return "iptw";
    case WeightMethod::IptwStratified: return "iptw-stratified";
    case WeightMethod::RmpwParametric: return "parametric";
    case WeightMethod::RmpwStratified: return "stratified";
  }
  return "unknown";
}

struct WeightExclusion {
  std::size_t unit = 0;
  std::string reason;
};

// Weights for the counterfactual mean E[Y(a, Z_{a'})]. Values are
// meaningful only where defined[i] is true, which can hold only for
// units with treatment == a. Excluded units carry a reason instead.
struct WeightSet {
  int a = 0;
  int a_prime = 0;
  WeightMethod method = WeightMethod::Unit;
  std::vector<double> value;
  std::vector<bool> defined;
  std::vector<WeightExclusion> exclusions;
  bool normalized = false;
  double cap = std::numeric_limits<double>::quiet_NaN();
  std::size_t n_capped = 0;

  int target_arm() const { return a; }
  std::size_t n_defined() const {
    std::size_t k = 0;
    for (bool d : defined) k += d;
    return k;
  }
};

namespace detail {

inline WeightSet blank_weights(std::size_t n, int a, int a_prime, WeightMethod m) {
  WeightSet ws;
  ws.a = a;
  ws.a_prime = a_prime;
  ws.method = m;
  ws.value.assign(n, 0.0);
  ws.defined.assign(n, false);
  return ws;
}

}  // namespace detail

// Constant weight 1 on one arm; the randomized-design stand-in for the
// treatment-probability factor.
inline WeightSet unit_weights(const Dataset& ds, int arm) {
  WeightSet ws = detail::blank_weights(ds.size(), arm, arm, WeightMethod::Unit);
  for (std::size_t i = 0; i < ds.size(); ++i)
    if (ds.treatment[i] == arm) {
      ws.value[i] = 1.0;
      ws.defined[i] = true;
    }
  return ws;
}

// p(A=a) / p(A=a | X) on arm `a`, from the fitted treatment score.
inline WeightSet iptw(const Dataset& ds, const PropensityScores& scores, int arm) {
  WeightSet ws = detail::blank_weights(ds.size(), arm, arm, WeightMethod::Iptw);
  const double marginal =
      arm == 1 ? scores.marginal_treated : 1.0 - scores.marginal_treated;
  for (std::size_t i = 0; i < ds.size(); ++i) {
    if (ds.treatment[i] != arm) continue;
    const double raw = scores.theta_treat[i];
    if (raw <= 0.0 || raw >= 1.0)
      throw_numeric("treatment score for unit " + std::to_string(i) + " is " +
                    std::to_string(raw) + "; positivity requires (0,1)");
    ws.value[i] = marginal / (arm == 1 ? raw : 1.0 - raw);
    ws.defined[i] = true;
  }
  return ws;
}

// Same estimand as iptw(), but the conditional treatment probability is
// the arm share within the unit's treatment-score stratum.
inline WeightSet iptw_stratified(const Dataset& ds, const StratumAssignment& strata,
                                 double marginal_treated, int arm) {
  WeightSet ws =
      detail::blank_weights(ds.size(), arm, arm, WeightMethod::IptwStratified);
  std::vector<std::size_t> total(static_cast<std::size_t>(strata.n_strata) + 1, 0);
  std::vector<std::size_t> treated(static_cast<std::size_t>(strata.n_strata) + 1, 0);
  for (std::size_t i = 0; i < ds.size(); ++i) {
    if (strata.stratum[i] == 0) continue;
    const auto s = static_cast<std::size_t>(strata.stratum[i]);
    ++total[s];
    treated[s] += static_cast<std::size_t>(ds.treatment[i]);
  }
  const double marginal = arm == 1 ? marginal_treated : 1.0 - marginal_treated;
  for (std::size_t i = 0; i < ds.size(); ++i) {
    if (ds.treatment[i] != arm) continue;
    if (strata.stratum[i] == 0) {
      ws.exclusions.push_back({i, "unit has no stratum on basis " + strata.basis});
      continue;
    }
    const auto s = static_cast<std::size_t>(strata.stratum[i]);
    // A unit's own stratum share in its own arm is strictly positive.
    const double share = static_cast<double>(treated[s]) / static_cast<double>(total[s]);
    ws.value[i] = marginal / (arm == 1 ? share : 1.0 - share);
    ws.defined[i] = true;
  }
  return ws;
}

// Model-based W_(a, Z_{a'}) on arm `a`: the ratio of the arm-a' to the
// arm-a mediator probability at the unit's observed mediator value,
// times the arm's IPTW factor (1 under a randomized design). a == a'
// makes the ratio exactly one and reproduces iptw(). With include_post
// (only for (a, a') = (1, 0)) the denominator probability conditions on
// the observed post-treatment columns as well. An explicit treat_factor
// set replaces the built-in score-based factor, letting the treatment
// part come from stratification instead.
inline WeightSet rmpw_parametric(const Dataset& ds, const PropensityScores& scores,
                                 int a, int a_prime, bool include_post = false,
                                 const WeightSet* treat_factor = nullptr) {
  if ((a != 0 && a != 1) || (a_prime != 0 && a_prime != 1))
    throw_config("weight estimand arms must be 0 or 1");
  if (include_post && !(a == 1 && a_prime == 0))
    throw_config("post-treatment weights are defined for the (1, Z0) estimand only");
  if (include_post && !scores.has_post_scores)
    throw_config("post-treatment weights requested but no such scores were fitted");
  WeightSet ws =
      detail::blank_weights(ds.size(), a, a_prime, WeightMethod::RmpwParametric);
  const double marginal =
      a == 1 ? scores.marginal_treated : 1.0 - scores.marginal_treated;
  for (std::size_t i = 0; i < ds.size(); ++i) {
    if (ds.treatment[i] != a) continue;
    if (ds.mediator[i] != 0 && ds.mediator[i] != 1)
      throw_data("mediator value outside {0,1} at unit " + std::to_string(i));
    const double num_p = scores.theta_med[a_prime][i];
    const double den_p = include_post ? scores.theta_med_post[i] : scores.theta_med[a][i];
    const double num = ds.mediator[i] == 1 ? num_p : 1.0 - num_p;
    const double den = ds.mediator[i] == 1 ? den_p : 1.0 - den_p;
    if (den <= 0.0 || den >= 1.0)
      throw_numeric("mediator score for unit " + std::to_string(i) + " is " +
                    std::to_string(den_p) + "; positivity requires (0,1)");
    double factor = 1.0;
    if (treat_factor != nullptr) {
      if (!treat_factor->defined[i]) {
        ws.exclusions.push_back({i, "treatment factor undefined for unit"});
        continue;
      }
      factor = treat_factor->value[i];
    } else if (!scores.randomized) {
      const double theta = scores.theta_treat[i];
      if (theta <= 0.0 || theta >= 1.0)
        throw_numeric("treatment score for unit " + std::to_string(i) + " is " +
                      std::to_string(theta) + "; positivity requires (0,1)");
      factor = marginal / (a == 1 ? theta : 1.0 - theta);
    }
    ws.value[i] = (num / den) * factor;
    ws.defined[i] = true;
  }
  return ws;
}

// Cell-proportion W_(1, Z_0) on the treated arm. For a treated unit in
// numerator stratum s (control-score basis) and denominator stratum t
// (treated-score basis), with
//   p0(s) = share of controls in s with Z=1,
//   p1(t) = share of treated in t with Z=1,
// the weight at Z=1 is p0(s)/p1(t) and at Z=0 it is (1-p0(s))/(1-p1(t)).
// An optional per-unit treatment factor (IPTW) multiplies in. Units
// whose ratio is undefined (no controls in s, or p1 degenerate at the
// unit's mediator value) are excluded with a reason.
inline WeightSet rmpw_stratified(const Dataset& ds,
                                 const StratumAssignment& numerator_strata,
                                 const StratumAssignment& denominator_strata,
                                 const WeightSet* treat_factor = nullptr) {
  WeightSet ws = detail::blank_weights(ds.size(), 1, 0, WeightMethod::RmpwStratified);
  auto cell_shares = [&](const StratumAssignment& sa, int arm) {
    std::vector<std::size_t> total(static_cast<std::size_t>(sa.n_strata) + 1, 0);
    std::vector<std::size_t> med1(static_cast<std::size_t>(sa.n_strata) + 1, 0);
    for (std::size_t i = 0; i < ds.size(); ++i) {
      if (ds.treatment[i] != arm || sa.stratum[i] == 0) continue;
      const auto s = static_cast<std::size_t>(sa.stratum[i]);
      ++total[s];
      med1[s] += static_cast<std::size_t>(ds.mediator[i]);
    }
    return std::make_pair(std::move(total), std::move(med1));
  };
  const auto [n0, z0] = cell_shares(numerator_strata, 0);
  const auto [n1, z1] = cell_shares(denominator_strata, 1);

  for (std::size_t i = 0; i < ds.size(); ++i) {
    if (ds.treatment[i] != 1) continue;
    const int s = numerator_strata.stratum[i];
    const int t = denominator_strata.stratum[i];
    if (s == 0 || t == 0) {
      ws.exclusions.push_back({i, "unit has no stratum on basis " +
                                      (s == 0 ? numerator_strata.basis
                                              : denominator_strata.basis)});
      continue;
    }
    if (n0[static_cast<std::size_t>(s)] == 0) {
      ws.exclusions.push_back(
          {i, "no control units in stratum " + std::to_string(s) + " of basis " +
                  numerator_strata.basis});
      continue;
    }
    const double p0 = static_cast<double>(z0[static_cast<std::size_t>(s)]) /
                      static_cast<double>(n0[static_cast<std::size_t>(s)]);
    const double p1 = static_cast<double>(z1[static_cast<std::size_t>(t)]) /
                      static_cast<double>(n1[static_cast<std::size_t>(t)]);
    const double num = ds.mediator[i] == 1 ? p0 : 1.0 - p0;
    const double den = ds.mediator[i] == 1 ? p1 : 1.0 - p1;
    if (den <= 0.0) {
      ws.exclusions.push_back(
          {i, "no treated units with mediator=" + std::to_string(ds.mediator[i]) +
                  " in stratum " + std::to_string(t) + " of basis " +
                  denominator_strata.basis});
      continue;
    }
    double factor = 1.0;
    if (treat_factor != nullptr) {
      if (!treat_factor->defined[i]) {
        ws.exclusions.push_back({i, "treatment factor undefined for unit"});
        continue;
      }
      factor = treat_factor->value[i];
    }
    ws.value[i] = (num / den) * factor;
    ws.defined[i] = true;
  }
  return ws;
}

// Rescales defined weights to mean one. Group means downstream are
// ratios of weighted sums, so this changes no effect estimate; it only
// stabilizes reported weight magnitudes.
inline WeightSet normalize_mean_one(WeightSet ws) {
  double total = 0.0;
  std::size_t n = 0;
  for (std::size_t i = 0; i < ws.value.size(); ++i)
    if (ws.defined[i]) {
      total += ws.value[i];
      ++n;
    }
  if (n == 0 || total <= 0.0)
    throw_numeric("cannot normalize a weight set with no positive mass");
  const double scale = static_cast<double>(n) / total;
  for (std::size_t i = 0; i < ws.value.size(); ++i)
    if (ws.defined[i]) ws.value[i] *= scale;
  ws.normalized = true;
  return ws;
}

// Caps defined weights at their q-quantile. q in (0, 1); q = 0 is the
// documented "off" value and is rejected here.
inline WeightSet truncate_at_quantile(WeightSet ws, double q) {
  if (!(q > 0.0 && q < 1.0))
    throw_config("truncation quantile must lie in (0,1)");
  std::vector<double> vals;
  for (std::size_t i = 0; i < ws.value.size(); ++i)
    if (ws.defined[i]) vals.push_back(ws.value[i]);
  if (vals.empty()) return ws;
  const double cap = quantile(std::move(vals), q);
  ws.cap = cap;
  ws.n_capped = 0;
  for (std::size_t i = 0; i < ws.value.size(); ++i)
    if (ws.defined[i] && ws.value[i] > cap) {
      ws.value[i] = cap;
      ++ws.n_capped;
    }
  return ws;
}

// Per-set summary plus covariate means in the weighted pseudo-
// population. Each weight construction targets the covariate marginal,
// so weighted means are compared against overall sample means,
// standardized by the overall (population-denominator) SD.
struct WeightSummary {
  std::string label;
  int a = 0;
  int a_prime = 0;
  WeightMethod method = WeightMethod::Unit;
  std::size_t n_defined = 0;
  std::size_t n_excluded = 0;
  double min = 0.0;
  double q25 = 0.0;
  double median = 0.0;
  double q75 = 0.0;
  double max = 0.0;
  double mean = 0.0;
  double ess = 0.0;  // (sum w)^2 / sum w^2
  double mediator_mean = 0.0;  // weighted share with Z=1 among defined units
  std::vector<double> covariate_means;
  std::vector<double> std_diff_vs_sample;
};

// The headline check is the first pair: under a (1, Z0) weight, the
// weighted treated mediator share should approach the raw control
// share. Covariate means are compared against the full-sample marginal,
// which every weight construction here targets.
struct BalanceReport {
  double control_mediator_mean = 0.0;  // unweighted share with Z=1, controls
  double treated_mediator_mean = 0.0;  // unweighted share with Z=1, treated
  std::vector<std::string> covariate_names;
  std::vector<double> sample_means;
  std::vector<double> sample_sds;
  std::vector<WeightSummary> sets;
};

inline BalanceReport balance_diagnostics(
    const Dataset& ds,
    const std::vector<std::pair<std::string, const WeightSet*>>& sets) {
  BalanceReport rep;
  rep.covariate_names = ds.covariate_names;
  const auto n = static_cast<double>(ds.size());
  std::array<double, 2> med_sum{0.0, 0.0}, arm_n{0.0, 0.0};
  for (std::size_t i = 0; i < ds.size(); ++i) {
    med_sum[ds.treatment[i]] += ds.mediator[i];
    arm_n[ds.treatment[i]] += 1.0;
  }
  rep.control_mediator_mean = arm_n[0] > 0.0 ? med_sum[0] / arm_n[0] : 0.0;
  rep.treated_mediator_mean = arm_n[1] > 0.0 ? med_sum[1] / arm_n[1] : 0.0;
  for (const auto& col : ds.covariates) {
    double m = 0.0;
    for (double v : col) m += v;
    m /= n;
    double ss = 0.0;
    for (double v : col) ss += (v - m) * (v - m);
    rep.sample_means.push_back(m);
    rep.sample_sds.push_back(std::sqrt(ss / n));
  }
  for (const auto& [label, ws] : sets) {
    if (ws == nullptr) continue;
    WeightSummary s;
    s.label = label;
    s.a = ws->a;
    s.a_prime = ws->a_prime;
    s.method = ws->method;
    s.n_excluded = ws->exclusions.size();
    double total = 0.0, total_sq = 0.0, med_total = 0.0;
    s.min = std::numeric_limits<double>::infinity();
    s.max = -std::numeric_limits<double>::infinity();
    std::vector<double> values;
    for (std::size_t i = 0; i < ds.size(); ++i) {
      if (!ws->defined[i]) continue;
      ++s.n_defined;
      const double w = ws->value[i];
      total += w;
      total_sq += w * w;
      med_total += w * ds.mediator[i];
      s.min = std::min(s.min, w);
      s.max = std::max(s.max, w);
      values.push_back(w);
    }
    if (s.n_defined == 0) {
      rep.sets.push_back(std::move(s));
      continue;
    }
    std::sort(values.begin(), values.end());
    s.q25 = quantile_sorted(values, 0.25);
    s.median = quantile_sorted(values, 0.5);
    s.q75 = quantile_sorted(values, 0.75);
    s.mean = total / static_cast<double>(s.n_defined);
    s.ess = total_sq > 0.0 ? total * total / total_sq : 0.0;
    s.mediator_mean = total > 0.0 ? med_total / total
                                  : std::numeric_limits<double>::quiet_NaN();
    for (std::size_t j = 0; j < ds.covariates.size(); ++j) {
      double wm = 0.0;
      for (std::size_t i = 0; i < ds.size(); ++i)
        if (ws->defined[i]) wm += ws->value[i] * ds.covariates[j][i];
      wm = total > 0.0 ? wm / total : std::numeric_limits<double>::quiet_NaN();
      s.covariate_means.push_back(wm);
      const double sd = rep.sample_sds[j];
      s.std_diff_vs_sample.push_back(
          sd > 0.0 ? (wm - rep.sample_means[j]) / sd
                   : std::numeric_limits<double>::quiet_NaN());
    }
    rep.sets.push_back(std::move(s));
  }
  return rep;
}

}  // namespace rmpw

#pragma once

// Synthetic-data oracle. A Scenario fixes a full potential-outcome
// model: covariates, optional unobserved (latent) Bernoulli causes, a
// treatment mechanism, an optional binary post-treatment variable L
// with L0/L1 both generated, both potential mediator values, and all
// four potential outcomes. Ground truth comes from exact enumeration
// over the discrete support or from brute-force Monte Carlo; the same
// model yields the true unit-level scores that let tests separate
// weighting error from estimation error.
//
// Cross-world structure: given covariates and latents, (L0, L1, Z0, Z1)
// use independent draws, so the counterfactual mediator is independent
// of the post-treatment value given those causes. Making a latent feed
// both Z0 and L1 is how a study breaks that independence on purpose.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "rmpw/data.hpp"
#include "rmpw/pipeline.hpp"

namespace rmpw {

struct CovariateSpec {
  enum class Dist { Bernoulli, Normal };
  std::string name;
  Dist dist = Dist::Bernoulli;
  double p = 0.5;     // Bernoulli
  double mean = 0.0;  // Normal
  double sd = 1.0;
};

// intercept + sum(coef[name] * value); names resolve against
// covariates, latents, the post-treatment variable, and "a" where the
// model is allowed to see the arm.
struct LinearTerms {
  double intercept = 0.0;
  std::vector<std::pair<std::string, double>> coef;
};

struct TreatmentSpec {
  bool randomized = true;
  double p = 0.5;     // randomized assignment probability
  LinearTerms model;  // logistic in covariates otherwise
};

struct PostTreatmentSpec {
  std::string name;
  LinearTerms model;  // logit of pr(L_a = 1); may reference "a"
};

struct OutcomeSpec {
  Family family = Family::Gaussian;
  double intercept = 0.0;
  double treatment = 0.0;      // beta on a
  double mediator = 0.0;       // beta on z
  double interaction = 0.0;    // beta on a*z
  LinearTerms covariates;      // betas on covariates/latents (intercept unused)
  double post = 0.0;           // beta on L_a
  double mediator_post = 0.0;  // beta on z*L_a
  double sigma = 1.0;          // gaussian noise sd
};

struct Scenario {
  std::string name;
  std::vector<CovariateSpec> covariates;
  std::vector<CovariateSpec> latents;  // Bernoulli only
  TreatmentSpec treatment;
  std::optional<PostTreatmentSpec> post;
  LinearTerms mediator_model[2];  // [0] control, [1] treated
  OutcomeSpec outcome;
  std::uint64_t seed = 0;

  bool all_discrete() const {
    for (const auto& c : covariates)
      if (c.dist != CovariateSpec::Dist::Bernoulli) return false;
    return true;
  }
};

struct PotentialTable {
  std::vector<int> z0, z1;
  std::vector<int> l0, l1;  // empty when the scenario has no post variable
  std::vector<double> y00, y01, y10, y11;  // y[a][z]
  std::vector<std::string> latent_names;
  std::vector<std::vector<double>> latents;
};

struct GeneratedData {
  Dataset data;
  PotentialTable potentials;
};

struct TruthValues {
  double ey_0z0 = 0.0, ey_1z0 = 0.0, ey_1z1 = 0.0, ey_0z1 = 0.0;
  double nde = 0.0, nie = 0.0, te = 0.0;
  bool exact = true;
  std::size_t mc_draws = 0;
  // Monte Carlo standard errors (zero in exact mode).
  double se_ey_0z0 = 0.0, se_ey_1z0 = 0.0, se_ey_1z1 = 0.0, se_ey_0z1 = 0.0;
  double se_nde = 0.0, se_nie = 0.0, se_te = 0.0;
};

namespace detail {

// Name-resolution context for LinearTerms evaluation.
struct TermContext {
  const Scenario* sc = nullptr;
  const double* cov = nullptr;     // aligned with sc->covariates
  const double* lat = nullptr;     // aligned with sc->latents
  double a = 0.0;
  double l = 0.0;
  bool has_a = false;
  bool has_l = false;

  double lookup(const std::string& name) const {
    if (has_a && name == "a") return a;
    if (has_l && sc->post && name == sc->post->name) return l;
    for (std::size_t j = 0; j < sc->covariates.size(); ++j)
      if (sc->covariates[j].name == name) return cov[j];
    for (std::size_t j = 0; j < sc->latents.size(); ++j)
      if (sc->latents[j].name == name) return lat[j];
    throw_config("model term references unknown variable '" + name + "'");
  }
};

inline double eval_terms(const LinearTerms& t, const TermContext& ctx) {
  double v = t.intercept;
  for (const auto& [name, beta] : t.coef) v += beta * ctx.lookup(name);
  return v;
}

inline double mediator_prob(const Scenario& sc, int arm, const double* cov,
                            const double* lat, double l) {
  TermContext ctx{&sc, cov, lat, 0.0, l, false, sc.post.has_value()};
  return inv_logit(eval_terms(sc.mediator_model[arm], ctx));
}

inline double post_prob(const Scenario& sc, int arm, const double* cov,
                        const double* lat) {
  TermContext ctx{&sc, cov, lat, static_cast<double>(arm), 0.0, true, false};
  return inv_logit(eval_terms(sc.post->model, ctx));
}

// Outcome-model linear predictor for potential outcome Y_{az} with
// post-treatment value l (ignored when the scenario has no post model).
inline double outcome_lp(const Scenario& sc, int a, int z, const double* cov,
                         const double* lat, double l) {
  const auto& o = sc.outcome;
  TermContext ctx{&sc, cov, lat, 0.0, 0.0, false, false};
  double lp = o.intercept + o.treatment * a + o.mediator * z +
              o.interaction * a * z;
  for (const auto& [name, beta] : o.covariates.coef) lp += beta * ctx.lookup(name);
  if (sc.post) lp += o.post * l + o.mediator_post * z * l;
  return lp;
}

inline double outcome_mean(const Scenario& sc, int a, int z, const double* cov,
                           const double* lat, double l) {
  const double lp = outcome_lp(sc, a, z, cov, lat, l);
  return sc.outcome.family == Family::BinomialLogit ? inv_logit(lp) : lp;
}

// One unit's exogenous draw and its full potential table.
struct UnitDraw {
  std::vector<double> cov, lat;
  int a = 0;
  int l0 = 0, l1 = 0;
  int z0 = 0, z1 = 0;
  double y[2][2] = {{0, 0}, {0, 0}};  // y[a][z]
};

// Draw order is part of the reproducibility contract: covariates,
// latents, treatment (when asked for), L0, L1, Z0, Z1, then the four
// potential outcomes by (a, z) in lexicographic order.
inline UnitDraw draw_unit(const Scenario& sc, Rng& rng, bool with_treatment) {
  UnitDraw u;
  u.cov.reserve(sc.covariates.size());
  for (const auto& c : sc.covariates)
    u.cov.push_back(c.dist == CovariateSpec::Dist::Bernoulli
                        ? static_cast<double>(rng.bernoulli(c.p))
                        : rng.normal(c.mean, c.sd));
  u.lat.reserve(sc.latents.size());
  for (const auto& c : sc.latents)
    u.lat.push_back(static_cast<double>(rng.bernoulli(c.p)));
  if (with_treatment) {
    if (sc.treatment.randomized) {
      u.a = rng.bernoulli(sc.treatment.p);
    } else {
      TermContext ctx{&sc, u.cov.data(), u.lat.data(), 0.0, 0.0, false, false};
      u.a = rng.bernoulli(inv_logit(eval_terms(sc.treatment.model, ctx)));
    }
  }
  if (sc.post) {
    u.l0 = rng.bernoulli(post_prob(sc, 0, u.cov.data(), u.lat.data()));
    u.l1 = rng.bernoulli(post_prob(sc, 1, u.cov.data(), u.lat.data()));
  }
  u.z0 = rng.bernoulli(mediator_prob(sc, 0, u.cov.data(), u.lat.data(), u.l0));
  u.z1 = rng.bernoulli(mediator_prob(sc, 1, u.cov.data(), u.lat.data(), u.l1));
  for (int a = 0; a < 2; ++a)
    for (int z = 0; z < 2; ++z) {
      const double l = a == 0 ? u.l0 : u.l1;
      const double lp = outcome_lp(sc, a, z, u.cov.data(), u.lat.data(), l);
      u.y[a][z] = sc.outcome.family == Family::BinomialLogit
                      ? static_cast<double>(rng.bernoulli(inv_logit(lp)))
                      : lp + sc.outcome.sigma * rng.normal();
    }
  return u;
}

// Iterates the joint support of all Bernoulli covariates and latents,
// calling fn(prob, cov_values, lat_values).
template <typename Fn>
inline void enumerate_discrete(const Scenario& sc, Fn&& fn) {
  const std::size_t nc = sc.covariates.size(), nl = sc.latents.size();
  const std::size_t bits = nc + nl;
  if (bits > 24) throw_config("discrete enumeration limited to 24 variables");
  std::vector<double> cov(nc), lat(nl);
  for (std::uint64_t mask = 0; mask < (1ULL << bits); ++mask) {
    double prob = 1.0;
    for (std::size_t j = 0; j < nc; ++j) {
      const bool one = (mask >> j) & 1ULL;
      cov[j] = one ? 1.0 : 0.0;
      prob *= one ? sc.covariates[j].p : 1.0 - sc.covariates[j].p;
    }
    for (std::size_t j = 0; j < nl; ++j) {
      const bool one = (mask >> (nc + j)) & 1ULL;
      lat[j] = one ? 1.0 : 0.0;
      prob *= one ? sc.latents[j].p : 1.0 - sc.latents[j].p;
    }
    if (prob > 0.0) fn(prob, cov, lat);
  }
}

// E(Y_{a, Z_{a'}} | covariates, latents). Z_{a'} and L_a are
// conditionally independent given (covariates, latents), so the
// expectation factorizes into the L_a mixture of outcome means against
// the marginal law of Z_{a'}.
inline double cell_mean(const Scenario& sc, int a, int a_prime,
                        const std::vector<double>& cov,
                        const std::vector<double>& lat) {
  if (!sc.post) {
    const double q = mediator_prob(sc, a_prime, cov.data(), lat.data(), 0.0);
    return q * outcome_mean(sc, a, 1, cov.data(), lat.data(), 0.0) +
           (1.0 - q) * outcome_mean(sc, a, 0, cov.data(), lat.data(), 0.0);
  }
  const double pl_a = post_prob(sc, a, cov.data(), lat.data());
  if (a_prime == a) {
    // Same world: (L_a, Z_a) are dependent through the mediator model,
    // so sum over their joint law.
    double total = 0.0;
    for (int l = 0; l < 2; ++l) {
      const double pl = l == 1 ? pl_a : 1.0 - pl_a;
      const double qz = mediator_prob(sc, a, cov.data(), lat.data(), l);
      total += pl * (qz * outcome_mean(sc, a, 1, cov.data(), lat.data(), l) +
                     (1.0 - qz) * outcome_mean(sc, a, 0, cov.data(), lat.data(), l));
    }
    return total;
  }
  const double pl_ap = post_prob(sc, a_prime, cov.data(), lat.data());
  const double q =  // pr(Z_{a'} = 1 | cov, lat), marginal over L_{a'}
      pl_ap * mediator_prob(sc, a_prime, cov.data(), lat.data(), 1.0) +
      (1.0 - pl_ap) * mediator_prob(sc, a_prime, cov.data(), lat.data(), 0.0);
  double total = 0.0;
  for (int l = 0; l < 2; ++l) {
    const double pl = l == 1 ? pl_a : 1.0 - pl_a;
    total += pl * (q * outcome_mean(sc, a, 1, cov.data(), lat.data(), l) +
                   (1.0 - q) * outcome_mean(sc, a, 0, cov.data(), lat.data(), l));
  }
  return total;
}

}  // namespace detail

// Scenario sanity: distinct names, resolvable model terms, and mediator
// positivity over a probe grid (all Bernoulli combinations; Normal
// covariates probed at mean + {-3..3} sd).
inline void validate_scenario(const Scenario& sc) {
  std::set<std::string> names;
  auto add = [&](const std::string& n, const char* what) {
    if (n.empty()) throw_config(std::string(what) + " has an empty name");
    if (n == "a")
      throw_config("'a' is reserved for the treatment arm in model terms");
    if (!names.insert(n).second)
      throw_config("variable name '" + n + "' is used twice");
  };
  if (sc.covariates.empty() && !sc.treatment.randomized)
    throw_config("a non-randomized treatment model needs covariates");
  for (const auto& c : sc.covariates) add(c.name, "covariate");
  for (const auto& c : sc.latents) {
    add(c.name, "latent");
    if (c.dist != CovariateSpec::Dist::Bernoulli)
      throw_config("latent '" + c.name + "' must be Bernoulli");
  }
  if (sc.post) add(sc.post->name, "post-treatment variable");
  if (sc.treatment.randomized) {
    if (!(sc.treatment.p > 0.0 && sc.treatment.p < 1.0))
      throw_config("randomized treatment probability must lie in (0,1)");
  } else {
    // The treatment mechanism may see only observable covariates.
    for (const auto& [n, b] : sc.treatment.model.coef) {
      bool found = false;
      for (const auto& c : sc.covariates) found = found || c.name == n;
      if (!found)
        throw_config("treatment model term '" + n + "' is not a covariate");
    }
  }
  for (const auto& c : sc.covariates)
    if (c.dist == CovariateSpec::Dist::Bernoulli && !(c.p > 0.0 && c.p < 1.0))
      throw_config("Bernoulli parameter for '" + c.name + "' must lie in (0,1)");
  for (const auto& c : sc.latents)
    if (!(c.p > 0.0 && c.p < 1.0))
      throw_config("Bernoulli parameter for '" + c.name + "' must lie in (0,1)");
  if (sc.outcome.family == Family::Gaussian && !(sc.outcome.sigma >= 0.0))
    throw_config("outcome sigma must be nonnegative");
  if (!sc.post &&
      (sc.outcome.post != 0.0 || sc.outcome.mediator_post != 0.0))
    throw_config("outcome model references a post-treatment variable the "
                 "scenario does not define");

  // Term resolution probe: evaluating once at zeros surfaces unknown
  // names regardless of data.
  std::vector<double> cov0(sc.covariates.size(), 0.0), lat0(sc.latents.size(), 0.0);
  detail::mediator_prob(sc, 0, cov0.data(), lat0.data(), 0.0);
  detail::mediator_prob(sc, 1, cov0.data(), lat0.data(), 0.0);
  detail::outcome_mean(sc, 0, 0, cov0.data(), lat0.data(), 0.0);
  if (sc.post) {
    detail::post_prob(sc, 0, cov0.data(), lat0.data());
    detail::post_prob(sc, 1, cov0.data(), lat0.data());
  }

  // Positivity probe. Normal covariates get grid values; Bernoulli and
  // latent variables enumerate; L probes both values when present.
  std::vector<std::vector<double>> grids;
  for (const auto& c : sc.covariates) {
    if (c.dist == CovariateSpec::Dist::Bernoulli) {
      grids.push_back({0.0, 1.0});
    } else {
      std::vector<double> g;
      for (int k = -3; k <= 3; ++k) g.push_back(c.mean + k * c.sd);
      grids.push_back(std::move(g));
    }
  }
  for (std::size_t j = 0; j < sc.latents.size(); ++j) grids.push_back({0.0, 1.0});
  const int n_l = sc.post ? 2 : 1;
  std::vector<std::size_t> idx(grids.size(), 0);
  constexpr double eps = 0.01;
  while (true) {
    std::vector<double> cov(sc.covariates.size()), lat(sc.latents.size());
    for (std::size_t j = 0; j < sc.covariates.size(); ++j) cov[j] = grids[j][idx[j]];
    for (std::size_t j = 0; j < sc.latents.size(); ++j)
      lat[j] = grids[sc.covariates.size() + j][idx[sc.covariates.size() + j]];
    for (int arm = 0; arm < 2; ++arm)
      for (int l = 0; l < n_l; ++l) {
        const double q = detail::mediator_prob(sc, arm, cov.data(), lat.data(),
                                               static_cast<double>(l));
        if (!(q > eps && q < 1.0 - eps)) {
          std::ostringstream msg;
          msg << "mediator positivity fails in arm " << arm << ": pr(Z=1) = "
              << q << " at probe point (";
          for (std::size_t j = 0; j < cov.size(); ++j)
            msg << (j ? ", " : "") << sc.covariates[j].name << "=" << cov[j];
          for (std::size_t j = 0; j < lat.size(); ++j)
            msg << ((cov.size() + j) ? ", " : "") << sc.latents[j].name << "="
                << lat[j];
          if (sc.post) msg << ", " << sc.post->name << "=" << l;
          msg << "); probabilities must stay in (" << eps << ", " << 1 - eps << ")";
          throw_config(msg.str());
        }
      }
    std::size_t j = 0;
    for (; j < grids.size(); ++j) {
      if (++idx[j] < grids[j].size()) break;
      idx[j] = 0;
    }
    if (j == grids.size()) break;
  }
}

// Samples a dataset of n units plus the full potential table (the table
// never reaches estimators; tests use it as the oracle's record).
inline GeneratedData generate(const Scenario& sc, std::size_t n, std::uint64_t seed) {
  validate_scenario(sc);
  if (n < 1) throw_config("sample size must be at least 1");
  GeneratedData g;
  Dataset& ds = g.data;
  PotentialTable& pt = g.potentials;
  ds.covariate_names.clear();
  for (const auto& c : sc.covariates) ds.covariate_names.push_back(c.name);
  ds.covariates.assign(sc.covariates.size(), {});
  if (sc.post) {
    ds.post_treatment_names = {sc.post->name};
    ds.post_treatment.assign(1, {});
  }
  pt.latent_names.clear();
  for (const auto& c : sc.latents) pt.latent_names.push_back(c.name);
  pt.latents.assign(sc.latents.size(), {});

  Rng rng(seed);
  for (std::size_t i = 0; i < n; ++i) {
    const auto u = detail::draw_unit(sc, rng, true);
    ds.unit_ids.push_back(std::to_string(i + 1));
    ds.treatment.push_back(u.a);
    const int z_obs = u.a == 1 ? u.z1 : u.z0;
    ds.mediator.push_back(z_obs);
    ds.outcome.push_back(u.y[u.a][z_obs]);
    for (std::size_t j = 0; j < sc.covariates.size(); ++j)
      ds.covariates[j].push_back(u.cov[j]);
    if (sc.post) ds.post_treatment[0].push_back(u.a == 1 ? u.l1 : u.l0);
    pt.z0.push_back(u.z0);
    pt.z1.push_back(u.z1);
    if (sc.post) {
      pt.l0.push_back(u.l0);
      pt.l1.push_back(u.l1);
    }
    pt.y00.push_back(u.y[0][0]);
    pt.y01.push_back(u.y[0][1]);
    pt.y10.push_back(u.y[1][0]);
    pt.y11.push_back(u.y[1][1]);
    for (std::size_t j = 0; j < sc.latents.size(); ++j)
      pt.latents[j].push_back(u.lat[j]);
  }
  return g;
}

// Exact ground truth by enumeration over the discrete joint support.
inline TruthValues compute_truth_exact(const Scenario& sc) {
  validate_scenario(sc);
  if (!sc.all_discrete())
    throw_config("exact truth needs all covariates discrete; use Monte Carlo");
  TruthValues t;
  t.exact = true;
  double e00 = 0.0, e10 = 0.0, e11 = 0.0, e01 = 0.0;
  detail::enumerate_discrete(sc, [&](double prob, const std::vector<double>& cov,
                                     const std::vector<double>& lat) {
    e00 += prob * detail::cell_mean(sc, 0, 0, cov, lat);
    e10 += prob * detail::cell_mean(sc, 1, 0, cov, lat);
    e11 += prob * detail::cell_mean(sc, 1, 1, cov, lat);
    e01 += prob * detail::cell_mean(sc, 0, 1, cov, lat);
  });
  t.ey_0z0 = e00;
  t.ey_1z0 = e10;
  t.ey_1z1 = e11;
  t.ey_0z1 = e01;
  t.nde = e10 - e00;
  t.nie = e11 - e10;
  t.te = t.nde + t.nie;
  return t;
}

// Brute-force ground truth: averages the four counterfactual outcomes
// over fresh potential tables. SEs use the per-draw pairing, so effect
// SEs account for the covariance between the paired means.
inline TruthValues compute_truth_mc(const Scenario& sc, std::size_t draws,
                                    std::uint64_t seed) {
  validate_scenario(sc);
  if (draws < 2) throw_config("Monte Carlo truth needs at least 2 draws");
  TruthValues t;
  t.exact = false;
  t.mc_draws = draws;
  // Welford accumulators for 7 quantities.
  double mean[7] = {0}, m2[7] = {0};
  Rng rng(seed);
  for (std::size_t i = 0; i < draws; ++i) {
    const auto u = detail::draw_unit(sc, rng, false);
    const double v00 = u.z0 ? u.y[0][1] : u.y[0][0];
    const double v10 = u.z0 ? u.y[1][1] : u.y[1][0];
    const double v11 = u.z1 ? u.y[1][1] : u.y[1][0];
    const double v01 = u.z1 ? u.y[0][1] : u.y[0][0];
    const double vals[7] = {v00, v10, v11, v01, v10 - v00, v11 - v10, v11 - v00};
    const double k = static_cast<double>(i + 1);
    for (int j = 0; j < 7; ++j) {
      const double delta = vals[j] - mean[j];
      mean[j] += delta / k;
      m2[j] += delta * (vals[j] - mean[j]);
    }
  }
  const double n = static_cast<double>(draws);
  auto se = [&](int j) { return std::sqrt(m2[j] / (n - 1.0) / n); };
  t.ey_0z0 = mean[0];
  t.ey_1z0 = mean[1];
  t.ey_1z1 = mean[2];
  t.ey_0z1 = mean[3];
  t.nde = mean[4];
  t.nie = mean[5];
  t.te = mean[6];
  t.se_ey_0z0 = se(0);
  t.se_ey_1z0 = se(1);
  t.se_ey_1z1 = se(2);
  t.se_ey_0z1 = se(3);
  t.se_nde = se(4);
  t.se_nie = se(5);
  t.se_te = se(6);
  return t;
}

inline TruthValues compute_truth(const Scenario& sc, std::size_t mc_draws,
                                 std::uint64_t mc_seed) {
  if (sc.all_discrete()) return compute_truth_exact(sc);
  return compute_truth_mc(sc, mc_draws, mc_seed);
}

// True unit-level scores implied by the scenario, marginalizing latent
// causes analytically. These bypass score estimation so tests can check
// the weighting identities themselves.
inline PropensityScores true_scores(const Scenario& sc, const Dataset& ds) {
  validate_scenario(sc);
  const std::size_t n = ds.size();
  PropensityScores s;
  s.randomized = sc.treatment.randomized;

  // Latent prior combinations (independent Bernoulli).
  const std::size_t nl = sc.latents.size();
  if (nl > 20) throw_config("latent enumeration limited to 20 variables");
  std::vector<std::pair<double, std::vector<double>>> latent_support;
  for (std::uint64_t mask = 0; mask < (1ULL << nl); ++mask) {
    double prob = 1.0;
    std::vector<double> lat(nl);
    for (std::size_t j = 0; j < nl; ++j) {
      const bool one = (mask >> j) & 1ULL;
      lat[j] = one ? 1.0 : 0.0;
      prob *= one ? sc.latents[j].p : 1.0 - sc.latents[j].p;
    }
    latent_support.emplace_back(prob, std::move(lat));
  }

  std::vector<double> cov(sc.covariates.size());
  auto fill_cov = [&](std::size_t i) {
    for (std::size_t j = 0; j < sc.covariates.size(); ++j) {
      cov[j] = ds.covariate(sc.covariates[j].name)[i];
    }
  };

  s.theta_treat.assign(n, 0.0);
  std::size_t treated = 0;
  for (std::size_t i = 0; i < n; ++i) treated += static_cast<std::size_t>(ds.treatment[i]);
  if (sc.treatment.randomized) {
    s.marginal_treated = sc.treatment.p;
    s.theta_treat.assign(n, sc.treatment.p);
  } else {
    // Sample share as the marginal; the scores themselves are exact.
    s.marginal_treated = static_cast<double>(treated) / static_cast<double>(n);
    for (std::size_t i = 0; i < n; ++i) {
      fill_cov(i);
      detail::TermContext ctx{&sc, cov.data(), nullptr, 0.0, 0.0, false, false};
      s.theta_treat[i] = inv_logit(detail::eval_terms(sc.treatment.model, ctx));
    }
  }

  // pr(Z_a = 1 | covariates) marginalizes latents and, when present, L_a.
  auto marginal_mediator = [&](int arm, std::size_t i) {
    fill_cov(i);
    double total = 0.0;
    for (const auto& [pu, lat] : latent_support) {
      double inner = 0.0;
      if (sc.post) {
        const double pl = detail::post_prob(sc, arm, cov.data(), lat.data());
        inner = pl * detail::mediator_prob(sc, arm, cov.data(), lat.data(), 1.0) +
                (1.0 - pl) * detail::mediator_prob(sc, arm, cov.data(), lat.data(), 0.0);
      } else {
        inner = detail::mediator_prob(sc, arm, cov.data(), lat.data(), 0.0);
      }
      total += pu * inner;
    }
    return total;
  };
  for (int arm = 0; arm < 2; ++arm) {
    s.theta_med[arm].assign(n, 0.0);
    for (std::size_t i = 0; i < n; ++i) s.theta_med[arm][i] = marginal_mediator(arm, i);
  }

  if (sc.post) {
    // pr(Z_1 = 1 | covariates, L_1): latent posterior given observed L_1.
    s.theta_med_post.assign(n, std::numeric_limits<double>::quiet_NaN());
    const auto& lcol = ds.post_treatment_column(sc.post->name);
    for (std::size_t i = 0; i < n; ++i) {
      if (ds.treatment[i] != 1) continue;
      fill_cov(i);
      const double l_obs = lcol[i];
      double norm = 0.0, total = 0.0;
      for (const auto& [pu, lat] : latent_support) {
        const double pl1 = detail::post_prob(sc, 1, cov.data(), lat.data());
        const double pl = l_obs == 1.0 ? pl1 : 1.0 - pl1;
        const double w = pu * pl;
        norm += w;
        total += w * detail::mediator_prob(sc, 1, cov.data(), lat.data(), l_obs);
      }
      if (norm <= 0.0)
        throw_numeric("post-treatment value with zero probability at unit " +
                      std::to_string(i));
      s.theta_med_post[i] = total / norm;
    }
    s.has_post_scores = true;
  }
  return s;
}

// One estimator configuration inside a replication study.
struct EstimatorSpec {
  enum class Kind {
    RmpwParametric,
    RmpwStratified,
    PathAnalysis,
    RegressionImpute,
    Oracle
  };
  Kind kind = Kind::RmpwStratified;
  int strata = 5;
  bool use_post = false;
  bool true_scores = false;  // bypass score estimation with scenario truths
  SeMethod se = SeMethod::Robust;

  std::string label() const {
    std::string base;
    switch (kind) {
      case Kind::RmpwParametric: base = "parametric"; break;
      case Kind::RmpwStratified:
        base = "stratified(k=" + std::to_string(strata) + ")";
        break;
      case Kind::PathAnalysis: return "path-analysis";
      case Kind::RegressionImpute: return "regression-impute";
      case Kind::Oracle: return "oracle";
    }
    if (use_post) base += "+post";
    if (true_scores) base += "+true-scores";
    return base;
  }
};

struct ParamStats {
  double mean_bias = 0.0;
  double sd = 0.0;
  double rmse = 0.0;
  double mean_se = std::numeric_limits<double>::quiet_NaN();
  double coverage = std::numeric_limits<double>::quiet_NaN();
  std::size_t n_se = 0;  // replicates contributing SE/coverage
};

struct ConfigStudy {
  EstimatorSpec spec;
  std::string label;
  std::size_t failures = 0;
  ParamStats nde, nie, te;
};

struct StudyReport {
  std::string scenario_name;
  std::size_t reps = 0;
  std::size_t n = 0;
  std::uint64_t seed = 0;
  TruthValues truth;
  std::vector<ConfigStudy> configs;
};

namespace detail {

struct ReplicateEstimates {
  bool ok = false;
  double est[3] = {0, 0, 0};  // nde, nie, te
  double se[3] = {std::numeric_limits<double>::quiet_NaN(),
                  std::numeric_limits<double>::quiet_NaN(),
                  std::numeric_limits<double>::quiet_NaN()};
};

inline ReplicateEstimates run_estimator(const EstimatorSpec& spec, const Scenario& sc,
                                        const Dataset& ds, const TruthValues& truth) {
  ReplicateEstimates r;
  switch (spec.kind) {
    case EstimatorSpec::Kind::Oracle: {
      r.est[0] = truth.nde;
      r.est[1] = truth.nie;
      r.est[2] = truth.te;
      r.se[0] = r.se[1] = r.se[2] = 0.0;
      r.ok = true;
      return r;
    }
    case EstimatorSpec::Kind::PathAnalysis: {
      const auto fit = path_analysis_baseline(ds, !ds.covariate_names.empty());
      r.est[0] = fit.c;
      r.est[1] = fit.indirect;
      r.est[2] = fit.total;
      r.ok = true;
      return r;
    }
    case EstimatorSpec::Kind::RegressionImpute: {
      const auto fit = petersen_baseline(ds, sc.treatment.randomized);
      r.est[0] = fit.direct;
      r.est[1] = fit.indirect;
      r.est[2] = fit.total;
      r.ok = true;
      return r;
    }
    case EstimatorSpec::Kind::RmpwParametric:
    case EstimatorSpec::Kind::RmpwStratified: {
      AnalysisConfig cfg;
      cfg.weight_method = spec.kind == EstimatorSpec::Kind::RmpwParametric
                              ? WeightRule::Parametric
                              : WeightRule::Stratified;
      cfg.strata = spec.strata;
      cfg.randomized = sc.treatment.randomized;
      cfg.use_post_treatment = spec.use_post;
      cfg.family = sc.outcome.family;
      cfg.se_method = spec.se;
      std::optional<PropensityScores> ts;
      if (spec.true_scores) ts = true_scores(sc, ds);
      const PipelineResult pr =
          run_pipeline(ds, cfg, ts ? &ts.value() : nullptr);
      r.est[0] = pr.estimates.direct.estimate;
      r.est[1] = pr.estimates.mediated.estimate;
      r.est[2] = pr.estimates.total.estimate;
      if (spec.se == SeMethod::Robust) {
        r.se[0] = pr.estimates.direct.se;
        r.se[1] = pr.estimates.mediated.se;
        r.se[2] = pr.estimates.total.se;
      }
      r.ok = true;
      return r;
    }
  }
  throw_config("unknown estimator kind");
}

}  // namespace detail

// Replication study: per estimator and per parameter (NDE, NIE, TE),
// mean bias, empirical SD, RMSE, mean estimated SE, and 95% CI
// coverage. Replicate r draws data from a counter-derived sub-seed, so
// the report is identical for any thread count.
inline StudyReport run_study(const Scenario& sc,
                             const std::vector<EstimatorSpec>& specs,
                             std::size_t reps, std::size_t n, std::uint64_t seed,
                             int threads = 1) {
  if (reps < 2) throw_config("a study needs at least 2 replicates");
  if (specs.empty()) throw_config("a study needs at least one estimator");
  validate_scenario(sc);
  StudyReport report;
  report.scenario_name = sc.name;
  report.reps = reps;
  report.n = n;
  report.seed = seed;
  // Truth seed is drawn far outside the replicate counter range.
  report.truth = compute_truth(sc, 1000000, derive_seed(seed, 0xfffffffffffffff0ULL));

  std::vector<std::vector<detail::ReplicateEstimates>> grid(
      reps, std::vector<detail::ReplicateEstimates>(specs.size()));
  parallel_for(reps, threads, [&](std::size_t r) {
    const GeneratedData g = generate(sc, n, derive_seed(seed, r));
    for (std::size_t c = 0; c < specs.size(); ++c) {
      try {
        grid[r][c] = detail::run_estimator(specs[c], sc, g.data, report.truth);
      } catch (const Error&) {
        grid[r][c].ok = false;
      }
    }
  });

  const double truth_val[3] = {report.truth.nde, report.truth.nie, report.truth.te};
  for (std::size_t c = 0; c < specs.size(); ++c) {
    ConfigStudy cs;
    cs.spec = specs[c];
    cs.label = specs[c].label();
    ParamStats* stats[3] = {&cs.nde, &cs.nie, &cs.te};
    for (int p = 0; p < 3; ++p) {
      double sum = 0.0, sum_sq = 0.0, se_sum = 0.0;
      std::size_t ok = 0, n_se = 0, covered = 0;
      for (std::size_t r = 0; r < reps; ++r) {
        const auto& rep = grid[r][c];
        if (!rep.ok) continue;
        ++ok;
        sum += rep.est[p];
        sum_sq += (rep.est[p] - truth_val[p]) * (rep.est[p] - truth_val[p]);
        if (!std::isnan(rep.se[p])) {
          ++n_se;
          se_sum += rep.se[p];
          if (std::abs(rep.est[p] - truth_val[p]) <= kZ975 * rep.se[p]) ++covered;
        }
      }
      if (p == 0) cs.failures = reps - ok;
      if (ok == 0) continue;
      const double mean_est = sum / static_cast<double>(ok);
      stats[p]->mean_bias = mean_est - truth_val[p];
      double ss = 0.0;
      for (std::size_t r = 0; r < reps; ++r)
        if (grid[r][c].ok)
          ss += (grid[r][c].est[p] - mean_est) * (grid[r][c].est[p] - mean_est);
      stats[p]->sd = ok > 1 ? std::sqrt(ss / static_cast<double>(ok - 1)) : 0.0;
      stats[p]->rmse = std::sqrt(sum_sq / static_cast<double>(ok));
      stats[p]->n_se = n_se;
      if (n_se > 0) {
        stats[p]->mean_se = se_sum / static_cast<double>(n_se);
        stats[p]->coverage =
            static_cast<double>(covered) / static_cast<double>(n_se);
      }
    }
    if (static_cast<double>(cs.failures) > 0.05 * static_cast<double>(reps))
      throw_numeric("estimator '" + cs.label + "' failed on " +
                    std::to_string(cs.failures) + " of " + std::to_string(reps) +
                    " replicates (more than 5%)");
    report.configs.push_back(std::move(cs));
  }
  return report;
}

// ---------------------------------------------------------------------------
// Scenario files: a strict JSON schema. Unknown keys are errors naming
// the key and its location, so typos cannot silently disable a setting.

namespace detail {

inline void expect_object(const nlohmann::json& j, const std::string& where) {
  if (!j.is_object()) throw_config(where + " must be an object");
}

inline void check_keys(const nlohmann::json& j, const std::string& where,
                       const std::set<std::string>& allowed) {
  for (const auto& [key, value] : j.items())
    if (allowed.find(key) == allowed.end())
      throw_config("unknown key '" + key + "' in " + where);
}

inline double get_number(const nlohmann::json& j, const std::string& where,
                         const std::string& key, std::optional<double> fallback = {}) {
  if (!j.contains(key)) {
    if (fallback) return *fallback;
    throw_config("missing key '" + key + "' in " + where);
  }
  if (!j.at(key).is_number())
    throw_config("key '" + key + "' in " + where + " must be a number");
  return j.at(key).get<double>();
}

inline std::string get_string(const nlohmann::json& j, const std::string& where,
                              const std::string& key,
                              std::optional<std::string> fallback = {}) {
  if (!j.contains(key)) {
    if (fallback) return *fallback;
    throw_config("missing key '" + key + "' in " + where);
  }
  if (!j.at(key).is_string())
    throw_config("key '" + key + "' in " + where + " must be a string");
  return j.at(key).get<std::string>();
}

inline LinearTerms parse_terms(const nlohmann::json& j, const std::string& where) {
  expect_object(j, where);
  check_keys(j, where, {"intercept", "coef"});
  LinearTerms t;
  t.intercept = get_number(j, where, "intercept", 0.0);
  if (j.contains("coef")) {
    expect_object(j.at("coef"), where + ".coef");
    for (const auto& [name, value] : j.at("coef").items()) {
      if (!value.is_number())
        throw_config("coefficient '" + name + "' in " + where + " must be a number");
      t.coef.emplace_back(name, value.get<double>());
    }
  }
  return t;
}

inline CovariateSpec parse_covariate(const nlohmann::json& j, const std::string& where) {
  expect_object(j, where);
  CovariateSpec c;
  c.name = get_string(j, where, "name");
  const std::string dist = get_string(j, where, "dist");
  if (dist == "bernoulli") {
    check_keys(j, where, {"name", "dist", "p"});
    c.dist = CovariateSpec::Dist::Bernoulli;
    c.p = get_number(j, where, "p", 0.5);
  } else if (dist == "normal") {
    check_keys(j, where, {"name", "dist", "mean", "sd"});
    c.dist = CovariateSpec::Dist::Normal;
    c.mean = get_number(j, where, "mean", 0.0);
    c.sd = get_number(j, where, "sd", 1.0);
    if (!(c.sd > 0.0)) throw_config("sd for '" + c.name + "' must be positive");
  } else {
    throw_config("dist for '" + c.name + "' in " + where +
                 " must be 'bernoulli' or 'normal'");
  }
  return c;
}

}  // namespace detail

inline Scenario parse_scenario(const nlohmann::json& j, const std::string& source) {
  detail::expect_object(j, source);
  detail::check_keys(j, source,
                     {"name", "seed", "covariates", "latents", "treatment",
                      "post_treatment", "mediator", "outcome"});
  Scenario sc;
  sc.name = detail::get_string(j, source, "name", std::string("scenario"));
  if (j.contains("seed")) {
    if (!j.at("seed").is_number_unsigned())
      throw_config("key 'seed' in " + source + " must be a nonnegative integer");
    sc.seed = j.at("seed").get<std::uint64_t>();
  }
  if (j.contains("covariates")) {
    if (!j.at("covariates").is_array())
      throw_config("key 'covariates' in " + source + " must be an array");
    std::size_t k = 0;
    for (const auto& item : j.at("covariates"))
      sc.covariates.push_back(detail::parse_covariate(
          item, source + ".covariates[" + std::to_string(k++) + "]"));
  }
  if (j.contains("latents")) {
    if (!j.at("latents").is_array())
      throw_config("key 'latents' in " + source + " must be an array");
    std::size_t k = 0;
    for (const auto& item : j.at("latents"))
      sc.latents.push_back(detail::parse_covariate(
          item, source + ".latents[" + std::to_string(k++) + "]"));
  }

  if (!j.contains("treatment"))
    throw_config("missing key 'treatment' in " + source);
  {
    const auto& t = j.at("treatment");
    const std::string where = source + ".treatment";
    detail::expect_object(t, where);
    detail::check_keys(t, where, {"randomized", "p", "model"});
    if (!t.contains("randomized") || !t.at("randomized").is_boolean())
      throw_config("key 'randomized' in " + where + " must be a boolean");
    sc.treatment.randomized = t.at("randomized").get<bool>();
    if (sc.treatment.randomized) {
      if (t.contains("model"))
        throw_config("randomized treatment takes no 'model' in " + where);
      sc.treatment.p = detail::get_number(t, where, "p", 0.5);
    } else {
      if (t.contains("p"))
        throw_config("non-randomized treatment takes no 'p' in " + where);
      if (!t.contains("model"))
        throw_config("missing key 'model' in " + where);
      sc.treatment.model = detail::parse_terms(t.at("model"), where + ".model");
    }
  }

  if (j.contains("post_treatment")) {
    const auto& p = j.at("post_treatment");
    const std::string where = source + ".post_treatment";
    detail::expect_object(p, where);
    detail::check_keys(p, where, {"name", "model"});
    PostTreatmentSpec ps;
    ps.name = detail::get_string(p, where, "name");
    if (!p.contains("model")) throw_config("missing key 'model' in " + where);
    ps.model = detail::parse_terms(p.at("model"), where + ".model");
    sc.post = std::move(ps);
  }

  if (!j.contains("mediator")) throw_config("missing key 'mediator' in " + source);
  {
    const auto& m = j.at("mediator");
    const std::string where = source + ".mediator";
    detail::expect_object(m, where);
    detail::check_keys(m, where, {"control", "treated"});
    if (!m.contains("control") || !m.contains("treated"))
      throw_config(where + " needs 'control' and 'treated' models");
    sc.mediator_model[0] = detail::parse_terms(m.at("control"), where + ".control");
    sc.mediator_model[1] = detail::parse_terms(m.at("treated"), where + ".treated");
  }

  if (!j.contains("outcome")) throw_config("missing key 'outcome' in " + source);
  {
    const auto& o = j.at("outcome");
    const std::string where = source + ".outcome";
    detail::expect_object(o, where);
    detail::check_keys(o, where,
                       {"family", "intercept", "treatment", "mediator",
                        "interaction", "covariates", "post", "mediator_post",
                        "sigma"});
    const std::string family = detail::get_string(o, where, "family",
                                                  std::string("gaussian"));
    if (family == "gaussian") {
      sc.outcome.family = Family::Gaussian;
    } else if (family == "binomial") {
      sc.outcome.family = Family::BinomialLogit;
      if (o.contains("sigma"))
        throw_config("'sigma' applies only to the gaussian family in " + where);
    } else {
      throw_config("family in " + where + " must be 'gaussian' or 'binomial'");
    }
    sc.outcome.intercept = detail::get_number(o, where, "intercept", 0.0);
    sc.outcome.treatment = detail::get_number(o, where, "treatment", 0.0);
    sc.outcome.mediator = detail::get_number(o, where, "mediator", 0.0);
    sc.outcome.interaction = detail::get_number(o, where, "interaction", 0.0);
    sc.outcome.post = detail::get_number(o, where, "post", 0.0);
    sc.outcome.mediator_post = detail::get_number(o, where, "mediator_post", 0.0);
    sc.outcome.sigma = detail::get_number(o, where, "sigma", 1.0);
    if (o.contains("covariates")) {
      detail::expect_object(o.at("covariates"), where + ".covariates");
      for (const auto& [name, value] : o.at("covariates").items()) {
        if (!value.is_number())
          throw_config("coefficient '" + name + "' in " + where +
                       ".covariates must be a number");
        sc.outcome.covariates.coef.emplace_back(name, value.get<double>());
      }
    }
  }
  validate_scenario(sc);
  return sc;
}

inline Scenario load_scenario(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw_config("cannot open scenario file '" + path + "'");
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(in);
  } catch (const nlohmann::json::parse_error& e) {
    throw_config("scenario file '" + path + "' is not valid JSON: " + e.what());
  }
  return parse_scenario(j, "scenario '" + path + "'");
}

}  // namespace rmpw

#pragma once

// Propensity machinery: treatment and mediator score models, a small
// terms language for design matrices, quantile stratification, and
// common-support reporting.

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <limits>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "rmpw/data.hpp"
#include "rmpw/glm.hpp"

namespace rmpw {

// Model terms are a comma list of column names and `:`-separated
// products ("x1,x2,x1:x2"). "1" alone means intercept-only. An empty
// spec means main effects of every available column. The intercept is
// always included.
namespace detail {

inline const std::vector<double>& named_column(const Dataset& ds,
                                               const std::string& name,
                                               bool include_post) {
  for (std::size_t j = 0; j < ds.covariate_names.size(); ++j)
    if (ds.covariate_names[j] == name) return ds.covariates[j];
  if (include_post)
    for (std::size_t j = 0; j < ds.post_treatment_names.size(); ++j)
      if (ds.post_treatment_names[j] == name) return ds.post_treatment[j];
  throw_config("model term references unknown column '" + name + "'");
}

inline std::vector<std::string> split_list(const std::string& spec, char sep) {
  std::vector<std::string> out;
  std::string tok;
  std::istringstream in(spec);
  while (std::getline(in, tok, sep)) {
    const auto t = trim(tok);
    if (!t.empty()) out.emplace_back(t);
  }
  return out;
}

}  // namespace detail

struct TermsDesign {
  Eigen::MatrixXd matrix;  // n x (1 + terms), leading intercept
  std::vector<std::string> names;
};

inline TermsDesign build_design(const Dataset& ds, const std::string& terms,
                                bool include_post) {
  const std::size_t n = ds.size();
  std::vector<std::pair<std::string, std::vector<double>>> cols;
  if (terms.empty()) {
    for (std::size_t j = 0; j < ds.covariate_names.size(); ++j)
      cols.emplace_back(ds.covariate_names[j], ds.covariates[j]);
    if (include_post)
      for (std::size_t j = 0; j < ds.post_treatment_names.size(); ++j)
        cols.emplace_back(ds.post_treatment_names[j], ds.post_treatment[j]);
  } else {
    for (const auto& tok : detail::split_list(terms, ',')) {
      if (tok == "1") continue;
      const auto factors = detail::split_list(tok, ':');
      if (factors.empty()) throw_config("empty model term in '" + terms + "'");
      std::vector<double> col(n, 1.0);
      for (const auto& f : factors) {
        const auto& src = detail::named_column(ds, f, include_post);
        for (std::size_t i = 0; i < n; ++i) col[i] *= src[i];
      }
      cols.emplace_back(tok, std::move(col));
    }
  }
  TermsDesign design;
  design.matrix.resize(static_cast<Eigen::Index>(n),
                       static_cast<Eigen::Index>(1 + cols.size()));
  design.matrix.col(0).setOnes();
  design.names = {"1"};
  for (std::size_t j = 0; j < cols.size(); ++j) {
    design.names.push_back(cols[j].first);
    for (std::size_t i = 0; i < n; ++i)
      design.matrix(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j + 1)) =
          cols[j].second[i];
  }
  return design;
}

// Unit-level scores feeding the weight constructions.
//   theta_treat:  p(A=1 | X), constant under a randomized design
//   theta_med[a]: p(Z=1 | A=a, X) for every unit
//   theta_med_post: p(Z=1 | A=1, X, L), treated units only (NaN elsewhere)
struct PropensityScores {
  double marginal_treated = 0.0;  // sample share with A=1
  bool randomized = false;
  std::vector<double> theta_treat;
  std::array<std::vector<double>, 2> theta_med;
  std::vector<double> theta_med_post;
  bool has_post_scores = false;
  std::optional<GlmFit> treatment_fit;
  std::array<std::optional<GlmFit>, 2> mediator_fit;
  std::optional<GlmFit> mediator_post_fit;
};

namespace detail {

inline std::vector<Eigen::Index> arm_rows(const Dataset& ds, int arm) {
  std::vector<Eigen::Index> rows;
  for (std::size_t i = 0; i < ds.size(); ++i)
    if (ds.treatment[i] == arm) rows.push_back(static_cast<Eigen::Index>(i));
  return rows;
}

inline Eigen::MatrixXd gather_rows(const Eigen::MatrixXd& m,
                                   const std::vector<Eigen::Index>& rows) {
  Eigen::MatrixXd out(static_cast<Eigen::Index>(rows.size()), m.cols());
  for (std::size_t k = 0; k < rows.size(); ++k) out.row(static_cast<Eigen::Index>(k)) = m.row(rows[k]);
  return out;
}

}  // namespace detail

// Logistic mediator model within one arm, evaluated for every unit
// (or, with include_post, only for that arm's units). Degenerate
// responses are reported as a positivity failure for the arm.
inline std::pair<std::vector<double>, GlmFit> fit_mediator_propensity(
    const Dataset& ds, int arm, bool include_post, const std::string& terms) {
  if (arm != 0 && arm != 1) throw_config("arm must be 0 or 1");
  if (include_post && arm == 0)
    throw_config("post-treatment adjustment applies to the treated arm only");
  if (include_post && ds.post_treatment_names.empty())
    throw_config("post-treatment adjustment requested but no such columns are bound");
  const auto rows = detail::arm_rows(ds, arm);
  if (rows.empty())
    throw_data("treatment arm " + std::to_string(arm) + " is empty");
  const auto design = build_design(ds, terms, include_post);
  const auto sub = detail::gather_rows(design.matrix, rows);
  Eigen::VectorXd z(static_cast<Eigen::Index>(rows.size()));
  for (std::size_t k = 0; k < rows.size(); ++k)
    z(static_cast<Eigen::Index>(k)) = ds.mediator[rows[k]];
  GlmFit fit;
  try {
    fit = fit_logistic(sub, z, Eigen::VectorXd::Ones(sub.rows()), design.names);
  } catch (const Error& e) {
    if (e.kind() == ErrorKind::Numeric)
      throw_numeric("mediator model in arm " + std::to_string(arm) +
                    " failed; check that both mediator values occur in this "
                    "arm at all covariate levels (" + std::string(e.what()) + ")");
    throw;
  }
  std::vector<double> theta(ds.size(), std::numeric_limits<double>::quiet_NaN());
  if (include_post) {
    const Eigen::VectorXd p = predict_prob(fit, sub);
    for (std::size_t k = 0; k < rows.size(); ++k) theta[static_cast<std::size_t>(rows[k])] = p(static_cast<Eigen::Index>(k));
  } else {
    const Eigen::VectorXd p = predict_prob(fit, design.matrix);
    for (std::size_t i = 0; i < ds.size(); ++i) theta[i] = p(static_cast<Eigen::Index>(i));
  }
  return {std::move(theta), std::move(fit)};
}

// Fits every score model the weighting stage needs. Randomized designs
// pin the treatment score at the sample share instead of fitting it.
inline PropensityScores estimate_scores(const Dataset& ds, bool randomized,
                                        bool include_post,
                                        const std::string& treatment_terms = "",
                                        const std::string& mediator_terms = "") {
  PropensityScores s;
  s.randomized = randomized;
  const std::size_t n = ds.size();
  std::size_t treated = 0;
  for (int a : ds.treatment) treated += static_cast<std::size_t>(a);
  if (treated == 0 || treated == n)
    throw_data("treatment arm " + std::to_string(treated == 0 ? 1 : 0) +
               " is empty; both arms are required");
  s.marginal_treated = static_cast<double>(treated) / static_cast<double>(n);

  if (randomized) {
    s.theta_treat.assign(n, s.marginal_treated);
  } else {
    if (ds.covariate_names.empty())
      throw_config(
          "a non-randomized design needs covariates for the treatment model; "
          "pass --randomized if assignment was in fact randomized");
    const auto design = build_design(ds, treatment_terms, false);
    Eigen::VectorXd a(static_cast<Eigen::Index>(n));
    for (std::size_t i = 0; i < n; ++i) a(static_cast<Eigen::Index>(i)) = ds.treatment[i];
    GlmFit fit = fit_logistic(design.matrix, a, Eigen::VectorXd::Ones(a.size()),
                              design.names);
    const Eigen::VectorXd p = predict_prob(fit, design.matrix);
    s.theta_treat.assign(n, 0.0);
    for (std::size_t i = 0; i < n; ++i) s.theta_treat[i] = p(static_cast<Eigen::Index>(i));
    s.treatment_fit = std::move(fit);
  }

  for (int arm = 0; arm < 2; ++arm) {
    // Intercept-only mediator models are still valid when no covariates
    // are bound.
    const std::string terms =
        (mediator_terms.empty() && ds.covariate_names.empty()) ? "1" : mediator_terms;
    auto [theta, fit] = fit_mediator_propensity(ds, arm, false, terms);
    s.theta_med[arm] = std::move(theta);
    s.mediator_fit[arm] = std::move(fit);
  }
  if (include_post) {
    auto [theta, fit] = fit_mediator_propensity(ds, 1, true, mediator_terms);
    s.theta_med_post = std::move(theta);
    s.mediator_post_fit = std::move(fit);
    s.has_post_scores = true;
  }
  return s;
}

// Score-quantile strata. Units are labeled 1..n_strata; cutpoints are
// type-7 quantiles of the full score vector; a unit goes to the lowest
// stratum whose upper cutpoint is >= its score (ties fall low). Strata
// emptied by heavy ties are merged downward and noted.
struct StratumAssignment {
  std::string basis;          // which score was cut
  int requested = 0;          // K as requested
  int n_strata = 0;           // effective count after merges
  std::vector<double> cutpoints;
  std::vector<int> stratum;   // 1..n_strata; 0 where score was NaN
  std::vector<std::string> notes;
};

inline StratumAssignment stratify(const std::vector<double>& scores, int k,
                                  const std::string& basis) {
  if (k < 2) throw_config("stratum count must be at least 2");
  StratumAssignment out;
  out.basis = basis;
  out.requested = k;
  std::vector<double> present;
  present.reserve(scores.size());
  for (double v : scores)
    if (!std::isnan(v)) present.push_back(v);
  if (present.empty()) throw_data("no scores available to stratify on " + basis);
  std::sort(present.begin(), present.end());
  for (int j = 1; j < k; ++j)
    out.cutpoints.push_back(
        quantile_sorted(present, static_cast<double>(j) / static_cast<double>(k)));

  const std::size_t distinct =
      static_cast<std::size_t>(std::unique(present.begin(), present.end()) - present.begin());
  if (distinct < static_cast<std::size_t>(k))
    out.notes.push_back(basis + ": only " + std::to_string(distinct) +
                        " distinct score values for " + std::to_string(k) +
                        " requested strata");

  out.stratum.assign(scores.size(), 0);
  std::vector<std::size_t> occupancy(static_cast<std::size_t>(k) + 1, 0);
  for (std::size_t i = 0; i < scores.size(); ++i) {
    if (std::isnan(scores[i])) continue;
    int sidx = 1;
    for (double c : out.cutpoints)
      if (scores[i] > c) ++sidx;
    out.stratum[i] = sidx;
    ++occupancy[static_cast<std::size_t>(sidx)];
  }
  std::vector<int> relabel(static_cast<std::size_t>(k) + 1, 0);
  int next = 0;
  for (int j = 1; j <= k; ++j) {
    if (occupancy[static_cast<std::size_t>(j)] > 0) {
      relabel[static_cast<std::size_t>(j)] = ++next;
    } else {
      out.notes.push_back(basis + ": stratum " + std::to_string(j) +
                          " is empty and was merged downward");
    }
  }
  out.n_strata = next;
  for (auto& sidx : out.stratum)
    if (sidx > 0) sidx = relabel[static_cast<std::size_t>(sidx)];
  return out;
}

// Common-support diagnostics: units whose score falls outside the
// opposite arm's observed score range, and empty arm-by-mediator cells
// within strata.
struct SupportFlag {
  std::size_t unit = 0;
  std::string score;
  double value = 0.0;
  double opposite_min = 0.0;
  double opposite_max = 0.0;
};

struct StratumCellFlag {
  std::string basis;
  int stratum = 0;
  int arm = 0;
  int mediator = 0;
};

struct SupportReport {
  std::vector<SupportFlag> off_support;
  std::vector<StratumCellFlag> empty_cells;
};

inline SupportReport overlap_report(const Dataset& ds, const PropensityScores& scores,
                                    const std::vector<const StratumAssignment*>& strata = {}) {
  SupportReport rep;
  auto flag_score = [&](const std::string& name, const std::vector<double>& v) {
    std::array<double, 2> lo{std::numeric_limits<double>::infinity(),
                             std::numeric_limits<double>::infinity()};
    std::array<double, 2> hi{-std::numeric_limits<double>::infinity(),
                             -std::numeric_limits<double>::infinity()};
    for (std::size_t i = 0; i < ds.size(); ++i) {
      if (std::isnan(v[i])) continue;
      const int a = ds.treatment[i];
      lo[a] = std::min(lo[a], v[i]);
      hi[a] = std::max(hi[a], v[i]);
    }
    for (std::size_t i = 0; i < ds.size(); ++i) {
      if (std::isnan(v[i])) continue;
      const int other = 1 - ds.treatment[i];
      if (!std::isfinite(lo[other])) continue;  // score only observed in one arm
      if (v[i] < lo[other] || v[i] > hi[other])
        rep.off_support.push_back({i, name, v[i], lo[other], hi[other]});
    }
  };
  if (!scores.randomized) flag_score("treatment", scores.theta_treat);
  flag_score("mediator_control", scores.theta_med[0]);
  flag_score("mediator_treated", scores.theta_med[1]);

  for (const auto* sa : strata) {
    if (sa == nullptr) continue;
    // counts[stratum][arm][z]
    std::vector<std::array<std::array<std::size_t, 2>, 2>> counts(
        static_cast<std::size_t>(sa->n_strata) + 1);
    for (auto& by_arm : counts) by_arm = {{{0, 0}, {0, 0}}};
    std::array<std::size_t, 2> arm_total{0, 0};
    for (std::size_t i = 0; i < ds.size(); ++i) {
      if (sa->stratum[i] == 0) continue;
      ++counts[static_cast<std::size_t>(sa->stratum[i])][ds.treatment[i]][ds.mediator[i]];
      ++arm_total[ds.treatment[i]];
    }
    for (int sidx = 1; sidx <= sa->n_strata; ++sidx)
      for (int a = 0; a < 2; ++a) {
        if (arm_total[a] == 0) continue;  // basis never covers this arm
        for (int z = 0; z < 2; ++z)
          if (counts[static_cast<std::size_t>(sidx)][a][z] == 0)
            rep.empty_cells.push_back({sa->basis, sidx, a, z});
      }
  }
  return rep;
}

}  // namespace rmpw

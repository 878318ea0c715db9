#pragma once

// Effect estimation. The three weighted counterfactual means are read
// off one regression on an augmented dataset:
//   controls enter once with D=0 and weight w00,
//   treated units enter twice, with D=0 / weight w10 and D=1 / w11.
// Regressing Y on [1, A, A*D] with those weights gives
//   gamma0 = E[Y(0, Z_0)],
//   gamma1 = E[Y(1, Z_0)] - E[Y(0, Z_0)]   (direct effect),
//   gamma2 = E[Y(1, Z_1)] - E[Y(1, Z_0)]   (mediated effect),
// because the design is saturated in the three (A, D) groups.

#include <Eigen/Dense>
#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "rmpw/glm.hpp"
#include "rmpw/weights.hpp"

namespace rmpw {

struct AugmentedRow {
  std::size_t unit = 0;  // row in the source dataset
  int a = 0;
  int d = 0;  // 1 only on the treated duplicate carrying w11
  double y = 0.0;
  double w = 0.0;
};

struct AugmentedDataset {
  std::vector<AugmentedRow> rows;
  std::vector<WeightExclusion> exclusions;
  std::size_t n_controls = 0;
  std::size_t n_treated = 0;  // treated units contributing both rows
};

// Row order is controls, treated D=0, treated D=1, each in dataset
// order. A treated unit excluded from either weight set is dropped from
// both of its rows so the D=0 and D=1 groups stay the same sample.
inline AugmentedDataset build_augmented(const Dataset& ds, const WeightSet& w00,
                                        const WeightSet& w10, const WeightSet& w11) {
  if (w00.a != 0 || w00.a_prime != 0 || w10.a != 1 || w10.a_prime != 0 ||
      w11.a != 1 || w11.a_prime != 1)
    throw_config("augmented dataset needs weights for (0,Z0), (1,Z0), (1,Z1)");
  const std::size_t n = ds.size();
  if (w00.value.size() != n || w10.value.size() != n || w11.value.size() != n)
    throw_config("weight sets disagree with the dataset on unit count");

  auto excluded_in = [](const WeightSet& ws, std::size_t i) {
    for (const auto& e : ws.exclusions)
      if (e.unit == i) return true;
    return false;
  };

  AugmentedDataset aug;
  std::vector<std::size_t> treated_keep;
  for (std::size_t i = 0; i < n; ++i) {
    if (ds.treatment[i] == 0) {
      if (w00.defined[i]) {
        aug.rows.push_back({i, 0, 0, ds.outcome[i], w00.value[i]});
        ++aug.n_controls;
      } else if (excluded_in(w00, i)) {
        // reason propagated below
      } else {
        throw_numeric("control unit " + std::to_string(i) +
                      " has neither a weight nor an exclusion");
      }
    } else {
      const bool in10 = w10.defined[i], in11 = w11.defined[i];
      if (in10 && in11) {
        treated_keep.push_back(i);
      } else if (!excluded_in(w10, i) && !excluded_in(w11, i) && (!in10 || !in11)) {
        throw_numeric("treated unit " + std::to_string(i) +
                      " has neither a weight nor an exclusion");
      }
    }
  }
  for (std::size_t i : treated_keep)
    aug.rows.push_back({i, 1, 0, ds.outcome[i], w10.value[i]});
  for (std::size_t i : treated_keep)
    aug.rows.push_back({i, 1, 1, ds.outcome[i], w11.value[i]});
  aug.n_treated = treated_keep.size();

  for (const auto& e : w00.exclusions) aug.exclusions.push_back(e);
  for (const auto& e : w10.exclusions) aug.exclusions.push_back(e);
  for (const auto& e : w11.exclusions) aug.exclusions.push_back(e);
  return aug;
}

enum class SeMethod { None, Robust, Bootstrap };

inline const char* se_method_name(SeMethod m) {
  switch (m) {
    case SeMethod::None: return "none";
    case SeMethod::Robust: return "robust";
    case SeMethod::Bootstrap: return "bootstrap";
  }
  return "unknown";
}

struct ParamEstimate {
  double estimate = std::numeric_limits<double>::quiet_NaN();
  double se = std::numeric_limits<double>::quiet_NaN();
  double ci_lower = std::numeric_limits<double>::quiet_NaN();
  double ci_upper = std::numeric_limits<double>::quiet_NaN();

  void wald_ci() {
    ci_lower = estimate - kZ975 * se;
    ci_upper = estimate + kZ975 * se;
  }
};

// Effects on the outcome's natural scale. For a gaussian outcome these
// are the regression coefficients themselves; for a binomial outcome
// the regression runs on the logit scale and effects are reported as
// risk differences between the three weighted means, with delta-method
// standard errors. Robust errors cluster on the source unit, since
// treated units appear twice.
struct EffectEstimates {
  Family family = Family::Gaussian;
  SeMethod se_method = SeMethod::None;
  bool covariate_adjusted = false;
  std::size_t n_rows = 0;
  std::size_t n_controls = 0;
  std::size_t n_treated = 0;
  // gamma: coefficients of [1, A, A*D] on the model scale.
  ParamEstimate gamma0, gamma1, gamma2;
  // Counterfactual means on the outcome scale.
  double mean_y_0z0 = 0.0;
  double mean_y_1z0 = 0.0;
  double mean_y_1z1 = 0.0;
  ParamEstimate direct;    // E[Y(1,Z0)] - E[Y(0,Z0)]
  ParamEstimate mediated;  // E[Y(1,Z1)] - E[Y(1,Z0)]
  ParamEstimate total;     // E[Y(1,Z1)] - E[Y(0,Z0)]
  GlmFit fit;
};

// With covariate_source set, that dataset's covariates enter the design
// as main effects for precision; the model is then no longer saturated,
// gamma-to-mean identities become model-based, and binomial risk
// differences are evaluated at covariates = 0.
inline EffectEstimates estimate_effects(const AugmentedDataset& aug, Family family,
                                        SeMethod se_method,
                                        const Dataset* covariate_source = nullptr) {
  if (se_method == SeMethod::Bootstrap)
    throw_config("bootstrap errors are computed by resampling the pipeline, "
                 "not inside estimate_effects");
  const std::size_t m = aug.rows.size();
  if (aug.n_controls == 0) throw_data("no control rows survive weighting");
  if (aug.n_treated == 0) throw_data("no treated rows survive weighting");

  const std::size_t k =
      covariate_source != nullptr ? covariate_source->covariate_names.size() : 0;
  Eigen::MatrixXd x(static_cast<Eigen::Index>(m), static_cast<Eigen::Index>(3 + k));
  Eigen::VectorXd y(static_cast<Eigen::Index>(m)), w(static_cast<Eigen::Index>(m));
  std::vector<std::int64_t> cluster(m);
  double sw[3] = {0, 0, 0}, swy[3] = {0, 0, 0};
  for (std::size_t r = 0; r < m; ++r) {
    const auto& row = aug.rows[r];
    const auto ri = static_cast<Eigen::Index>(r);
    x(ri, 0) = 1.0;
    x(ri, 1) = row.a;
    x(ri, 2) = row.a * row.d;
    for (std::size_t j = 0; j < k; ++j)
      x(ri, static_cast<Eigen::Index>(3 + j)) = covariate_source->covariates[j][row.unit];
    y(ri) = row.y;
    w(ri) = row.w;
    cluster[r] = static_cast<std::int64_t>(row.unit);
    const int g = row.a == 0 ? 0 : (row.d == 0 ? 1 : 2);
    sw[g] += row.w;
    swy[g] += row.w * row.y;
  }
  for (int g = 0; g < 3; ++g)
    if (sw[g] <= 0.0)
      throw_numeric("group " + std::string(g == 0 ? "(A=0)" : g == 1 ? "(A=1,D=0)" : "(A=1,D=1)") +
                    " has zero total weight");

  std::vector<std::string> names = {"1", "a", "a:d"};
  if (covariate_source != nullptr)
    for (const auto& nm : covariate_source->covariate_names) names.push_back(nm);
  EffectEstimates est;
  est.family = family;
  est.se_method = se_method;
  est.covariate_adjusted = k > 0;
  est.n_rows = m;
  est.n_controls = aug.n_controls;
  est.n_treated = aug.n_treated;
  est.mean_y_0z0 = swy[0] / sw[0];
  est.mean_y_1z0 = swy[1] / sw[1];
  est.mean_y_1z1 = swy[2] / sw[2];

  if (family == Family::BinomialLogit) {
    for (std::size_t r = 0; r < m; ++r)
      if (aug.rows[r].y != 0.0 && aug.rows[r].y != 1.0)
        throw_data("binomial family requires a 0/1 outcome; found " +
                   std::to_string(aug.rows[r].y));
    est.fit = fit_logistic(x, y, w, names);
  } else {
    est.fit = fit_wls(x, y, w, names);
  }

  Eigen::MatrixXd vcov =
      Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(3 + k),
                            static_cast<Eigen::Index>(3 + k));
  if (se_method == SeMethod::Robust)
    vcov = sandwich_covariance(est.fit, x, y, w, cluster);
  // Effect contrasts involve only the three group coefficients; for the
  // binomial family the covariate-adjusted probabilities are evaluated
  // at covariates = 0, so covariate-coefficient gradients vanish too.
  const Eigen::Matrix3d vcov3 = vcov.topLeftCorner(3, 3);

  auto coef_param = [&](int j) {
    ParamEstimate p;
    p.estimate = est.fit.coefficients(j);
    if (se_method == SeMethod::Robust) {
      p.se = std::sqrt(std::max(0.0, vcov(j, j)));
      p.wald_ci();
    }
    return p;
  };
  est.gamma0 = coef_param(0);
  est.gamma1 = coef_param(1);
  est.gamma2 = coef_param(2);

  auto contrast = [&](const Eigen::Vector3d& grad, double point) {
    ParamEstimate p;
    p.estimate = point;
    if (se_method == SeMethod::Robust) {
      p.se = std::sqrt(std::max(0.0, double(grad.transpose() * vcov3 * grad)));
      p.wald_ci();
    }
    return p;
  };

  if (family == Family::Gaussian) {
    // Saturated design: coefficients equal the group-mean contrasts.
    est.direct = contrast({0, 1, 0}, est.fit.coefficients(1));
    est.mediated = contrast({0, 0, 1}, est.fit.coefficients(2));
    est.total = contrast({0, 1, 1},
                         est.fit.coefficients(1) + est.fit.coefficients(2));
  } else {
    // Risk differences of the fitted group probabilities; gradients by
    // the delta method through the logit link.
    const double g0 = est.fit.coefficients(0);
    const double g1 = est.fit.coefficients(1);
    const double g2 = est.fit.coefficients(2);
    const double p00 = inv_logit(g0);
    const double p10 = inv_logit(g0 + g1);
    const double p11 = inv_logit(g0 + g1 + g2);
    const double d00 = p00 * (1.0 - p00);
    const double d10 = p10 * (1.0 - p10);
    const double d11 = p11 * (1.0 - p11);
    est.direct = contrast({d10 - d00, d10, 0.0}, p10 - p00);
    est.mediated = contrast({d11 - d10, d11 - d10, d11}, p11 - p10);
    est.total = contrast({d11 - d00, d11, d11}, p11 - p00);
  }
  return est;
}

// Product-of-coefficients baseline from three linear models on the same
// sample,
//   Z = alpha_z + d*A (+ X),
//   Y = alpha_y + b*Z + c*A (+ X),
//   Y = alpha_t + t*A (+ X):
// indirect = b*d, direct = c, total = t. Least squares makes
// t = b*d + c an algebraic identity when all three share the covariate
// set. With a binary outcome this is a linear-probability fit and is
// flagged as such.
struct PathAnalysisFit {
  double d = 0.0;   // A -> Z
  double b = 0.0;   // Z -> Y
  double c = 0.0;   // direct
  double indirect = 0.0;
  double total = 0.0;
  bool adjusted = false;
  bool linear_probability = false;
};

inline PathAnalysisFit path_analysis_baseline(const Dataset& ds, bool adjust_covariates) {
  const auto n = static_cast<Eigen::Index>(ds.size());
  const std::size_t k = adjust_covariates ? ds.covariate_names.size() : 0;
  Eigen::VectorXd ones = Eigen::VectorXd::Ones(n);

  Eigen::MatrixXd xz(n, static_cast<Eigen::Index>(2 + k));
  xz.col(0).setOnes();
  for (Eigen::Index i = 0; i < n; ++i) xz(i, 1) = ds.treatment[static_cast<std::size_t>(i)];
  for (std::size_t j = 0; j < k; ++j)
    for (Eigen::Index i = 0; i < n; ++i)
      xz(i, static_cast<Eigen::Index>(2 + j)) = ds.covariates[j][static_cast<std::size_t>(i)];

  Eigen::VectorXd z(n), y(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    z(i) = ds.mediator[static_cast<std::size_t>(i)];
    y(i) = ds.outcome[static_cast<std::size_t>(i)];
  }

  Eigen::MatrixXd xy(n, static_cast<Eigen::Index>(3 + k));
  xy.col(0).setOnes();
  xy.col(1) = z;
  xy.col(2) = xz.col(1);
  if (k > 0) xy.rightCols(static_cast<Eigen::Index>(k)) = xz.rightCols(static_cast<Eigen::Index>(k));

  PathAnalysisFit out;
  out.adjusted = adjust_covariates;
  out.linear_probability = ds.outcome_is_binary();
  out.d = fit_wls(xz, z, ones).coefficients(1);
  const auto yfit = fit_wls(xy, y, ones);
  out.b = yfit.coefficients(1);
  out.c = yfit.coefficients(2);
  out.indirect = out.b * out.d;
  out.total = fit_wls(xz, y, ones).coefficients(1);
  return out;
}

// Regression-and-impute baseline:
//   1. Y on [1, A, X, Z, A*Z, A*X] by least squares,
//   2. Z on [1, A, X]; predict each unit's mediator value under A=0,
//   3. direct = beta_A + beta_AZ * mean(Zhat0) + sum_j beta_AXj * mean(Xj),
//      total from an IPTW contrast of arm means, indirect = total - direct.
// Covariates are required; three-way A*Z*X terms are not modeled.
struct RegressionImputeFit {
  double direct = 0.0;
  double indirect = 0.0;
  double total = 0.0;
  double mean_zhat0 = 0.0;
};

inline RegressionImputeFit petersen_baseline(const Dataset& ds, bool randomized) {
  const std::size_t k = ds.covariate_names.size();
  if (k == 0)
    throw_config("the regression-impute baseline needs at least one covariate");
  const auto n = static_cast<Eigen::Index>(ds.size());
  Eigen::VectorXd ones = Eigen::VectorXd::Ones(n);

  Eigen::VectorXd a(n), z(n), y(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    a(i) = ds.treatment[static_cast<std::size_t>(i)];
    z(i) = ds.mediator[static_cast<std::size_t>(i)];
    y(i) = ds.outcome[static_cast<std::size_t>(i)];
  }
  Eigen::MatrixXd xmat(n, static_cast<Eigen::Index>(k));
  for (std::size_t j = 0; j < k; ++j)
    for (Eigen::Index i = 0; i < n; ++i)
      xmat(i, static_cast<Eigen::Index>(j)) = ds.covariates[j][static_cast<std::size_t>(i)];

  // Columns: 1, A, X(k), Z, A*Z, A*X(k).
  Eigen::MatrixXd dy(n, static_cast<Eigen::Index>(4 + 2 * k));
  dy.col(0).setOnes();
  dy.col(1) = a;
  dy.middleCols(2, static_cast<Eigen::Index>(k)) = xmat;
  dy.col(static_cast<Eigen::Index>(2 + k)) = z;
  dy.col(static_cast<Eigen::Index>(3 + k)) = a.cwiseProduct(z);
  for (std::size_t j = 0; j < k; ++j)
    dy.col(static_cast<Eigen::Index>(4 + k + j)) = a.cwiseProduct(xmat.col(static_cast<Eigen::Index>(j)));
  const auto yfit = fit_wls(dy, y, ones);

  Eigen::MatrixXd dz(n, static_cast<Eigen::Index>(2 + k));
  dz.col(0).setOnes();
  dz.col(1) = a;
  dz.middleCols(2, static_cast<Eigen::Index>(k)) = xmat;
  const auto zfit = fit_wls(dz, z, ones);

  RegressionImputeFit out;
  // Predicted mediator under control: drop the A column's contribution.
  Eigen::VectorXd zhat0 = dz * zfit.coefficients - a * zfit.coefficients(1);
  out.mean_zhat0 = zhat0.mean();
  double direct = yfit.coefficients(1) +
                  yfit.coefficients(static_cast<Eigen::Index>(3 + k)) * out.mean_zhat0;
  for (std::size_t j = 0; j < k; ++j)
    direct += yfit.coefficients(static_cast<Eigen::Index>(4 + k + j)) *
              xmat.col(static_cast<Eigen::Index>(j)).mean();
  out.direct = direct;

  // IPTW arm contrast for the total effect.
  const double marginal = a.mean();
  Eigen::VectorXd theta(n);
  if (randomized) {
    theta.setConstant(marginal);
  } else {
    Eigen::MatrixXd dt(n, static_cast<Eigen::Index>(1 + k));
    dt.col(0).setOnes();
    dt.middleCols(1, static_cast<Eigen::Index>(k)) = xmat;
    const auto afit = fit_logistic(dt, a, ones);
    theta = predict_prob(afit, dt);
  }
  double sw1 = 0, swy1 = 0, sw0 = 0, swy0 = 0;
  for (Eigen::Index i = 0; i < n; ++i) {
    if (a(i) == 1.0) {
      const double w = marginal / theta(i);
      sw1 += w;
      swy1 += w * y(i);
    } else {
      const double w = (1.0 - marginal) / (1.0 - theta(i));
      sw0 += w;
      swy0 += w * y(i);
    }
  }
  out.total = swy1 / sw1 - swy0 / sw0;
  out.indirect = out.total - out.direct;
  return out;
}

}  // namespace rmpw

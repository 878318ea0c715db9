#pragma once

// Weighted GLM kernels used by every estimator in this library: weighted
// least squares, IRLS logistic regression, and cluster-robust sandwich
// covariance. All solvers run on Eigen dense matrices.

#include <Eigen/Dense>
#include <cmath>
#include <cstdint>
#include <sstream>
#include <string>
#include <unordered_map>
#include <vector>

#include "rmpw/common.hpp"

namespace rmpw {

enum class Family { Gaussian, BinomialLogit };

inline const char* family_name(Family f) {
  return f == Family::Gaussian ? "gaussian" : "binomial";
}

struct GlmFit {
  Family family = Family::Gaussian;
  Eigen::VectorXd coefficients;
  Eigen::MatrixXd covariance;  // model-based; see sandwich_covariance
  std::vector<std::string> names;
  bool converged = false;
  int iterations = 0;
  double deviance = 0.0;
};

namespace detail {

inline std::string column_label(const std::vector<std::string>& names,
                                Eigen::Index j) {
  if (j >= 0 && static_cast<std::size_t>(j) < names.size()) return names[j];
  return "#" + std::to_string(j);
}

inline void check_glm_inputs(const Eigen::MatrixXd& design,
                             const Eigen::VectorXd& response,
                             const Eigen::VectorXd& weights) {
  const Eigen::Index n = design.rows(), p = design.cols();
  if (p == 0) throw_config("design matrix has no columns");
  if (response.size() != n || weights.size() != n)
    throw_config("design, response, and weights disagree on row count");
  if (n < p)
    throw_numeric("fewer rows (" + std::to_string(n) + ") than columns (" +
                  std::to_string(p) + ")");
  double total = 0.0;
  Eigen::Index positive = 0;
  for (Eigen::Index i = 0; i < n; ++i) {
    const double w = weights(i);
    if (!std::isfinite(w) || w < 0.0)
      throw_numeric("weight " + std::to_string(w) + " at row " +
                    std::to_string(i) + " is not finite and non-negative");
    if (w > 0.0) ++positive;
    total += w;
  }
  if (total <= 0.0) throw_numeric("all regression weights are zero");
  if (positive < p)
    throw_numeric("only " + std::to_string(positive) +
                  " rows carry positive weight; design has " +
                  std::to_string(p) + " columns");
}

// Solves the weighted normal equations by column-pivoted QR on
// sqrt(W)·X. Rank is judged against 1e-10 of the leading pivot; a
// deficient design is an error naming the dependent columns.
struct WlsCore {
  Eigen::VectorXd beta;
  Eigen::MatrixXd xtwx_inverse;
};

inline WlsCore solve_wls(const Eigen::MatrixXd& design,
                         const Eigen::VectorXd& response,
                         const Eigen::VectorXd& weights,
                         const std::vector<std::string>& names) {
  const Eigen::Index p = design.cols();
  const Eigen::VectorXd sw = weights.array().sqrt();
  const Eigen::MatrixXd xw = sw.asDiagonal() * design;
  const Eigen::VectorXd yw = sw.cwiseProduct(response);
  Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(xw);
  qr.setThreshold(1e-10);
  if (qr.rank() < p) {
    const auto perm = qr.colsPermutation().indices();
    std::ostringstream msg;
    msg << "design matrix is rank-deficient (rank " << qr.rank() << " of " << p
        << "); dependent columns:";
    for (Eigen::Index k = qr.rank(); k < p; ++k)
      msg << ' ' << column_label(names, perm(k));
    throw_numeric(msg.str());
  }
  WlsCore core;
  core.beta = qr.solve(yw);
  const Eigen::MatrixXd r = qr.matrixR().topLeftCorner(p, p).triangularView<Eigen::Upper>();
  const Eigen::MatrixXd perm = qr.colsPermutation();
  const Eigen::MatrixXd r_inv =
      r.triangularView<Eigen::Upper>().solve(Eigen::MatrixXd::Identity(p, p));
  core.xtwx_inverse = perm * (r_inv * r_inv.transpose()) * perm.transpose();
  return core;
}

}  // namespace detail

// Weighted least squares. Covariance is sigma^2 (X'WX)^-1 with sigma^2
// from the weighted residual sum of squares over positively weighted
// rows.
inline GlmFit fit_wls(const Eigen::MatrixXd& design,
                      const Eigen::VectorXd& response,
                      const Eigen::VectorXd& weights,
                      const std::vector<std::string>& names = {}) {
  detail::check_glm_inputs(design, response, weights);
  const Eigen::Index n = design.rows(), p = design.cols();
  const auto core = detail::solve_wls(design, response, weights, names);
  GlmFit fit;
  fit.family = Family::Gaussian;
  fit.coefficients = core.beta;
  fit.names = names;
  fit.converged = true;
  fit.iterations = 1;
  const Eigen::VectorXd resid = response - design * core.beta;
  fit.deviance = (weights.array() * resid.array().square()).sum();
  Eigen::Index positive = (weights.array() > 0.0).count();
  const double dof = std::max<double>(static_cast<double>(positive - p), 1.0);
  fit.covariance = (fit.deviance / dof) * core.xtwx_inverse;
  fit.covariance = 0.5 * (fit.covariance + fit.covariance.transpose()).eval();
  (void)n;
  return fit;
}

// Weighted logistic regression by IRLS with step-halving.
//
// Stops when the deviance change or the score norm falls below 1e-8;
// `converged` additionally requires score norm < 1e-6 at the accepted
// iterate. Stopping unconverged, hitting 100 iterations, or pushing any
// coefficient past |30| (separation) is an error carrying the iteration
// trace.
inline GlmFit fit_logistic(const Eigen::MatrixXd& design,
                           const Eigen::VectorXd& response,
                           const Eigen::VectorXd& weights,
                           const std::vector<std::string>& names = {}) {
  detail::check_glm_inputs(design, response, weights);
  const Eigen::Index n = design.rows(), p = design.cols();
  bool saw0 = false, saw1 = false;
  for (Eigen::Index i = 0; i < n; ++i) {
    if (response(i) != 0.0 && response(i) != 1.0)
      throw_numeric("logistic response must be 0/1; found " +
                    std::to_string(response(i)) + " at row " + std::to_string(i));
    if (weights(i) > 0.0) (response(i) == 1.0 ? saw1 : saw0) = true;
  }
  if (!saw0 || !saw1)
    throw_numeric(
        "degenerate logistic response: every positively weighted row has "
        "outcome " + std::string(saw1 ? "1" : "0"));

  auto deviance_at = [&](const Eigen::VectorXd& beta) {
    const Eigen::VectorXd lp = design * beta;
    double dev = 0.0;
    for (Eigen::Index i = 0; i < n; ++i) {
      if (weights(i) <= 0.0) continue;
      const double mu = inv_logit(lp(i));
      const double li = response(i) == 1.0 ? std::log(std::max(mu, 1e-300))
                                           : std::log(std::max(1.0 - mu, 1e-300));
      dev -= 2.0 * weights(i) * li;
    }
    return dev;
  };
  auto score_at = [&](const Eigen::VectorXd& beta) {
    const Eigen::VectorXd lp = design * beta;
    Eigen::VectorXd g = Eigen::VectorXd::Zero(p);
    for (Eigen::Index i = 0; i < n; ++i) {
      if (weights(i) <= 0.0) continue;
      g += design.row(i).transpose() * (weights(i) * (response(i) - inv_logit(lp(i))));
    }
    return g;
  };
  // Scale-free convergence measure: each score component standardized
  // by the square root of its information diagonal. The raw score is a
  // sum over rows, so its magnitude grows with n; the standardized form
  // is the per-coefficient Rao statistic and compares against a fixed
  // tolerance at any sample size.
  auto std_score_at = [&](const Eigen::VectorXd& beta) {
    const Eigen::VectorXd g = score_at(beta);
    const Eigen::VectorXd lp = design * beta;
    Eigen::VectorXd info_diag = Eigen::VectorXd::Zero(p);
    for (Eigen::Index i = 0; i < n; ++i) {
      if (weights(i) <= 0.0) continue;
      const double mu = inv_logit(lp(i));
      info_diag += weights(i) * mu * (1.0 - mu) *
                   design.row(i).cwiseProduct(design.row(i)).transpose();
    }
    double worst = 0.0;
    for (Eigen::Index j = 0; j < p; ++j)
      worst = std::max(worst,
                       std::abs(g(j)) / std::sqrt(std::max(info_diag(j), 1e-10)));
    return worst;
  };

  Eigen::VectorXd beta = Eigen::VectorXd::Zero(p);
  double dev = deviance_at(beta);
  std::ostringstream trace;
  int iter = 0;
  bool stopped = false;
  for (iter = 1; iter <= 100; ++iter) {
    const Eigen::VectorXd lp = design * beta;
    Eigen::VectorXd irls_w(n), working(n);
    for (Eigen::Index i = 0; i < n; ++i) {
      const double mu = inv_logit(lp(i));
      const double v = std::max(mu * (1.0 - mu), 1e-12);
      irls_w(i) = weights(i) * v;
      working(i) = lp(i) + (response(i) - mu) / v;
    }
    Eigen::VectorXd candidate =
        detail::solve_wls(design, working, irls_w, names).beta;
    double cand_dev = deviance_at(candidate);
    // Step-halving toward the current iterate if the full step raises
    // the deviance.
    for (int h = 0; h < 10 && cand_dev > dev + 1e-12; ++h) {
      candidate = 0.5 * (candidate + beta);
      cand_dev = deviance_at(candidate);
    }
    const double delta = std::abs(dev - cand_dev);
    beta = candidate;
    dev = cand_dev;
    trace << "  iter " << iter << ": deviance=" << dev << " |dbeta|max="
          << beta.cwiseAbs().maxCoeff() << '\n';
    if (beta.cwiseAbs().maxCoeff() > 30.0)
      throw_numeric(
          "logistic fit diverged: a coefficient passed |30|, which indicates "
          "separation or a perfectly predictive column\n" + trace.str());
    if (std_score_at(beta) < 1e-8 || delta < 1e-8) {
      stopped = true;
      break;
    }
  }
  const double final_score = std_score_at(beta);
  if (!stopped)
    throw_numeric("logistic fit did not converge in 100 IRLS iterations\n" +
                  trace.str());
  if (final_score >= 1e-6) {
    // Numerically zero deviance with an unconverged score means every
    // weighted observation is classified perfectly: the likelihood has
    // no maximum and the coefficients were still drifting outward.
    if (dev < 1e-6)
      throw_numeric(
          "logistic fit diverged: the deviance is numerically zero, which "
          "indicates separation or a perfectly predictive column\n" +
          trace.str());
    throw_numeric(
        "logistic fit stalled: deviance stabilized but the standardized "
        "score is " + std::to_string(final_score) + "\n" + trace.str());
  }

  GlmFit fit;
  fit.family = Family::BinomialLogit;
  fit.coefficients = beta;
  fit.names = names;
  fit.converged = true;
  fit.iterations = iter;
  fit.deviance = dev;
  const Eigen::VectorXd lp = design * beta;
  Eigen::VectorXd info_w(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    const double mu = inv_logit(lp(i));
    info_w(i) = weights(i) * mu * (1.0 - mu);
  }
  fit.covariance = detail::solve_wls(design, lp, info_w, names).xtwx_inverse;
  fit.covariance = 0.5 * (fit.covariance + fit.covariance.transpose()).eval();
  return fit;
}

// Fitted probabilities for a logistic fit, clamped to
// [1e-12, 1 - 1e-12] so downstream ratios stay finite.
inline Eigen::VectorXd predict_prob(const GlmFit& fit, const Eigen::MatrixXd& design) {
  if (fit.family != Family::BinomialLogit)
    throw_config("predict_prob requires a logistic fit");
  if (design.cols() != fit.coefficients.size())
    throw_config("design has " + std::to_string(design.cols()) +
                 " columns; fit has " + std::to_string(fit.coefficients.size()));
  Eigen::VectorXd p = (design * fit.coefficients).unaryExpr([](double lp) {
    return std::min(1.0 - 1e-12, std::max(1e-12, inv_logit(lp)));
  });
  return p;
}

// CR0 cluster-robust covariance: bread is the inverse information,
// meat sums outer products of per-cluster score totals. With one
// cluster per row this is the heteroskedasticity-robust estimator.
// Clusters are accumulated in first-appearance order so the sum is
// reproducible.
inline Eigen::MatrixXd sandwich_covariance(const GlmFit& fit,
                                           const Eigen::MatrixXd& design,
                                           const Eigen::VectorXd& response,
                                           const Eigen::VectorXd& weights,
                                           const std::vector<std::int64_t>& cluster_ids) {
  const Eigen::Index n = design.rows(), p = design.cols();
  if (!fit.converged) throw_config("sandwich covariance requires a converged fit");
  if (fit.coefficients.size() != p ||
      response.size() != n || weights.size() != n ||
      cluster_ids.size() != static_cast<std::size_t>(n))
    throw_config("sandwich covariance inputs disagree on dimensions");

  const Eigen::VectorXd lp = design * fit.coefficients;
  Eigen::VectorXd fitted(n), info_w(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    if (fit.family == Family::BinomialLogit) {
      const double mu = inv_logit(lp(i));
      fitted(i) = mu;
      info_w(i) = weights(i) * mu * (1.0 - mu);
    } else {
      fitted(i) = lp(i);
      info_w(i) = weights(i);
    }
  }
  const Eigen::MatrixXd bread =
      detail::solve_wls(design, lp, info_w, fit.names).xtwx_inverse;

  std::unordered_map<std::int64_t, std::size_t> slot;
  std::vector<Eigen::VectorXd> sums;
  for (Eigen::Index i = 0; i < n; ++i) {
    const auto [it, inserted] = slot.emplace(cluster_ids[i], sums.size());
    if (inserted) sums.emplace_back(Eigen::VectorXd::Zero(p));
    sums[it->second] += design.row(i).transpose() *
                        (weights(i) * (response(i) - fitted(i)));
  }
  Eigen::MatrixXd meat = Eigen::MatrixXd::Zero(p, p);
  for (const auto& s : sums) meat += s * s.transpose();
  Eigen::MatrixXd cov = bread * meat * bread;
  return 0.5 * (cov + cov.transpose());
}

}  // namespace rmpw

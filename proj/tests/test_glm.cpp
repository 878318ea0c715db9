#include <catch2/catch_amalgamated.hpp>

#include <Eigen/Dense>
#include <cmath>

#include "rmpw/common.hpp"
#include "rmpw/glm.hpp"

using namespace rmpw;
using Catch::Matchers::ContainsSubstring;

namespace {

// Weighted Bernoulli log-likelihood, the objective fit_logistic maximizes.
double loglik(const Eigen::MatrixXd& x, const Eigen::VectorXd& y,
              const Eigen::VectorXd& w, const Eigen::VectorXd& beta) {
  const Eigen::VectorXd lp = x * beta;
  double ll = 0.0;
  for (Eigen::Index i = 0; i < x.rows(); ++i) {
    const double mu = inv_logit(lp(i));
    ll += w(i) * (y(i) == 1.0 ? std::log(mu) : std::log(1.0 - mu));
  }
  return ll;
}

Eigen::VectorXd score(const Eigen::MatrixXd& x, const Eigen::VectorXd& y,
                      const Eigen::VectorXd& w, const Eigen::VectorXd& beta) {
  const Eigen::VectorXd lp = x * beta;
  Eigen::VectorXd g = Eigen::VectorXd::Zero(x.cols());
  for (Eigen::Index i = 0; i < x.rows(); ++i)
    g += x.row(i).transpose() * (w(i) * (y(i) - inv_logit(lp(i))));
  return g;
}

// A random well-conditioned logistic problem.
struct Instance {
  Eigen::MatrixXd x;
  Eigen::VectorXd y, w;
};

Instance random_instance(Rng& rng, Eigen::Index n, Eigen::Index p) {
  Instance inst;
  inst.x.resize(n, p);
  inst.x.col(0).setOnes();
  for (Eigen::Index j = 1; j < p; ++j)
    for (Eigen::Index i = 0; i < n; ++i) inst.x(i, j) = rng.normal();
  Eigen::VectorXd beta(p);
  for (Eigen::Index j = 0; j < p; ++j) beta(j) = rng.normal(0.0, 0.5);
  inst.y.resize(n);
  inst.w.resize(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    inst.y(i) = rng.bernoulli(inv_logit(inst.x.row(i) * beta)) ? 1.0 : 0.0;
    inst.w(i) = 0.2 + rng.uniform();
  }
  return inst;
}

}  // namespace

TEST_CASE("weighted least squares reproduces closed forms") {
  SECTION("intercept-only fit is the weighted mean") {
    Eigen::MatrixXd x(2, 1);
    x << 1, 1;
    Eigen::VectorXd y(2), w(2);
    y << 1, 3;
    w << 1, 1;
    const auto fit = fit_wls(x, y, w);
    CHECK(fit.coefficients(0) == Catch::Approx(2.0).margin(1e-14));
    CHECK(fit.converged);
  }
  SECTION("exactly determined system interpolates") {
    // Rows (z, a): y = 2z + a fits with zero residual.
    Eigen::MatrixXd x(4, 3);
    x << 1, 0, 0, 1, 1, 0, 1, 1, 1, 1, 2, 1;
    Eigen::VectorXd y(4), w = Eigen::VectorXd::Ones(4);
    y << 0, 2, 3, 5;
    const auto fit = fit_wls(x, y, w);
    CHECK(fit.coefficients(0) == Catch::Approx(0.0).margin(1e-12));
    CHECK(fit.coefficients(1) == Catch::Approx(2.0).margin(1e-12));
    CHECK(fit.coefficients(2) == Catch::Approx(1.0).margin(1e-12));
    CHECK(fit.deviance == Catch::Approx(0.0).margin(1e-20));
  }
  SECTION("zero-weight rows are ignored") {
    Eigen::MatrixXd x(2, 1);
    x << 1, 1;
    Eigen::VectorXd y(2), w(2);
    y << 5, 99;
    w << 1, 0;
    CHECK(fit_wls(x, y, w).coefficients(0) == Catch::Approx(5.0).margin(1e-14));
  }
}

TEST_CASE("defective regression inputs are rejected with detail") {
  Eigen::MatrixXd x(3, 2);
  x << 1, 2, 1, 2, 1, 2;  // second column is twice the first
  Eigen::VectorXd y(3), w = Eigen::VectorXd::Ones(3);
  y << 1, 2, 3;
  // The pivoted factorization keeps the better-conditioned of the two
  // dependent columns and names the other one; either name may appear.
  REQUIRE_THROWS_WITH(fit_wls(x, y, w, {"one", "twice"}),
                      ContainsSubstring("rank-deficient") &&
                          (ContainsSubstring("one") ||
                           ContainsSubstring("twice")));
  SECTION("all-zero weights") {
    REQUIRE_THROWS_WITH(fit_wls(x.leftCols(1), y, Eigen::VectorXd::Zero(3)),
                        ContainsSubstring("zero"));
  }
  SECTION("negative weight names the row") {
    Eigen::VectorXd wneg = w;
    wneg(1) = -0.5;
    REQUIRE_THROWS_AS(fit_wls(x.leftCols(1), y, wneg), Error);
  }
  SECTION("fewer positively weighted rows than columns") {
    Eigen::VectorXd wfew = Eigen::VectorXd::Zero(3);
    wfew(0) = 1.0;
    REQUIRE_THROWS_AS(fit_wls(x, y, wfew), Error);
  }
}

TEST_CASE("logistic intercept matches the analytic proportion") {
  Eigen::MatrixXd x = Eigen::MatrixXd::Ones(10, 1);
  Eigen::VectorXd y(10), w = Eigen::VectorXd::Ones(10);
  y << 1, 1, 1, 1, 1, 1, 1, 0, 0, 0;
  const auto fit = fit_logistic(x, y, w);
  CHECK(fit.converged);
  CHECK(fit.coefficients(0) ==
        Catch::Approx(std::log(7.0 / 3.0)).margin(1e-8));
}

TEST_CASE("degenerate logistic responses are rejected") {
  Eigen::MatrixXd x = Eigen::MatrixXd::Ones(5, 1);
  Eigen::VectorXd w = Eigen::VectorXd::Ones(5);
  REQUIRE_THROWS_WITH(fit_logistic(x, Eigen::VectorXd::Ones(5), w),
                      ContainsSubstring("degenerate"));
  REQUIRE_THROWS_WITH(fit_logistic(x, Eigen::VectorXd::Zero(5), w),
                      ContainsSubstring("degenerate"));
  SECTION("non-binary response") {
    Eigen::VectorXd y(5);
    y << 0, 1, 0.5, 1, 0;
    REQUIRE_THROWS_AS(fit_logistic(x, y, w), Error);
  }
}

TEST_CASE("logistic separation is detected, not silently fitted") {
  // x perfectly predicts y: the MLE runs off to infinity.
  Eigen::MatrixXd x(8, 2);
  Eigen::VectorXd y(8), w = Eigen::VectorXd::Ones(8);
  for (int i = 0; i < 8; ++i) {
    x(i, 0) = 1.0;
    x(i, 1) = i < 4 ? -1.0 : 1.0;
    y(i) = i < 4 ? 0.0 : 1.0;
  }
  try {
    fit_logistic(x, y, w);
    FAIL("expected a separation error");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::Numeric);
    CHECK_THAT(e.what(), ContainsSubstring("separation"));
  }
}

TEST_CASE("duplicating rows at half weight leaves the fit unchanged") {
  Rng rng(20240817);
  const auto inst = random_instance(rng, 60, 3);
  const auto base = fit_logistic(inst.x, inst.y, inst.w);

  Eigen::MatrixXd x2(120, 3);
  Eigen::VectorXd y2(120), w2(120);
  x2 << inst.x, inst.x;
  y2 << inst.y, inst.y;
  w2 << 0.5 * inst.w, 0.5 * inst.w;
  const auto doubled = fit_logistic(x2, y2, w2);
  for (int j = 0; j < 3; ++j)
    CHECK(doubled.coefficients(j) ==
          Catch::Approx(base.coefficients(j)).margin(1e-10));
}

TEST_CASE("scaling all weights leaves coefficients unchanged") {
  Rng rng(7151);
  const auto inst = random_instance(rng, 80, 3);
  const auto a = fit_logistic(inst.x, inst.y, inst.w);
  const auto b = fit_logistic(inst.x, inst.y, 7.25 * inst.w);
  for (int j = 0; j < 3; ++j)
    CHECK(b.coefficients(j) == Catch::Approx(a.coefficients(j)).margin(1e-10));

  Eigen::VectorXd yc = inst.x.col(1) + 0.3 * inst.x.col(2);
  const auto wa = fit_wls(inst.x, yc, inst.w);
  const auto wb = fit_wls(inst.x, yc, 0.125 * inst.w);
  for (int j = 0; j < 3; ++j)
    CHECK(wb.coefficients(j) == Catch::Approx(wa.coefficients(j)).margin(1e-12));
}

TEST_CASE("every converged fit sits at a stationary local maximum") {
  Rng rng(99020);
  for (int trial = 0; trial < 10; ++trial) {
    const auto inst = random_instance(rng, 50 + 10 * trial, 3);
    const auto fit = fit_logistic(inst.x, inst.y, inst.w);
    REQUIRE(fit.converged);

    // Standardized score below the documented convergence bar.
    const Eigen::VectorXd g = score(inst.x, inst.y, inst.w, fit.coefficients);
    const Eigen::VectorXd lp = inst.x * fit.coefficients;
    Eigen::VectorXd info = Eigen::VectorXd::Zero(3);
    for (Eigen::Index i = 0; i < inst.x.rows(); ++i) {
      const double mu = inv_logit(lp(i));
      info += inst.w(i) * mu * (1.0 - mu) *
              inst.x.row(i).cwiseProduct(inst.x.row(i)).transpose();
    }
    for (int j = 0; j < 3; ++j)
      CHECK(std::abs(g(j)) / std::sqrt(info(j)) < 1e-6);

    // Axis perturbations of 1e-3 cannot improve the objective.
    const double at_opt = loglik(inst.x, inst.y, inst.w, fit.coefficients);
    for (int j = 0; j < 3; ++j)
      for (double step : {-1e-3, 1e-3}) {
        Eigen::VectorXd nudged = fit.coefficients;
        nudged(j) += step;
        CHECK(loglik(inst.x, inst.y, inst.w, nudged) <= at_opt + 1e-12);
      }
  }
}

TEST_CASE("analytic score matches central finite differences") {
  Rng rng(31337);
  for (int trial = 0; trial < 5; ++trial) {
    const auto inst = random_instance(rng, 40, 3);
    Eigen::VectorXd beta(3);
    for (int j = 0; j < 3; ++j) beta(j) = rng.normal(0.0, 0.4);
    const Eigen::VectorXd g = score(inst.x, inst.y, inst.w, beta);
    const double h = 1e-6;
    for (int j = 0; j < 3; ++j) {
      Eigen::VectorXd up = beta, dn = beta;
      up(j) += h;
      dn(j) -= h;
      const double fd = (loglik(inst.x, inst.y, inst.w, up) -
                         loglik(inst.x, inst.y, inst.w, dn)) /
                        (2.0 * h);
      const double denom = std::max(std::abs(g(j)), 1.0);
      CHECK(std::abs(fd - g(j)) / denom < 1e-5);
    }
  }
}

TEST_CASE("probability prediction follows the inverse logit") {
  GlmFit fit;
  fit.family = Family::BinomialLogit;
  fit.converged = true;
  Eigen::MatrixXd ones = Eigen::MatrixXd::Ones(3, 1);

  fit.coefficients = Eigen::VectorXd::Zero(1);
  CHECK(predict_prob(fit, ones)(0) == Catch::Approx(0.5).margin(1e-15));

  fit.coefficients(0) = std::log(3.0);
  CHECK(predict_prob(fit, ones)(1) == Catch::Approx(0.75).margin(1e-12));

  fit.coefficients = Eigen::VectorXd(2);
  fit.coefficients << 0.0, 1.0;
  Eigen::MatrixXd row(1, 2);
  row << 1.0, -2.0;
  CHECK(predict_prob(fit, row)(0) ==
        Catch::Approx(1.0 / (1.0 + std::exp(2.0))).margin(1e-12));

  SECTION("dimension mismatch") {
    REQUIRE_THROWS_AS(predict_prob(fit, ones), Error);
  }
  SECTION("gaussian fits cannot predict probabilities") {
    fit.family = Family::Gaussian;
    REQUIRE_THROWS_AS(predict_prob(fit, row), Error);
  }
}

TEST_CASE("sandwich covariance closed forms") {
  SECTION("zero residuals give a zero matrix") {
    Eigen::MatrixXd x(3, 2);
    x << 1, 0, 1, 1, 1, 2;
    Eigen::VectorXd w = Eigen::VectorXd::Ones(3);
    Eigen::VectorXd y = 2.0 * x.col(1) - x.col(0);
    const auto fit = fit_wls(x, y, w);
    const auto cov = sandwich_covariance(fit, x, y, w, {1, 2, 3});
    CHECK(cov.cwiseAbs().maxCoeff() < 1e-20);
  }
  SECTION("one row: own cluster equals one shared cluster") {
    Eigen::MatrixXd x = Eigen::MatrixXd::Ones(2, 1);
    Eigen::VectorXd y(2), w = Eigen::VectorXd::Ones(2);
    y << 1, 2;
    const auto fit = fit_wls(x, y, w);
    const auto per_row = sandwich_covariance(fit, x.topRows(1), y.head(1),
                                             w.head(1), {7});
    const auto same = sandwich_covariance(fit, x.topRows(1), y.head(1),
                                          w.head(1), {0});
    CHECK(per_row(0, 0) == Catch::Approx(same(0, 0)).margin(1e-18));
  }
  SECTION("heteroskedastic two-point example, hand arithmetic") {
    // x'Wx = 4, beta = 3, residuals (-3, 1), score sums (-3, 3),
    // meat = 18, sandwich = 18 / 16.
    Eigen::MatrixXd x = Eigen::MatrixXd::Ones(2, 1);
    Eigen::VectorXd y(2), w(2);
    y << 0, 4;
    w << 1, 3;
    const auto fit = fit_wls(x, y, w);
    REQUIRE(fit.coefficients(0) == Catch::Approx(3.0).margin(1e-14));
    const auto cov = sandwich_covariance(fit, x, y, w, {1, 2});
    CHECK(cov(0, 0) == Catch::Approx(18.0 / 16.0).margin(1e-12));
  }
  SECTION("clustering merges within-cluster scores before the outer product") {
    // Two identical rows per cluster double the summed score, so the
    // meat is (2u)^2 per cluster rather than 2 * u^2.
    Eigen::MatrixXd x = Eigen::MatrixXd::Ones(4, 1);
    Eigen::VectorXd y(4), w = Eigen::VectorXd::Ones(4);
    y << 1, 1, -1, -1;
    const auto fit = fit_wls(x, y, w);  // mean 0, residuals +-1
    const auto clustered = sandwich_covariance(fit, x, y, w, {1, 1, 2, 2});
    const auto independent = sandwich_covariance(fit, x, y, w, {1, 2, 3, 4});
    CHECK(clustered(0, 0) == Catch::Approx(2.0 * independent(0, 0)).margin(1e-15));
  }
}

#include <catch2/catch_amalgamated.hpp>

#include <algorithm>
#include <cmath>

#include "binlat/marginal.hpp"
#include "binlat/model.hpp"
#include "binlat/rng.hpp"

using namespace binlat;

namespace {

BinomialSeries trend_series(Eigen::Index n, double tau, double phi, std::uint64_t seed,
                            int m_const = 1) {
  Vector beta(2);
  beta << 1.0, 2.0;
  const Matrix X = linear_trend_design(n);
  const Eigen::VectorXi m = Eigen::VectorXi::Constant(n, m_const);
  return simulate_series(X, m, ModelParams(beta, tau, phi), seed);
}

}  // namespace

TEST_CASE("marginal_loglik") {
  const QuadratureRule rule = gauss_hermite(32);

  SECTION("tau = 0 coincides with the GLM likelihood") {
    const BinomialSeries d = trend_series(80, 1.0, 0.0, 5, 2);
    Rng rng(1);
    for (int rep = 0; rep < 20; ++rep) {
      Vector b(2);
      b << 4.0 * rng.uniform() - 2.0, 4.0 * rng.uniform() - 2.0;
      CHECK(std::abs(marginal_loglik(b, 0.0, d, rule) - glm_loglik(b, d)) < 1e-12);
    }
  }

  SECTION("single-observation symmetry value") {
    Eigen::VectorXi y(1), m(1);
    y << 1;
    m << 1;
    const BinomialSeries d(y, m, Matrix::Ones(1, 1));
    Vector b(1);
    b << 0.0;
    // int bdot(z) phi(z) dz = 1/2 by symmetry of the logistic and the normal
    CHECK(marginal_loglik(b, 1.0, d, rule) ==
          Catch::Approx(std::log(0.5)).margin(1e-13));
  }

  SECTION("Monte Carlo oracle per observation") {
    const BinomialSeries d = trend_series(50, 1.0, 0.0, 23);
    Vector b(2);
    b << 1.0, 2.0;
    const double tau = 1.0;
    Rng rng(777);
    const long N = 1000000;  // per observation
    double ll_mc = 0.0, var_log = 0.0;
    for (Eigen::Index t = 0; t < d.size(); ++t) {
      const double eta = d.X.row(t).dot(b);
      double sum = 0.0, sumsq = 0.0;
      for (long i = 0; i < N; ++i) {
        const double f =
            std::exp(binom_logpmf_at(d.y[t], d.m[t], eta + std::sqrt(tau) * rng.normal()));
        sum += f;
        sumsq += f * f;
      }
      const double mean = sum / N;
      const double var_mean = (sumsq / N - mean * mean) / N;
      ll_mc += std::log(mean);
      var_log += var_mean / (mean * mean);  // delta method for log
    }
    const double se = std::sqrt(var_log);
    CHECK(std::abs(marginal_loglik(b, tau, d, rule) - ll_mc) < 3.0 * se);
  }
}

TEST_CASE("marginal_score") {
  const QuadratureRule rule = gauss_hermite(32);

  SECTION("matches central finite differences") {
    const BinomialSeries d = trend_series(100, 1.0, 0.0, 31);
    Vector b(2);
    b << 1.0, 2.0;
    const double tau = 0.5;
    const Vector g = marginal_score(b, tau, d, rule);
    const double h = 1e-5;
    for (int j = 0; j < 3; ++j) {
      Vector bp = b, bm = b;
      double tp = tau, tm = tau;
      if (j < 2) {
        bp[j] += h;
        bm[j] -= h;
      } else {
        tp += h;
        tm -= h;
      }
      const double fd =
          (marginal_loglik(bp, tp, d, rule) - marginal_loglik(bm, tm, d, rule)) / (2 * h);
      CHECK(std::abs(fd - g[j]) / std::max(1.0, std::abs(g[j])) < 1e-4);
    }
  }

  SECTION("beta block approaches the GLM score near the boundary") {
    const BinomialSeries d = trend_series(150, 1.0, 0.0, 37, 2);
    Vector b(2);
    b << 0.9, 1.8;
    const Vector g = marginal_score(b, 1e-8, d, rule);
    const Vector g0 = glm_score(b, d);
    CHECK(std::abs(g[0] - g0[0]) < 1e-4);
    CHECK(std::abs(g[1] - g0[1]) < 1e-4);
  }

  SECTION("rejects the boundary itself") {
    const BinomialSeries d = trend_series(20, 1.0, 0.0, 41);
    Vector b(2);
    b << 1.0, 2.0;
    CHECK_THROWS_AS(marginal_score(b, 0.0, d, rule), std::invalid_argument);
  }
}

TEST_CASE("tau_score_at_zero") {
  const QuadratureRule rule = gauss_hermite(32);

  SECTION("zero residuals leave only the curvature term") {
    // y_t = m_t bdot(x_t'beta) exactly cannot hold with integer y, so check
    // the identity by direct summation on a constructed series
    Eigen::VectorXi y(4), m(4);
    y << 1, 1, 0, 1;
    m << 2, 1, 1, 2;
    Matrix X(4, 2);
    X << 1, 0.1, 1, 0.2, 1, 0.5, 1, 0.9;
    const BinomialSeries d(y, m, X);
    Vector b(2);
    b << 0.3, -0.2;
    double expect = 0.0;
    for (int t = 0; t < 4; ++t) {
      const double eta = X.row(t).dot(b);
      const double e = y[t] - m[t] * link_b_dot(eta);
      expect += e * e - m[t] * link_b_ddot(eta);
    }
    CHECK(tau_score_at_zero(b, d) == Catch::Approx(expect / 4.0).margin(1e-15));
  }

  SECTION("one-sided finite difference of the marginal likelihood") {
    const BinomialSeries d = trend_series(200, 1.0, 0.0, 47, 3);
    const GlmFit glm = glm_fit(d);
    const double h = 1e-6;
    const double fd = (marginal_loglik(glm.beta_tilde, h, d, rule) -
                       marginal_loglik(glm.beta_tilde, 0.0, d, rule)) *
                      2.0 / (static_cast<double>(d.size()) * h);
    const double s = tau_score_at_zero(glm.beta_tilde, d);
    CHECK(std::abs(fd - s) / std::abs(s) < 1e-3);
  }

  SECTION("positive with high frequency when the latent variance is real") {
    int positive = 0;
    for (int rep = 0; rep < 200; ++rep) {
      const BinomialSeries d = trend_series(5000, 1.0, 0.0, 1000 + rep, 3);
      const GlmFit glm = glm_fit(d);
      if (tau_score_at_zero(glm.beta_tilde, d) > 0.0) ++positive;
    }
    CHECK(positive >= 194);  // 97% of 200
  }
}

TEST_CASE("fit_marginal") {
  const QuadratureRule rule = gauss_hermite(32);

  SECTION("boundary truth is recovered as degenerate") {
    int degenerate = 0;
    Vector b0(2);
    b0 << 1.0, 2.0;
    for (int rep = 0; rep < 30; ++rep) {
      const BinomialSeries d = trend_series(400, 0.0, 0.0, 300 + rep, 2);
      const FitResult fit = fit_marginal(d, rule);
      if (fit.degenerate) {
        ++degenerate;
        const GlmFit glm = glm_fit(d);
        CHECK((fit.beta_hat - glm.beta_tilde).lpNorm<Eigen::Infinity>() < 1e-6);
        CHECK(fit.tau_hat == 0.0);
      }
    }
    CHECK(degenerate >= 24);  // boundary wins with high frequency at tau0 = 0
  }

  SECTION("interior solutions satisfy the first-order condition") {
    for (int rep = 0; rep < 10; ++rep) {
      const BinomialSeries d = trend_series(200, 1.0, 0.0, 500 + rep, 3);
      const FitResult fit = fit_marginal(d, rule);
      CHECK(fit.loglik >= glm_fit(d).loglik - 1e-9);
      if (!fit.degenerate) {
        const Vector g = marginal_score(fit.beta_hat, fit.tau_hat, d, rule);
        CHECK(g.lpNorm<Eigen::Infinity>() < 1e-6);
      }
    }
  }

  SECTION("binary pile-up frequency near the reported rate") {
    // 45.54% of fits degenerate at n = 200 in the full-size experiment
    int degenerate = 0;
    const int reps = 400;
    for (int rep = 0; rep < reps; ++rep) {
      const BinomialSeries d = trend_series(200, 1.0, 0.0, 9000 + rep, 1);
      if (fit_marginal(d, rule).degenerate) ++degenerate;
    }
    const double frac = static_cast<double>(degenerate) / reps;
    CHECK(std::abs(frac - 0.4554) < 0.05);
  }

  SECTION("binomial fits concentrate near the truth") {
    // mean tau_hat about 0.996 with few degenerate fits at m = 3, n = 500
    double tau_sum = 0.0;
    int degenerate = 0;
    const int reps = 300;
    for (int rep = 0; rep < reps; ++rep) {
      const BinomialSeries d = trend_series(500, 1.0, 0.0, 40000 + rep, 3);
      const FitResult fit = fit_marginal(d, rule);
      tau_sum += fit.tau_hat;
      degenerate += fit.degenerate ? 1 : 0;
    }
    CHECK(std::abs(tau_sum / reps - 0.996) < 0.05);
    CHECK(degenerate <= std::max(1, reps / 200));
  }

  SECTION("permutation invariance of the fit") {
    const BinomialSeries d = trend_series(120, 1.0, 0.0, 600, 2);
    const FitResult fit = fit_marginal(d, rule);
    // reverse time: the marginal likelihood does not see the order
    const Eigen::Index n = d.size();
    Eigen::VectorXi y(n), m(n);
    Matrix X(n, 2);
    for (Eigen::Index t = 0; t < n; ++t) {
      y[t] = d.y[n - 1 - t];
      m[t] = d.m[n - 1 - t];
      X.row(t) = d.X.row(n - 1 - t);
    }
    const FitResult fit2 = fit_marginal(BinomialSeries(y, m, X), rule);
    CHECK(std::abs(fit.tau_hat - fit2.tau_hat) < 1e-7);
    CHECK((fit.beta_hat - fit2.beta_hat).lpNorm<Eigen::Infinity>() < 1e-7);
  }
}

TEST_CASE("limit_Q") {
  const QuadratureRule rule = gauss_hermite(32);
  const TrendDesign design = TrendDesign::linear_trend();
  Vector b0(2);
  b0 << 1.0, 2.0;
  const ModelParams truth(b0, 1.0, 0.0);

  SECTION("maximized at the truth on a surrounding grid") {
    for (int m : {1, 2}) {
      const MDist md = MDist::constant(m);
      const double q0 = limit_Q(b0, 1.0, truth, design, md, rule, 1e-2);
      for (double f1 : {0.5, 1.0, 1.5})
        for (double f2 : {0.5, 1.0, 1.5})
          for (double ft : {0.5, 1.0, 1.5}) {
            if (f1 == 1.0 && f2 == 1.0 && ft == 1.0) continue;
            Vector b(2);
            b << b0[0] * f1, b0[1] * f2;
            CHECK(limit_Q(b, ft, truth, design, md, rule, 1e-2) < q0);
          }
    }
  }

  SECTION("matches the expected per-observation likelihood by simulation") {
    const Eigen::Index n = 100000;
    const BinomialSeries d = trend_series(n, 1.0, 0.0, 71);
    // Var(log pi_t(y_t)) estimated along the series for the MC error
    Vector b(2);
    b << 1.0, 2.0;
    double sum = 0.0, sumsq = 0.0;
    for (Eigen::Index t = 0; t < n; ++t) {
      const double lf =
          eval_marginal_obs(d.y[t], d.m[t], d.X.row(t).transpose(), b, 1.0, rule, false)
              .logf;
      sum += lf;
      sumsq += lf * lf;
    }
    const double mean = sum / n;
    const double se = std::sqrt((sumsq / n - mean * mean) / n);
    const double q0 = limit_Q(b, 1.0, truth, design, MDist::constant(1), rule, 1e-3);
    CHECK(std::abs(q0 - mean) < 3.0 * se);
  }
}

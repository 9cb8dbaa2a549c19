#include <catch2/catch_amalgamated.hpp>

#include <cmath>

#include "binlat/asymptotics.hpp"
#include "binlat/model.hpp"
#include "binlat/rng.hpp"

using namespace binlat;

namespace {

const QuadratureRule& rule32() {
  static const QuadratureRule r = gauss_hermite(32);
  return r;
}
const QuadratureRule& rule9() {
  static const QuadratureRule r = gauss_hermite(9);
  return r;
}

AsymptoticOptions fast_opts() {
  AsymptoticOptions o;
  o.mesh = 1e-3;  // unit tests run on a coarser grid than the default
  o.threads = 1;
  return o;
}

ModelParams truth(double phi = 0.0) {
  Vector b0(2);
  b0 << 1.0, 2.0;
  return ModelParams(b0, 1.0, phi);
}

}  // namespace

TEST_CASE("omega11") {
  const TrendDesign design = TrendDesign::linear_trend();
  const MDist m1 = MDist::constant(1);

  SECTION("reported eigenvalues for the binary trend model") {
    const Matrix M = omega11(truth().beta, 1.0, design, m1, rule32(), fast_opts());
    Eigen::SelfAdjointEigenSolver<Matrix> es(M, Eigen::EigenvaluesOnly);
    CHECK(std::abs(es.eigenvalues()[2] - 0.129) / 0.129 < 0.02);
    CHECK(std::abs(es.eigenvalues()[1] - 6.784e-3) / 6.784e-3 < 0.02);
    CHECK(std::abs(es.eigenvalues()[0] - 1.903e-6) / 1.903e-6 < 0.02);
    CHECK((M - M.transpose()).lpNorm<Eigen::Infinity>() == 0.0);
  }

  SECTION("agrees with the empirical score outer product") {
    const Eigen::Index n = 100000;
    const Matrix X = linear_trend_design(n);
    const Eigen::VectorXi m = Eigen::VectorXi::Constant(n, 1);
    const BinomialSeries d = simulate_series(X, m, truth(), 123);
    Matrix sum = Matrix::Zero(3, 3);
    Matrix sumsq = Matrix::Zero(3, 3);
    for (Eigen::Index t = 0; t < n; ++t) {
      const Vector g =
          eval_marginal_obs(d.y[t], d.m[t], d.X.row(t).transpose(), truth().beta, 1.0,
                            rule32(), true)
              .grad;
      const Matrix o = g * g.transpose();
      sum += o;
      sumsq += o.cwiseProduct(o);
    }
    const Matrix emp = sum / static_cast<double>(n);
    const Matrix var = sumsq / static_cast<double>(n) - emp.cwiseProduct(emp);
    const Matrix M = omega11(truth().beta, 1.0, design, m1, rule32(), fast_opts());
    for (int i = 0; i < 3; ++i)
      for (int j = 0; j < 3; ++j) {
        const double se = std::sqrt(var(i, j) / static_cast<double>(n));
        CHECK(std::abs(emp(i, j) - M(i, j)) < 3.0 * se);
      }
  }

  SECTION("rejects the boundary") {
    CHECK_THROWS_AS(omega11(truth().beta, 0.0, design, m1, rule32(), fast_opts()),
                    std::invalid_argument);
  }
}

TEST_CASE("omega12") {
  const TrendDesign design = TrendDesign::linear_trend();
  const MDist m1 = MDist::constant(1);

  SECTION("independent latent process collapses to omega11") {
    const Matrix M11 = omega11(truth().beta, 1.0, design, m1, rule32(), fast_opts());
    const Matrix M12 = omega12(truth(0.0), design, m1, rule32(), rule9(), fast_opts());
    CHECK((M12 - M11).lpNorm<Eigen::Infinity>() < 1e-8);
  }

  SECTION("symmetric output and the reported tau variance scale") {
    const Matrix M12 = omega12(truth(0.0), design, m1, rule32(), rule9(), fast_opts());
    CHECK((M12 - M12.transpose()).lpNorm<Eigen::Infinity>() < 1e-12);
    const Matrix M11 = omega11(truth().beta, 1.0, design, m1, rule32(), fast_opts());
    const Matrix S = M11.ldlt().solve(M11.ldlt().solve(M12).transpose());
    // sigma_tau = 698 reported for the binary trend model
    CHECK(std::abs(std::sqrt(S(2, 2)) - 698.0) / 698.0 < 0.05);
  }

  SECTION("positive autocorrelation inflates the tau variance") {
    const Matrix M11 = omega11(truth().beta, 1.0, design, m1, rule32(), fast_opts());
    const Matrix M12 = omega12(truth(0.8), design, m1, rule32(), rule9(), fast_opts());
    const Matrix S0 = M11.ldlt().solve(M11.ldlt().solve(M11).transpose());
    const Matrix S8 = M11.ldlt().solve(M11.ldlt().solve(M12).transpose());
    CHECK(S8(2, 2) > S0(2, 2));
    CHECK((M12 - M12.transpose()).lpNorm<Eigen::Infinity>() < 1e-10);
  }
}

TEST_CASE("glm_sandwich") {
  const TrendDesign design = TrendDesign::linear_trend();
  const MDist m1 = MDist::constant(1);

  SECTION("reported sandwich for the binary trend model") {
    const GlmSandwich gs = glm_sandwich(truth(0.0), design, m1, rule32(), rule9(),
                                        fast_opts());
    CHECK(std::abs(gs.sandwich(0, 0) - 23.636) / 23.636 < 0.02);
    CHECK(std::abs(gs.sandwich(0, 1) + 39.8212) / 39.8212 < 0.02);
    CHECK(std::abs(gs.sandwich(1, 1) - 98.13) / 98.13 < 0.02);
  }

  SECTION("no latent process leaves the classical inverse information") {
    Vector b0(2);
    b0 << 1.0, 2.0;
    const ModelParams p0(b0, 0.0, 0.0);
    const GlmSandwich gs = glm_sandwich(p0, design, m1, rule32(), rule9(), fast_opts());
    const Matrix expected = gs.omega1.inverse();
    CHECK((gs.sandwich - expected).lpNorm<Eigen::Infinity>() /
              expected.lpNorm<Eigen::Infinity>() <
          1e-10);
  }

  SECTION("Monte Carlo covariance of the GLM estimator") {
    const Eigen::Index n = 5000;
    const Matrix X = linear_trend_design(n);
    const Eigen::VectorXi mv = Eigen::VectorXi::Constant(n, 1);
    const int reps = 2000;
    Matrix sum = Matrix::Zero(2, 2);
    Vector mean = Vector::Zero(2);
    std::vector<Vector> fits;
    fits.reserve(reps);
    for (int r = 0; r < reps; ++r) {
      const BinomialSeries d = simulate_series(X, mv, truth(0.0), 50000 + r);
      fits.push_back(glm_fit(d).beta_tilde);
      mean += fits.back();
    }
    mean /= reps;
    for (const auto& f : fits) sum += (f - mean) * (f - mean).transpose();
    const Matrix emp_cov = sum / (reps - 1);
    const GlmSandwich gs = glm_sandwich(truth(0.0), design, m1, rule32(), rule9(),
                                        fast_opts());
    const Matrix theory = gs.sandwich / static_cast<double>(n);
    for (int i = 0; i < 2; ++i)
      for (int j = 0; j < 2; ++j)
        CHECK(std::abs(emp_cov(i, j) - theory(i, j)) / std::abs(theory(i, j)) < 0.10);
  }
}

TEST_CASE("score_moments") {
  const TrendDesign design = TrendDesign::linear_trend();

  SECTION("reported constants for the trend model") {
    const ScoreMoments sm1 =
        score_moments(truth(0.0), design, MDist::constant(1), rule32(), rule9(),
                      fast_opts());
    CHECK(std::abs(sm1.c1 - 0.0168) / 0.0168 < 0.03);
    CHECK(std::abs(sm1.c2 - 1.65e-5) / 1.65e-5 < 0.03);
    CHECK(std::abs(sm1.c_S / sm1.sigma_S - 0.0023) / 0.0023 < 0.03);

    const ScoreMoments sm2 =
        score_moments(truth(0.0), design, MDist::constant(2), rule32(), rule9(),
                      fast_opts());
    CHECK(std::abs(sm2.c_S - 0.034) / 0.034 < 0.03);
    CHECK(std::abs(sm2.sigma_S - 0.303) / 0.303 < 0.03);
    CHECK(std::abs(sm2.c_S / sm2.sigma_S - 0.1110) / 0.1110 < 0.03);

    const ScoreMoments sm3 =
        score_moments(truth(0.0), design, MDist::constant(3), rule32(), rule9(),
                      fast_opts());
    CHECK(std::abs(sm3.c_S / sm3.sigma_S - 0.1921) / 0.1921 < 0.03);
  }

  SECTION("no latent variance kills both constants") {
    Vector b0(2);
    b0 << 1.0, 2.0;
    const ModelParams p0(b0, 0.0, 0.0);
    const ScoreMoments sm =
        score_moments(p0, design, MDist::constant(2), rule32(), rule9(), fast_opts());
    CHECK(std::abs(sm.c1) < 1e-14);
    CHECK(std::abs(sm.c2) < 1e-14);
  }

  SECTION("c_S stays nonnegative across the experiment grid") {
    for (double phi : {-0.8, -0.2, 0.0, 0.2, 0.8})
      for (int m : {1, 2, 3}) {
        const ScoreMoments sm = score_moments(truth(phi), design, MDist::constant(m),
                                              rule32(), rule9(), fast_opts());
        CHECK(sm.c_S >= 0.0);
        CHECK(sm.sigma_S > 0.0);
      }
  }

  SECTION("dependent-case variance against Monte Carlo") {
    // sqrt(n) S_1n(beta_tilde) has sd sigma_S; check at phi = 0.8, m = 2
    const ScoreMoments sm = score_moments(truth(0.8), design, MDist::constant(2),
                                          rule32(), rule9(), fast_opts());
    const Eigen::Index n = 2000;
    const Matrix X = linear_trend_design(n);
    const Eigen::VectorXi mv = Eigen::VectorXi::Constant(n, 2);
    const int reps = 400;
    double sum = 0.0, sumsq = 0.0;
    for (int r = 0; r < reps; ++r) {
      const BinomialSeries d = simulate_series(X, mv, truth(0.8), 80000 + r);
      const double s = tau_score_at_zero(glm_fit(d).beta_tilde, d);
      sum += s;
      sumsq += s * s;
    }
    const double var_emp = (sumsq / reps - (sum / reps) * (sum / reps));
    const double sd_emp = std::sqrt(var_emp * n);
    // sd of the sd estimate is roughly sd / sqrt(2 reps), allow 4 of those
    const double rel_tol = 4.0 / std::sqrt(2.0 * reps);
    CHECK(std::abs(sd_emp - sm.sigma_S) / sm.sigma_S < rel_tol + 0.05);
  }

  SECTION("rejects time-varying trial counts") {
    MDist mixed;
    mixed.atoms = {{1, 0.5}, {2, 0.5}};
    CHECK_THROWS_AS(
        score_moments(truth(0.0), design, mixed, rule32(), rule9(), fast_opts()),
        std::invalid_argument);
  }
}

TEST_CASE("kappa_bounds") {
  const TrendDesign design = TrendDesign::linear_trend();
  const MDist m1 = MDist::constant(1);

  SECTION("reported pile-up approximations for the binary model") {
    const auto [k1_200, k2_200] =
        kappa_bounds(truth(0.0), design, m1, 200, rule32(), rule9(), fast_opts());
    CHECK(std::abs(k1_200 - 0.4870) < 0.005);
    CHECK(std::abs(k2_200 - 0.4920) < 0.005);
    const auto [k1_5000, k2_5000] =
        kappa_bounds(truth(0.0), design, m1, 5000, rule32(), rule9(), fast_opts());
    CHECK(std::abs(k1_5000 - 0.4354) < 0.005);
    CHECK(std::abs(k2_5000 - 0.4596) < 0.005);
  }

  SECTION("monotone decreasing in n for positive ratio") {
    const auto [k1_a, k2_a] =
        kappa_bounds(truth(0.0), design, MDist::constant(2), 200, rule32(), rule9(),
                     fast_opts());
    const auto [k1_b, k2_b] =
        kappa_bounds(truth(0.0), design, MDist::constant(2), 1000, rule32(), rule9(),
                     fast_opts());
    CHECK(k1_b < k1_a);
    CHECK(k2_b < k2_a);
  }

  SECTION("a binary series needs a million observations for one percent") {
    const auto [k1, k2] =
        kappa_bounds(truth(0.0), design, m1, 1000000, rule32(), rule9(), fast_opts());
    CHECK(std::abs(k1 - normal_cdf(-2.3)) < 0.005);
    (void)k2;
  }
}

TEST_CASE("empirical_omega11_hat") {
  const QuadratureRule& rule = rule32();

  SECTION("equals the negative scaled Hessian of the marginal likelihood") {
    const Matrix X = linear_trend_design(100);
    const Eigen::VectorXi m = Eigen::VectorXi::Constant(100, 2);
    const BinomialSeries d = simulate_series(X, m, truth(0.0), 55);
    Vector b(2);
    b << 0.9, 1.9;
    const double tau = 0.8;
    const Matrix Mhat = empirical_omega11_hat(b, tau, d, rule);
    CHECK((Mhat - Mhat.transpose()).lpNorm<Eigen::Infinity>() < 1e-12);
    // central finite differences of the full log-likelihood
    const double h = 1e-5;
    Matrix fd(3, 3);
    auto ll = [&](const Vector& bb, double tt) { return marginal_loglik(bb, tt, d, rule); };
    for (int i = 0; i < 3; ++i)
      for (int j = 0; j < 3; ++j) {
        Vector bpp = b, bpm = b, bmp = b, bmm = b;
        double tpp = tau, tpm = tau, tmp = tau, tmm = tau;
        auto bump = [&](Vector& bv, double& tv, int k, double s) {
          if (k < 2)
            bv[k] += s;
          else
            tv += s;
        };
        bump(bpp, tpp, i, h);
        bump(bpp, tpp, j, h);
        bump(bpm, tpm, i, h);
        bump(bpm, tpm, j, -h);
        bump(bmp, tmp, i, -h);
        bump(bmp, tmp, j, h);
        bump(bmm, tmm, i, -h);
        bump(bmm, tmm, j, -h);
        fd(i, j) = (ll(bpp, tpp) - ll(bpm, tpm) - ll(bmp, tmp) + ll(bmm, tmm)) /
                   (4.0 * h * h);
      }
    const Matrix expected = -fd / static_cast<double>(d.size());
    for (int i = 0; i < 3; ++i)
      for (int j = 0; j < 3; ++j)
        CHECK(std::abs(Mhat(i, j) - expected(i, j)) /
                  std::max(1e-6, std::abs(expected(i, j))) <
              1e-4);
  }

  SECTION("consistent with the population information") {
    const Eigen::Index n = 100000;
    const Matrix X = linear_trend_design(n);
    const Eigen::VectorXi m = Eigen::VectorXi::Constant(n, 1);
    const BinomialSeries d = simulate_series(X, m, truth(0.0), 66);
    const Matrix Mhat = empirical_omega11_hat(truth().beta, 1.0, d, rule);
    const Matrix M = omega11(truth().beta, 1.0, TrendDesign::linear_trend(),
                             MDist::constant(1), rule, fast_opts());
    // entrywise 3 MC standard errors, conservatively sized from the scale of M
    for (int i = 0; i < 3; ++i)
      for (int j = 0; j < 3; ++j)
        CHECK(std::abs(Mhat(i, j) - M(i, j)) <
              3.0 * std::sqrt(std::abs(M(i, i) * M(j, j)) / n) + 3e-3 / std::sqrt(n));
  }

  SECTION("rejects the boundary") {
    const Matrix X = linear_trend_design(10);
    const Eigen::VectorXi m = Eigen::VectorXi::Constant(10, 1);
    const BinomialSeries d = simulate_series(X, m, truth(0.0), 77);
    CHECK_THROWS_AS(empirical_omega11_hat(truth().beta, 0.0, d, rule32()),
                    std::invalid_argument);
  }
}

TEST_CASE("mixture_moments") {
  const TrendDesign design = TrendDesign::linear_trend();
  const MDist m1 = MDist::constant(1);

  SECTION("zero conditional shift keeps the mean at the truth") {
    const MixtureMoments mm = mixture_moments(truth(0.0), design, m1, 200, 0.0, 0.25,
                                              rule32(), rule9(), fast_opts());
    CHECK((mm.f2_mean - truth().beta).lpNorm<Eigen::Infinity>() < 1e-12);
  }

  SECTION("GLM branch reproduces the reported moments at n = 200") {
    const MixtureMoments mm = mixture_moments(truth(0.0), design, m1, 200, 0.0, 0.25,
                                              rule32(), rule9(), fast_opts());
    CHECK(std::abs(mm.f1_mean[0] - 0.82) < 0.005);
    CHECK(std::abs(mm.f1_mean[1] - 1.76) < 0.005);
    CHECK(std::abs(std::sqrt(mm.f1_cov(0, 0)) - 0.344) / 0.344 < 0.05);
    CHECK(std::abs(std::sqrt(mm.f1_cov(1, 1)) - 0.700) / 0.700 < 0.05);
  }
}

TEST_CASE("linearity_diagnostic") {
  const TrendDesign design = TrendDesign::linear_trend();

  SECTION("constant predictor is exactly linear") {
    const TrendDesign flat = TrendDesign::intercept_only();
    Vector b(1);
    b << 1.3;
    const LinearityDiagnostic diag = linearity_diagnostic(b, 1.0, flat, rule32(), 1e-3);
    CHECK(diag.max_abs_residual < 1e-12);
  }

  SECTION("the trend model sits in the near-linear regime") {
    Vector b(2);
    b << 1.0, 2.0;
    const LinearityDiagnostic diag = linearity_diagnostic(b, 1.0, design, rule32(), 1e-3);
    CHECK(diag.max_abs_residual < 0.01);  // predictor range (1,3)
  }

  SECTION("a wide predictor range breaks linearity") {
    Vector b(2);
    b << -6.0, 12.0;  // predictor spans (-6, 6)
    const LinearityDiagnostic diag = linearity_diagnostic(b, 1.0, design, rule32(), 1e-3);
    CHECK(diag.max_abs_residual > 0.01);
  }
}

TEST_CASE("report-level invariants") {
  const TrendDesign design = TrendDesign::linear_trend();
  const MDist m1 = MDist::constant(1);

  SECTION("sandwich is stable under doubling the quadrature order") {
    AsymptoticOptions o = fast_opts();
    const QuadratureRule r64 = gauss_hermite(64);
    const Matrix M11a = omega11(truth().beta, 1.0, design, m1, rule32(), o);
    const Matrix M11b = omega11(truth().beta, 1.0, design, m1, r64, o);
    const Matrix Sa = M11a.ldlt().solve(M11a.ldlt().solve(M11a).transpose()).eval();
    const Matrix Sb = M11b.ldlt().solve(M11b.ldlt().solve(M11b).transpose()).eval();
    CHECK((Sa - Sb).lpNorm<Eigen::Infinity>() / Sb.lpNorm<Eigen::Infinity>() < 1e-6);
  }

  SECTION("assembled report is coherent") {
    const AsymptoticReport rep = make_asymptotic_report(
        truth(0.0), design, m1, 200, rule32(), rule9(), fast_opts());
    Eigen::SelfAdjointEigenSolver<Matrix> es(rep.omega11, Eigen::EigenvaluesOnly);
    CHECK(es.eigenvalues().minCoeff() > 0.0);
    CHECK(rep.kappa1_bar > 0.0);
    CHECK(rep.kappa1_bar < 1.0);
    CHECK(rep.kappa2_bar > 0.0);
    CHECK(rep.kappa2_bar < 1.0);
    CHECK(!rep.near_singular);  // condition about 7e4 for the binary trend
    CHECK(rep.omega11_condition > 1e4);
  }
}

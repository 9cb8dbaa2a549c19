#pragma once

// Closed-form and quadrature-based asymptotic quantities for the marginal
// and GLM estimators under a trend design h(u):
//
//   Omega_{1,1}  information of the marginal score, and Omega_{1,2} with the
//                lag covariances of the score;  sandwich = O11^-1 O12 O11^-1
//   Omega_1/2    the GLM sandwich pieces around the limit point beta'
//   c_S, sigma_S mean and sd scale of the boundary score S_1n(beta_tilde)
//   kappa bounds Phi(-sqrt(n) c_S / sigma_S), Phi(-sqrt(n) tau0 / sigma_tau)
//   mixture      first two moments of the two-branch finite-sample law
//
// All u-integrals use the midpoint grid (default mesh 1e-4); lag sums are
// truncated at the smallest H with |phi|^H below a tolerance.

#include <Eigen/Dense>
#include <cmath>
#include <limits>
#include <stdexcept>
#include <vector>

#include "binlat/design.hpp"
#include "binlat/glm.hpp"
#include "binlat/marginal.hpp"
#include "binlat/model.hpp"
#include "binlat/quadrature.hpp"
#include "binlat/util.hpp"

namespace binlat {

struct AsymptoticOptions {
  double mesh = 1e-4;
  double lag_tolerance = 1e-8;
  long lag_cap = 10000;
  int threads = 0;  // 0 = hardware concurrency
};

inline long truncation_lag(double phi, const AsymptoticOptions& opts) {
  if (phi == 0.0) return 0;
  const long H = static_cast<long>(
      std::ceil(std::log(opts.lag_tolerance) / std::log(std::abs(phi))));
  return std::min(std::max(H, 1L), opts.lag_cap);
}

namespace detail {

// Per-y score vectors of one marginal observation at predictor eta:
// f(y), the beta direction (scalar, multiplies h(u)) and the tau direction.
struct PerYScores {
  std::vector<double> f, sb, st;
};

inline PerYScores per_y_scores(double eta, int m, double tau,
                               const QuadratureRule& rule) {
  const double sqt = std::sqrt(tau);
  const int K = rule.order;
  PerYScores out;
  out.f.assign(m + 1, 0.0);
  out.sb.assign(m + 1, 0.0);
  out.st.assign(m + 1, 0.0);
  std::vector<double> pmf(K);
  for (int y = 0; y <= m; ++y) {
    double f = 0.0, gb = 0.0, gt = 0.0;
    for (int k = 0; k < K; ++k) {
      const double w = eta + sqt * rule.nodes[k];
      const double p = std::exp(binom_logpmf_at(y, m, w)) * rule.weights[k];
      const double e = y - m * link_b_dot(w);
      f += p;
      gb += p * e;
      gt += p * e * rule.nodes[k] / (2.0 * sqt);
    }
    out.f[y] = f;
    out.sb[y] = gb / f;
    out.st[y] = gt / f;
  }
  return out;
}

}  // namespace detail

// Omega_{1,1} = int sum_y f(y|h(u)) ldot ldot' du, weighted over the trial
// count distribution.  Dimension r+1 with the tau component last.
inline Matrix omega11(const Vector& beta0, double tau0, const TrendDesign& design,
                      const MDist& mdist, const QuadratureRule& rule,
                      const AsymptoticOptions& opts = AsymptoticOptions{}) {
  if (!(tau0 > 0.0)) throw std::invalid_argument("omega11: tau0 must be > 0");
  mdist.validate();
  const int r = design.dim;
  const UGrid grid(opts.mesh);
  auto zero = [&] { return Matrix::Zero(r + 1, r + 1).eval(); };
  Matrix M = parallel_chunk_sum<Matrix>(
      grid.cells, zero,
      [&](std::int64_t i, Matrix& acc) {
        const Vector h = design(grid.point(i));
        const double eta = h.dot(beta0);
        Vector l(r + 1);
        for (const auto& [m, kappa] : mdist.atoms) {
          const detail::PerYScores sc = detail::per_y_scores(eta, m, tau0, rule);
          for (int y = 0; y <= m; ++y) {
            l.head(r) = sc.sb[y] * h;
            l[r] = sc.st[y];
            acc += kappa * sc.f[y] * l * l.transpose();
          }
        }
      },
      opts.threads);
  return M * grid.width;
}

// Omega_{1,2} = Omega_{1,1} + sum_{h>=1} 2 int Cov(ldot_t, ldot_{t+h})(u) du.
// The lag-h covariance at u is E[A(W_1) A(W_2)'] over the correlated latent
// pair, where A(w) = sum_y ldot(y) f(y|w); evaluating A on the tensor rule
// is the same discretization as the 9 x 9 joint probabilities.
inline Matrix omega12(const ModelParams& params0, const TrendDesign& design,
                      const MDist& mdist, const QuadratureRule& rule,
                      const QuadratureRule& rule2d,
                      const AsymptoticOptions& opts = AsymptoticOptions{}) {
  if (!(std::abs(params0.phi) < 1.0))
    throw std::invalid_argument("omega12: |phi| must be < 1");
  const Matrix M11 = omega11(params0.beta, params0.tau, design, mdist, rule, opts);
  const long H = truncation_lag(params0.phi, opts);
  if (H == 0) return M11;

  const int r = design.dim;
  const int K = rule2d.order;
  const UGrid grid(opts.mesh);
  const double sqt = std::sqrt(params0.tau);
  const int mmax = mdist.max_m();

  auto zero = [&] { return Matrix::Zero(r + 1, r + 1).eval(); };
  Matrix cross = parallel_chunk_sum<Matrix>(
      grid.cells, zero,
      [&](std::int64_t i, Matrix& acc) {
        const Vector h = design(grid.point(i));
        const double eta = h.dot(params0.beta);
        // per-(m, y) score vectors at this u
        std::vector<detail::PerYScores> sc;
        for (const auto& [m, kappa] : mdist.atoms)
          sc.push_back(detail::per_y_scores(eta, m, params0.tau, rule));
        // A(w) averaged over the trial-count distribution
        Matrix ldot(r + 1, mmax + 1);
        auto eval_A = [&](double w, Vector& A) {
          A.setZero();
          std::size_t ai = 0;
          for (const auto& [m, kappa] : mdist.atoms) {
            for (int y = 0; y <= m; ++y) {
              const double f = std::exp(binom_logpmf_at(y, m, w));
              A.head(r) += kappa * f * sc[ai].sb[y] * h;
              A[r] += kappa * f * sc[ai].st[y];
            }
            ++ai;
          }
        };
        Vector A1(r + 1), A2(r + 1);
        Matrix lagsum = Matrix::Zero(r + 1, r + 1);
        for (long lag = 1; lag <= H; ++lag) {
          const double rho = std::pow(params0.phi, static_cast<double>(lag));
          const double l21 = sqt * rho;
          const double l22 = sqt * std::sqrt(std::max(0.0, 1.0 - rho * rho));
          Matrix Ch = Matrix::Zero(r + 1, r + 1);
          for (int k = 0; k < K; ++k) {
            eval_A(eta + sqt * rule2d.nodes[k], A1);
            Vector B = Vector::Zero(r + 1);
            for (int l = 0; l < K; ++l) {
              eval_A(eta + l21 * rule2d.nodes[k] + l22 * rule2d.nodes[l], A2);
              B += rule2d.weights[l] * A2;
            }
            Ch += rule2d.weights[k] * A1 * B.transpose();
          }
          lagsum += 2.0 * Ch;
        }
        acc += lagsum;
      },
      opts.threads, 64);
  return M11 + cross * grid.width;
}

struct GlmSandwich {
  Vector beta_prime;
  Matrix omega1;
  Matrix omega2;
  Matrix sandwich;
};

// Theorem-level sandwich for the GLM estimator.  The latent cross term uses
// centered covariances of bdot(a0 + alpha); the uncentered part integrates
// to zero against h(u) by the definition of beta'.
inline GlmSandwich glm_sandwich(const ModelParams& params0, const TrendDesign& design,
                                const MDist& mdist, const QuadratureRule& rule,
                                const QuadratureRule& rule2d,
                                const AsymptoticOptions& opts = AsymptoticOptions{}) {
  mdist.validate();
  const int r = design.dim;
  const UGrid grid(opts.mesh);
  GlmSandwich out;
  out.beta_prime = beta_prime(params0.beta, params0.tau, design, mdist, rule, opts.mesh);
  const double mbar = mdist.mean();
  double m2bar = 0.0;
  for (const auto& [m, kappa] : mdist.atoms) m2bar += kappa * m * m;
  const double sqt = std::sqrt(params0.tau);
  const long H = params0.tau > 0.0 ? truncation_lag(params0.phi, opts) : 0;
  const int K2 = rule2d.order;

  auto zero = [&] { return Matrix::Zero(r, 2 * r).eval(); };  // [Omega1 | Omega2]
  Matrix packed = parallel_chunk_sum<Matrix>(
      grid.cells, zero,
      [&](std::int64_t i, Matrix& acc) {
        const Vector h = design(grid.point(i));
        const double a0 = h.dot(params0.beta);
        const double ap = h.dot(out.beta_prime);
        const double qp = link_b_dot(ap);
        double mean_b = 0.0, var_b = 0.0, mean_bdd = 0.0, diff2 = 0.0;
        for (int k = 0; k < rule.order; ++k) {
          const double p = link_b_dot(a0 + sqt * rule.nodes[k]);
          mean_b += rule.weights[k] * p;
          var_b += rule.weights[k] * p * p;
          mean_bdd += rule.weights[k] * p * (1.0 - p);
          diff2 += rule.weights[k] * (p - qp) * (p - qp);
        }
        var_b -= mean_b * mean_b;
        double crosscov = 0.0;
        for (long lag = 1; lag <= H; ++lag) {
          const double rho = std::pow(params0.phi, static_cast<double>(lag));
          const double l21 = sqt * rho;
          const double l22 = sqt * std::sqrt(std::max(0.0, 1.0 - rho * rho));
          double e12 = 0.0;
          for (int k = 0; k < K2; ++k) {
            const double p1 = link_b_dot(a0 + sqt * rule2d.nodes[k]);
            double inner = 0.0;
            for (int l = 0; l < K2; ++l)
              inner += rule2d.weights[l] *
                       link_b_dot(a0 + l21 * rule2d.nodes[k] + l22 * rule2d.nodes[l]);
            e12 += rule2d.weights[k] * p1 * inner;
          }
          crosscov += 2.0 * (e12 - mean_b * mean_b);
        }
        const double w1 = mbar * link_b_ddot(ap);
        const double w2 = m2bar * diff2 + mbar * mean_bdd + mbar * mbar * crosscov;
        const Matrix hh = h * h.transpose();
        acc.leftCols(r) += w1 * hh;
        acc.rightCols(r) += w2 * hh;
      },
      opts.threads, 256);
  out.omega1 = packed.leftCols(r) * grid.width;
  out.omega2 = packed.rightCols(r) * grid.width;
  out.sandwich = out.omega1.ldlt().solve(out.omega2.transpose()).transpose();
  out.sandwich = out.omega1.ldlt().solve(out.sandwich);
  out.sandwich = 0.5 * (out.sandwich + out.sandwich.transpose()).eval();
  return out;
}

struct ScoreMoments {
  double c1 = 0.0, c2 = 0.0, c_S = 0.0;
  Vector J_S, K_S;
  double V_S = 0.0;
  double sigma_S = 0.0;
};

// Moments of the boundary score S_1n(beta_tilde) around its limit c_S.
//
// For an independent latent process (phi = 0) the closed-form K_S/V_S
// integrands in terms of the marginal success probability pi0 are used; for
// phi != 0 the lag sums are assembled from the exact conditional moments of
// e_t = y_t - m bdot(h(u)'beta') given the latent pair, integrated on the
// tensor rule.  Requires a constant trial count.
inline ScoreMoments score_moments(const ModelParams& params0, const TrendDesign& design,
                                  const MDist& mdist, const QuadratureRule& rule,
                                  const QuadratureRule& rule2d,
                                  const AsymptoticOptions& opts = AsymptoticOptions{}) {
  if (!mdist.is_constant())
    throw std::invalid_argument("score_moments: trial count must be constant over time");
  const int m = mdist.constant_m();
  const int r = design.dim;
  const UGrid grid(opts.mesh);
  const GlmSandwich glm = glm_sandwich(params0, design, mdist, rule, rule2d, opts);
  const double sqt = std::sqrt(params0.tau);
  const long H = params0.tau > 0.0 ? truncation_lag(params0.phi, opts) : 0;
  const int K2 = rule2d.order;

  // packed per-u accumulator: c1, c2, V_S, K_S (r), J_S (r)
  const int width = 3 + 2 * r;
  auto zero = [&] { return Vector::Zero(width).eval(); };
  Vector packed = parallel_chunk_sum<Vector>(
      grid.cells, zero,
      [&](std::int64_t i, Vector& acc) {
        const Vector h = design(grid.point(i));
        const double a0 = h.dot(params0.beta);
        const double ap = h.dot(glm.beta_prime);
        const double q = link_b_dot(ap);

        // conditional moments of e = y - m q given alpha, alpha-integrated
        auto cond = [&](double alpha, double out[4]) {
          const double p = link_b_dot(a0 + alpha);
          const double v = m * p * (1.0 - p);
          const double mu1 = m * (p - q);
          const double mu3b = v * (1.0 - 2.0 * p);
          const double mu4b = v * (1.0 + 3.0 * (m - 2) * p * (1.0 - p));
          out[0] = mu1;
          out[1] = v + mu1 * mu1;
          out[2] = mu3b + 3.0 * mu1 * v + mu1 * mu1 * mu1;
          out[3] = mu4b + 4.0 * mu1 * mu3b + 6.0 * mu1 * mu1 * v + mu1 * mu1 * mu1 * mu1;
        };
        double pi0 = 0.0, diff2 = 0.0;
        double E1 = 0.0, E2 = 0.0, E3 = 0.0, E4 = 0.0;
        for (int k = 0; k < rule.order; ++k) {
          const double p = link_b_dot(a0 + sqt * rule.nodes[k]);
          pi0 += rule.weights[k] * p;
          diff2 += rule.weights[k] * (p - q) * (p - q);
          double mo[4];
          cond(sqt * rule.nodes[k], mo);
          E1 += rule.weights[k] * mo[0];
          E2 += rule.weights[k] * mo[1];
          E3 += rule.weights[k] * mo[2];
          E4 += rule.weights[k] * mo[3];
        }
        acc[0] += diff2;
        acc[1] += (q - pi0) * (2.0 * q - 1.0);
        acc.segment(3 + r, r) +=
            (2.0 * m * m * (pi0 - q) * link_b_ddot(ap) + m * link_b_d3(ap)) * h;

        if (params0.phi == 0.0) {
          const double pq = pi0 * (1.0 - pi0);
          acc[2] += m * pq * (1.0 + 2.0 * (m - 3) * pq) +
                    4.0 * m * m * m * pq * (pi0 - q) * (pi0 - q) +
                    4.0 * m * m * pq * (1.0 - 2.0 * pi0) * (pi0 - q);
          acc.segment(3, r) += (m * pq * (1.0 - 2.0 * pi0) + 2.0 * m * m * pq * (pi0 - q)) * h;
        } else {
          double vs = E4 - E2 * E2;          // Var(e^2), lag 0
          double ks = E3 - E1 * E2;          // Cov(e, e^2), lag 0
          for (long lag = 1; lag <= H; ++lag) {
            const double rho = std::pow(params0.phi, static_cast<double>(lag));
            const double l21 = sqt * rho;
            const double l22 = sqt * std::sqrt(std::max(0.0, 1.0 - rho * rho));
            double e22 = 0.0, e12 = 0.0;
            for (int k = 0; k < K2; ++k) {
              double mo1[4];
              cond(sqt * rule2d.nodes[k], mo1);
              double in2 = 0.0;
              for (int l = 0; l < K2; ++l) {
                double mo2[4];
                cond(l21 * rule2d.nodes[k] + l22 * rule2d.nodes[l], mo2);
                in2 += rule2d.weights[l] * mo2[1];
              }
              e22 += rule2d.weights[k] * mo1[1] * in2;
              e12 += rule2d.weights[k] * mo1[0] * in2;
            }
            vs += 2.0 * (e22 - E2 * E2);
            ks += 2.0 * (e12 - E1 * E2);
          }
          acc[2] += vs;
          acc.segment(3, r) += ks * h;
        }
      },
      opts.threads, 64);
  packed *= grid.width;

  ScoreMoments out;
  out.c1 = packed[0];
  out.c2 = packed[1];
  out.c_S = m * (m - 1) * out.c1 + m * out.c2;
  out.V_S = packed[2];
  out.K_S = packed.segment(3, r);
  out.J_S = packed.segment(3 + r, r);
  const Matrix O1i = glm.omega1.inverse();
  const double var = out.V_S - 2.0 * out.J_S.dot(O1i * out.K_S) +
                     out.J_S.dot(O1i * glm.omega2 * O1i * out.J_S);
  out.sigma_S = std::sqrt(std::max(0.0, var));
  return out;
}

// kappa1_bar = Phi(-sqrt(n) c_S / sigma_S), kappa2_bar = Phi(-sqrt(n) tau0 / sigma_tau)
inline std::pair<double, double> kappa_bounds(const ModelParams& params0,
                                              const TrendDesign& design,
                                              const MDist& mdist, long n,
                                              const QuadratureRule& rule,
                                              const QuadratureRule& rule2d,
                                              const AsymptoticOptions& opts =
                                                  AsymptoticOptions{}) {
  if (n < 1) throw std::invalid_argument("kappa_bounds: n must be >= 1");
  if (!(params0.tau > 0.0)) throw std::invalid_argument("kappa_bounds: tau0 must be > 0");
  const ScoreMoments sm = score_moments(params0, design, mdist, rule, rule2d, opts);
  const Matrix M11 = omega11(params0.beta, params0.tau, design, mdist, rule, opts);
  const Matrix M12 = omega12(params0, design, mdist, rule, rule2d, opts);
  const Matrix S = M11.ldlt().solve(M11.ldlt().solve(M12).transpose());
  const double sigma_tau = std::sqrt(S(design.dim, design.dim));
  const double k1 = normal_cdf(-std::sqrt(static_cast<double>(n)) * sm.c_S / sm.sigma_S);
  const double k2 =
      normal_cdf(-std::sqrt(static_cast<double>(n)) * params0.tau / sigma_tau);
  return {k1, k2};
}

struct MixtureMoments {
  Vector f1_mean;  // GLM branch: beta' with the Theorem-2 sandwich
  Matrix f1_cov;
  Vector f2_mean;  // interior branch conditional on tau_hat > 0
  Matrix f2_cov;
};

// Conditional moments of the two mixture branches at sample size n.  The
// interior branch applies the regression identities
//   E(bhat - b0 | tau>0)   = S_bt / S_tt * E(tau_hat - tau0 | tau>0)
//   Var(bhat | tau>0)      = S_bb - S_bt S_tb / S_tt + S_bt S_tb / S_tt^2 * Var(tau|tau>0)
// with S = sandwich_marginal / n; the empirical conditional tau moments are
// supplied by the caller (typically from simulation).
inline MixtureMoments mixture_moments(const ModelParams& params0,
                                      const TrendDesign& design, const MDist& mdist,
                                      long n, double cond_tau_mean_shift,
                                      double cond_tau_var, const QuadratureRule& rule,
                                      const QuadratureRule& rule2d,
                                      const AsymptoticOptions& opts = AsymptoticOptions{}) {
  const int r = design.dim;
  const Matrix M11 = omega11(params0.beta, params0.tau, design, mdist, rule, opts);
  const Matrix M12 = omega12(params0, design, mdist, rule, rule2d, opts);
  const Matrix S = (M11.ldlt().solve(M11.ldlt().solve(M12).transpose())) /
                   static_cast<double>(n);
  const double s_tt = S(r, r);
  if (!(s_tt > 0.0) || !std::isfinite(s_tt))
    throw std::invalid_argument("mixture_moments: singular tau variance");
  const Vector s_bt = S.topRightCorner(r, 1).col(0);
  const Matrix s_bb = S.topLeftCorner(r, r);

  MixtureMoments out;
  const GlmSandwich glm = glm_sandwich(params0, design, mdist, rule, rule2d, opts);
  out.f1_mean = glm.beta_prime;
  out.f1_cov = glm.sandwich / static_cast<double>(n);
  out.f2_mean = params0.beta + s_bt / s_tt * cond_tau_mean_shift;
  out.f2_cov = s_bb - s_bt * s_bt.transpose() / s_tt +
               s_bt * s_bt.transpose() / (s_tt * s_tt) * cond_tau_var;
  return out;
}

// Plug-in empirical information matrix -n^-1 sum_t d^2 log f_t / d delta^2,
// the exact Hessian of the discretized marginal log-likelihood.
inline Matrix empirical_omega11_hat(const Vector& beta, double tau,
                                    const BinomialSeries& data,
                                    const QuadratureRule& rule) {
  if (!(tau > 0.0))
    throw std::invalid_argument("empirical_omega11_hat: tau must be > 0");
  const Eigen::Index p = data.dim() + 1;
  Matrix M = Matrix::Zero(p, p);
  for (Eigen::Index t = 0; t < data.size(); ++t)
    M -= eval_marginal_obs(data.y[t], data.m[t], data.X.row(t).transpose(), beta, tau,
                           rule, true, true)
             .hess;
  return M / static_cast<double>(data.size());
}

struct LinearityDiagnostic {
  double a0 = 0.0;
  double a1 = 0.0;
  double max_abs_residual = 0.0;
};

// Least-squares fit of int (1 - 2 bdot(W)) rho(z) dz against the linear
// predictor over the design range, rho(z) the bddot-tilted density.  A small
// residual signals the near-linearity that makes Omega_{1,1} close to
// singular and tau pile-up likely.
inline LinearityDiagnostic linearity_diagnostic(const Vector& beta, double tau,
                                                const TrendDesign& design,
                                                const QuadratureRule& rule, double mesh) {
  if (tau < 0.0) throw std::invalid_argument("linearity_diagnostic: tau must be >= 0");
  const UGrid grid(mesh);
  const double sqt = std::sqrt(tau);
  Vector a(grid.cells), g(grid.cells);
  for (Eigen::Index i = 0; i < grid.cells; ++i) {
    const double eta = design(grid.point(i)).dot(beta);
    a[i] = eta;
    double num = 0.0, den = 0.0;
    for (int k = 0; k < rule.order; ++k) {
      const double w = eta + sqt * rule.nodes[k];
      const double bd2 = link_b_ddot(w);
      num += rule.weights[k] * (1.0 - 2.0 * link_b_dot(w)) * bd2;
      den += rule.weights[k] * bd2;
    }
    g[i] = num / den;
  }
  LinearityDiagnostic out;
  const double abar = a.mean();
  const double gbar = g.mean();
  const double sxx = (a.array() - abar).square().sum();
  if (sxx < 1e-14) {
    out.a1 = 0.0;
    out.a0 = gbar;
  } else {
    out.a1 = (a.array() - abar).cwiseProduct(g.array() - gbar).sum() / sxx;
    out.a0 = gbar - out.a1 * abar;
  }
  out.max_abs_residual = (g.array() - out.a0 - out.a1 * a.array()).abs().maxCoeff();
  return out;
}

struct AsymptoticReport {
  Vector beta_prime;
  Matrix omega11;
  Matrix omega12;
  Matrix sandwich_marginal;
  Matrix omega1;
  Matrix omega2;
  Matrix sandwich_glm;
  double c1 = 0.0, c2 = 0.0, c_S = 0.0, sigma_S = 0.0;
  Vector J_S, K_S;
  double V_S = 0.0;
  double kappa1_bar = 0.0, kappa2_bar = 0.0;
  double sigma_tau = 0.0;  // sqrt of the (tau,tau) sandwich entry
  double omega11_condition = 0.0;
  bool near_singular = false;  // condition number beyond 1e12
};

inline AsymptoticReport make_asymptotic_report(const ModelParams& params0,
                                               const TrendDesign& design,
                                               const MDist& mdist, long n,
                                               const QuadratureRule& rule,
                                               const QuadratureRule& rule2d,
                                               const AsymptoticOptions& opts =
                                                   AsymptoticOptions{}) {
  AsymptoticReport rep;
  rep.omega11 = omega11(params0.beta, params0.tau, design, mdist, rule, opts);
  rep.omega12 = omega12(params0, design, mdist, rule, rule2d, opts);
  {
    Eigen::SelfAdjointEigenSolver<Matrix> es(rep.omega11, Eigen::EigenvaluesOnly);
    rep.omega11_condition = es.eigenvalues().maxCoeff() / es.eigenvalues().minCoeff();
    rep.near_singular = !(rep.omega11_condition < 1e12);
  }
  rep.sandwich_marginal =
      rep.omega11.ldlt().solve(rep.omega11.ldlt().solve(rep.omega12).transpose());
  rep.sandwich_marginal =
      (0.5 * (rep.sandwich_marginal + rep.sandwich_marginal.transpose())).eval();
  rep.sigma_tau = std::sqrt(rep.sandwich_marginal(design.dim, design.dim));

  const GlmSandwich glm = glm_sandwich(params0, design, mdist, rule, rule2d, opts);
  rep.beta_prime = glm.beta_prime;
  rep.omega1 = glm.omega1;
  rep.omega2 = glm.omega2;
  rep.sandwich_glm = glm.sandwich;

  if (mdist.is_constant()) {
    const ScoreMoments sm = score_moments(params0, design, mdist, rule, rule2d, opts);
    rep.c1 = sm.c1;
    rep.c2 = sm.c2;
    rep.c_S = sm.c_S;
    rep.sigma_S = sm.sigma_S;
    rep.J_S = sm.J_S;
    rep.K_S = sm.K_S;
    rep.V_S = sm.V_S;
    rep.kappa1_bar =
        normal_cdf(-std::sqrt(static_cast<double>(n)) * rep.c_S / rep.sigma_S);
  } else {
    rep.c1 = rep.c2 = rep.c_S = rep.sigma_S = rep.V_S =
        std::numeric_limits<double>::quiet_NaN();
    rep.kappa1_bar = std::numeric_limits<double>::quiet_NaN();
  }
  rep.kappa2_bar =
      normal_cdf(-std::sqrt(static_cast<double>(n)) * params0.tau / rep.sigma_tau);
  return rep;
}

}  // namespace binlat

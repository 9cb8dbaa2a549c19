#pragma once

// Marginal (random-intercept) likelihood estimation of delta = (beta, tau).
// Each observation contributes  log int f(y_t | W_t) g(alpha_t; tau) dalpha_t,
// serial dependence is deliberately ignored.  tau = 0 is a legitimate
// maximizer: there the likelihood coincides with the GLM likelihood and the
// fit is flagged degenerate.

#include <Eigen/Dense>
#include <cmath>
#include <limits>
#include <optional>
#include <stdexcept>
#include <vector>

#include "binlat/design.hpp"
#include "binlat/errors.hpp"
#include "binlat/glm.hpp"
#include "binlat/model.hpp"
#include "binlat/quadrature.hpp"

namespace binlat {

struct FitResult {
  Vector beta_hat;
  double tau_hat = 0.0;
  double loglik = 0.0;
  bool degenerate = false;  // tau_hat at or below the degeneracy threshold
  int iterations = 0;
  bool converged = false;
};

struct MarginalObs {
  double logf = 0.0;
  Vector grad;  // d log f / d(beta, tau), length r+1
  Matrix hess;  // second derivatives, (r+1) x (r+1)
};

// Derivatives of one observation's log marginal density with respect to
// (beta, tau).  These are exact derivatives of the Gauss-Hermite discretized
// integral, so Newton steps and finite differences of the discretized
// log-likelihood agree to quadrature accuracy.
inline MarginalObs eval_marginal_obs(int y, int m, const Vector& x, const Vector& beta,
                                     double tau, const QuadratureRule& rule,
                                     bool want_grad = true, bool want_hess = false) {
  const Eigen::Index r = x.size();
  MarginalObs out;
  if (tau == 0.0) {
    const double eta = x.dot(beta);
    out.logf = binom_logpmf_at(y, m, eta);
    if (want_grad) {
      out.grad.resize(r + 1);
      const double e = y - m * link_b_dot(eta);
      out.grad.head(r) = e * x;
      // boundary limit of the tau derivative (the score scaled by 1/2)
      out.grad[r] = 0.5 * (e * e - m * link_b_ddot(eta));
    }
    return out;
  }
  const double st = std::sqrt(tau);
  const int K = rule.order;
  std::vector<double> logt(K), ek(K), wk(K);
  double tmax = -std::numeric_limits<double>::infinity();
  for (int k = 0; k < K; ++k) {
    const double w = x.dot(beta) + st * rule.nodes[k];
    wk[k] = w;
    logt[k] = binom_logpmf_at(y, m, w);
    tmax = std::max(tmax, logt[k]);
  }
  double s0 = 0.0;
  std::vector<double> sk(K);
  for (int k = 0; k < K; ++k) {
    sk[k] = rule.weights[k] * std::exp(logt[k] - tmax);
    s0 += sk[k];
  }
  out.logf = tmax + std::log(s0);
  if (!want_grad && !want_hess) return out;

  Vector v(r + 1);
  Vector g = Vector::Zero(r + 1);
  Matrix A = want_hess ? Matrix::Zero(r + 1, r + 1) : Matrix();
  for (int k = 0; k < K; ++k) {
    ek[k] = y - m * link_b_dot(wk[k]);
    v.head(r) = x;
    v[r] = rule.nodes[k] / (2.0 * st);
    const double p = sk[k] / s0;
    g += p * ek[k] * v;
    if (want_hess) {
      const double curv = ek[k] * ek[k] - m * link_b_ddot(wk[k]);
      A += p * curv * v * v.transpose();
      A(r, r) -= p * ek[k] * rule.nodes[k] / (4.0 * tau * st);
    }
  }
  if (want_grad || want_hess) out.grad = g;
  if (want_hess) out.hess = A - g * g.transpose();
  return out;
}

// l1(delta) = sum_t log pi_t(y_t); equals glm_loglik exactly at tau = 0
inline double marginal_loglik(const Vector& beta, double tau, const BinomialSeries& data,
                              const QuadratureRule& rule) {
  if (tau < 0.0) throw std::invalid_argument("marginal_loglik: tau must be >= 0");
  if (tau == 0.0) return glm_loglik(beta, data);
  double ll = 0.0;
  for (Eigen::Index t = 0; t < data.size(); ++t)
    ll += eval_marginal_obs(data.y[t], data.m[t], data.X.row(t).transpose(), beta, tau,
                            rule, false)
              .logf;
  return ll;
}

// Gradient of l1 in (beta, tau); the z/(2 sqrt(tau)) factor makes this
// undefined at the boundary, see tau_score_at_zero for tau = 0.
inline Vector marginal_score(const Vector& beta, double tau, const BinomialSeries& data,
                             const QuadratureRule& rule) {
  if (!(tau > 0.0)) throw std::invalid_argument("marginal_score: tau must be > 0");
  Vector g = Vector::Zero(data.dim() + 1);
  for (Eigen::Index t = 0; t < data.size(); ++t)
    g += eval_marginal_obs(data.y[t], data.m[t], data.X.row(t).transpose(), beta, tau,
                           rule, true)
             .grad;
  return g;
}

// S_1n(beta) = n^-1 sum_t [ (y_t - m_t bdot(x_t'beta))^2 - m_t bddot(x_t'beta) ],
// the scaled score of l1 with respect to tau at tau = 0 (closed form).
inline double tau_score_at_zero(const Vector& beta, const BinomialSeries& data) {
  double s = 0.0;
  for (Eigen::Index t = 0; t < data.size(); ++t) {
    const double eta = data.X.row(t).dot(beta);
    const double e = data.y[t] - data.m[t] * link_b_dot(eta);
    s += e * e - data.m[t] * link_b_ddot(eta);
  }
  return s / static_cast<double>(data.size());
}

struct MarginalOptions {
  double tau_init = 0.5;
  int max_iterations = 200;
  int max_halvings = 30;
  double rel_loglik_tol = 1e-10;
  double step_tol = 1e-8;
  double score_tol = 1e-6;           // interior first-order condition
  double degeneracy_threshold = 1e-6;
  double wander_bound = 1e3;         // ||beta - beta_init||_inf triggering NoConvergence
  double hess_condition_limit = 1e12;
  GlmOptions glm;
};

namespace detail {

inline void full_derivatives(const BinomialSeries& data, const Vector& beta, double tau,
                             const QuadratureRule& rule, double& ll, Vector& g, Matrix& H) {
  const Eigen::Index p = data.dim() + 1;
  ll = 0.0;
  g = Vector::Zero(p);
  H = Matrix::Zero(p, p);
  for (Eigen::Index t = 0; t < data.size(); ++t) {
    const MarginalObs obs = eval_marginal_obs(data.y[t], data.m[t],
                                              data.X.row(t).transpose(), beta, tau, rule,
                                              true, true);
    ll += obs.logf;
    g += obs.grad;
    H += obs.hess;
  }
}

inline Matrix fd_hessian_of_score(const BinomialSeries& data, const Vector& beta,
                                  double tau, const QuadratureRule& rule) {
  const Eigen::Index p = data.dim() + 1;
  Matrix H(p, p);
  const double h = 1e-6;
  for (Eigen::Index j = 0; j < p; ++j) {
    Vector bp = beta, bm = beta;
    double tp = tau, tm = tau;
    if (j < p - 1) {
      bp[j] += h;
      bm[j] -= h;
    } else {
      tp += h;
      tm = std::max(tau - h, tau * 0.5);  // keep tau positive
    }
    const Vector gp = marginal_score(bp, tp, data, rule);
    const Vector gm = marginal_score(bm, tm, data, rule);
    const double denom = (j < p - 1) ? 2.0 * h : (tp - tm);
    H.col(j) = (gp - gm) / denom;
  }
  return 0.5 * (H + H.transpose());
}

}  // namespace detail

// Maximize l1 over beta in R^r, tau >= 0.
//
// Procedure: fit the GLM first (that is the boundary candidate), then run a
// projected Newton ascent from (beta_tilde, tau_init) and keep whichever of
// the boundary and interior candidates has the larger likelihood. The
// interior attempt is made even when the boundary score S_1n is negative.
inline FitResult fit_marginal(const BinomialSeries& data, const QuadratureRule& rule,
                              const MarginalOptions& opts = MarginalOptions{},
                              const std::optional<std::pair<Vector, double>>& init =
                                  std::nullopt) {
  const Eigen::Index r = data.dim();
  const GlmFit glm = glm_fit(data, Vector(), opts.glm);
  const double boundary_ll = glm.loglik;

  Vector beta = init ? init->first : glm.beta_tilde;
  double tau = init ? init->second : opts.tau_init;
  if (tau <= 0.0) tau = opts.tau_init;
  const Vector beta_start = beta;

  double ll;
  Vector g;
  Matrix H;
  detail::full_derivatives(data, beta, tau, rule, ll, g, H);

  FitResult res;
  bool interior_converged = false;
  int it = 0;
  for (; it < opts.max_iterations; ++it) {
    if (g.lpNorm<Eigen::Infinity>() < opts.score_tol) {
      interior_converged = true;
      break;
    }
    Matrix negH = -H;
    {
      Eigen::SelfAdjointEigenSolver<Matrix> es(negH, Eigen::EigenvaluesOnly);
      const double lo = es.eigenvalues().minCoeff();
      const double hi = es.eigenvalues().maxCoeff();
      if (!(lo > 0.0) || hi / lo > opts.hess_condition_limit) {
        negH = -detail::fd_hessian_of_score(data, beta, tau, rule);
        Eigen::SelfAdjointEigenSolver<Matrix> es2(negH, Eigen::EigenvaluesOnly);
        const double lo2 = es2.eigenvalues().minCoeff();
        if (!(lo2 > 0.0)) {
          const double ridge = std::max(1e-10, -lo2 * 1.5 + 1e-10);
          negH += ridge * Matrix::Identity(r + 1, r + 1);
        }
      }
    }
    const Vector step = negH.ldlt().solve(g);

    double scale = 1.0;
    bool accepted = false;
    Vector beta_new;
    double tau_new = tau, ll_new = ll;
    for (int h = 0; h <= opts.max_halvings; ++h) {
      beta_new = beta + scale * step.head(r);
      tau_new = std::max(0.0, tau + scale * step[r]);
      ll_new = marginal_loglik(beta_new, tau_new, data, rule);
      if (ll_new > ll) {
        accepted = true;
        break;
      }
      scale *= 0.5;
    }
    if (!accepted) {
      interior_converged = g.lpNorm<Eigen::Infinity>() < opts.score_tol * 10;
      break;
    }
    const double step_norm = (scale * step).lpNorm<Eigen::Infinity>();
    const double rel_change = std::abs(ll_new - ll) / (1.0 + std::abs(ll_new));
    beta = beta_new;
    const double tau_prev = tau;
    tau = tau_new;
    ll = ll_new;

    if ((beta - beta_start).lpNorm<Eigen::Infinity>() > opts.wander_bound)
      throw NoConvergence("fit_marginal: estimate wandered out of the search region");

    if (tau == 0.0) {
      // projection hit the boundary; leave if the boundary face is optimal
      if (tau_score_at_zero(beta, data) <= 0.0) break;
      tau = 0.5 * tau_prev;  // boundary not optimal, back off inside
      detail::full_derivatives(data, beta, tau, rule, ll, g, H);
      continue;
    }
    detail::full_derivatives(data, beta, tau, rule, ll, g, H);
    if (rel_change < opts.rel_loglik_tol && step_norm < opts.step_tol) {
      interior_converged = g.lpNorm<Eigen::Infinity>() < opts.score_tol;
      break;
    }
  }
  if (it >= opts.max_iterations && !interior_converged &&
      ll > boundary_ll + opts.rel_loglik_tol)
    throw NoConvergence("fit_marginal: iteration limit reached");

  res.iterations = it;
  if (ll > boundary_ll + 1e-9 && tau > opts.degeneracy_threshold) {
    res.beta_hat = beta;
    res.tau_hat = tau;
    res.loglik = ll;
    res.degenerate = false;
    res.converged = interior_converged;
  } else {
    res.beta_hat = glm.beta_tilde;
    res.tau_hat = 0.0;
    res.loglik = boundary_ll;
    res.degenerate = true;
    res.converged = true;
  }
  return res;
}

// Deterministic limit of n^-1 l1 under a trend design,
//   Q(delta) = sum_m kappa_m int_0^1 sum_j pi0(j, h(u)) log pi(j, h(u)) du.
inline double limit_Q(const Vector& beta, double tau, const ModelParams& params0,
                      const TrendDesign& design, const MDist& mdist,
                      const QuadratureRule& rule, double mesh) {
  if (tau < 0.0) throw std::invalid_argument("limit_Q: tau must be >= 0");
  mdist.validate();
  const UGrid grid(mesh);
  double q = 0.0;
  for (const auto& [m, kappa] : mdist.atoms) {
    double acc = 0.0;
    for (Eigen::Index i = 0; i < grid.cells; ++i) {
      const Vector h = design(grid.point(i));
      const double eta0 = h.dot(params0.beta);
      const double eta = h.dot(beta);
      for (int j = 0; j <= m; ++j) {
        const double p0 = marginal_prob(j, eta0, m, params0.tau, rule);
        const double p = marginal_prob(j, eta, m, tau, rule);
        acc += p0 * std::log(p);
      }
    }
    q += kappa * acc * grid.width;
  }
  return q;
}

}  // namespace binlat

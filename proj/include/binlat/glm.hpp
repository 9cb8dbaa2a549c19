#pragma once

// Working-independence (GLM) estimation and the asymptotic limit point of
// the GLM estimator under a latent process.  Under a latent variance tau_0
// the GLM estimate does not converge to beta_0 but to the root beta' of
//
//   int_0^1 ( int bdot(h(u)'beta_0 + a) g(a; tau_0) da - bdot(h(u)'beta') ) h(u) du = 0.

#include <Eigen/Dense>
#include <cmath>
#include <stdexcept>

#include "binlat/design.hpp"
#include "binlat/errors.hpp"
#include "binlat/model.hpp"
#include "binlat/quadrature.hpp"

namespace binlat {

struct GlmFit {
  Vector beta_tilde;
  double loglik = 0.0;
  int iterations = 0;
  bool converged = false;
  double score_norm = 0.0;
};

// l0(beta) = sum_t [ y_t x_t'beta - m_t b(x_t'beta) + c(y_t) ]
inline double glm_loglik(const Vector& beta, const BinomialSeries& data) {
  if (beta.size() != data.dim())
    throw std::invalid_argument("glm_loglik: beta dimension mismatch");
  double ll = 0.0;
  for (Eigen::Index t = 0; t < data.size(); ++t) {
    const double w = data.X.row(t).dot(beta);
    ll += data.y[t] * w - data.m[t] * link_b(w) + log_choose(data.m[t], data.y[t]);
  }
  return ll;
}

inline Vector glm_score(const Vector& beta, const BinomialSeries& data) {
  Vector g = Vector::Zero(data.dim());
  for (Eigen::Index t = 0; t < data.size(); ++t) {
    const double w = data.X.row(t).dot(beta);
    g += (data.y[t] - data.m[t] * link_b_dot(w)) * data.X.row(t).transpose();
  }
  return g;
}

struct GlmOptions {
  double tol = 1e-8;           // sup-norm of the score at convergence
  int max_iterations = 100;
  int max_halvings = 30;
  double separation_bound = 1e3;  // ||beta||_inf beyond which the MLE is escaping
};

// Newton-Raphson (IRLS) with step halving.  The objective is concave, so a
// halved step that still increases the log-likelihood always exists away
// from separation.
inline GlmFit glm_fit(const BinomialSeries& data, const Vector& init,
                      const GlmOptions& opts = GlmOptions{}) {
  const Eigen::Index r = data.dim();
  Vector beta = init.size() == r ? init : Vector::Zero(r);
  double ll = glm_loglik(beta, data);
  GlmFit fit;
  for (int it = 1; it <= opts.max_iterations; ++it) {
    Vector g = Vector::Zero(r);
    Matrix Hn = Matrix::Zero(r, r);  // negative Hessian, PSD
    for (Eigen::Index t = 0; t < data.size(); ++t) {
      const double w = data.X.row(t).dot(beta);
      const Vector x = data.X.row(t).transpose();
      g += (data.y[t] - data.m[t] * link_b_dot(w)) * x;
      Hn += data.m[t] * link_b_ddot(w) * x * x.transpose();
    }
    fit.score_norm = g.lpNorm<Eigen::Infinity>();
    fit.iterations = it;
    if (fit.score_norm < opts.tol) {
      fit.converged = true;
      break;
    }
    Eigen::LDLT<Matrix> ldlt(Hn);
    if (ldlt.info() != Eigen::Success || !ldlt.isPositive() ||
        ldlt.vectorD().minCoeff() <= 1e-300) {
      if (beta.lpNorm<Eigen::Infinity>() > 10.0)
        throw SeparationDetected("glm_fit: weights vanished while the estimate grew");
      throw SingularHessian("glm_fit: weighted Gram matrix is numerically singular");
    }
    const Vector step = ldlt.solve(g);
    double scale = 1.0;
    bool improved = false;
    for (int h = 0; h <= opts.max_halvings; ++h) {
      const Vector cand = beta + scale * step;
      const double ll_cand = glm_loglik(cand, data);
      if (ll_cand > ll) {
        beta = cand;
        ll = ll_cand;
        improved = true;
        break;
      }
      scale *= 0.5;
    }
    if (!improved) {
      // the objective is flat to rounding; accept if the score is consistent
      // with a numerically attained optimum
      fit.converged = fit.score_norm < opts.tol * 100;
      if (!fit.converged)
        throw SeparationDetected("glm_fit: step search failed, data may be separated");
      break;
    }
    if (beta.lpNorm<Eigen::Infinity>() > opts.separation_bound)
      throw SeparationDetected("glm_fit: estimate escaping to infinity");
  }
  if (!fit.converged) {
    fit.score_norm = glm_score(beta, data).lpNorm<Eigen::Infinity>();
    fit.converged = fit.score_norm < opts.tol;
    if (!fit.converged) throw NoConvergence("glm_fit: iteration limit reached");
  }
  // Under separation the score decays like e^{-||beta||}, so the iteration
  // "converges" at a large but finite estimate long before the norm bound can
  // trip; a perfectly classified fit with a large estimate is the signature.
  if (beta.lpNorm<Eigen::Infinity>() > 15.0) {
    double max_resid = 0.0;
    for (Eigen::Index t = 0; t < data.size(); ++t) {
      const double p = link_b_dot(data.X.row(t).dot(beta));
      max_resid = std::max(max_resid, std::abs(data.y[t] - data.m[t] * p));
    }
    if (max_resid < 1e-6)
      throw SeparationDetected("glm_fit: data are perfectly separated");
  }
  fit.beta_tilde = beta;
  fit.loglik = ll;
  return fit;
}

inline GlmFit glm_fit(const BinomialSeries& data) { return glm_fit(data, Vector()); }

struct BetaPrimeOptions {
  double tol = 1e-10;  // sup-norm of the moment system at the root
  int max_iterations = 100;
};

// Solve the limit-point system by exact Newton on the u-grid.  The Jacobian
// is -int bddot(h(u)'b) h(u) h(u)' du; the system value reuses the marginal
// success probability pibar(u) = int bdot(h(u)'beta_0 + a) g(a; tau_0) da.
inline Vector beta_prime(const Vector& beta0, double tau0, const TrendDesign& design,
                         const MDist& mdist, const QuadratureRule& rule, double mesh,
                         const BetaPrimeOptions& opts = BetaPrimeOptions{}) {
  if (tau0 < 0.0) throw std::invalid_argument("beta_prime: tau0 must be >= 0");
  mdist.validate();
  if (tau0 == 0.0) return beta0;  // the system reduces to the identity
  const UGrid grid(mesh);
  const int r = design.dim;
  const double st = std::sqrt(tau0);
  const double mbar = mdist.mean();

  Vector pibar(grid.cells);
  Matrix Hs(grid.cells, r);
  for (Eigen::Index i = 0; i < grid.cells; ++i) {
    const Vector h = design(grid.point(i));
    Hs.row(i) = h.transpose();
    const double a0 = h.dot(beta0);
    double p = 0.0;
    for (int k = 0; k < rule.order; ++k)
      p += rule.weights[k] * link_b_dot(a0 + st * rule.nodes[k]);
    pibar[i] = p;
  }

  Vector b = beta0;
  for (int it = 0; it < opts.max_iterations; ++it) {
    Vector F = Vector::Zero(r);
    Matrix J = Matrix::Zero(r, r);
    for (Eigen::Index i = 0; i < grid.cells; ++i) {
      const double a = Hs.row(i).dot(b);
      F += (pibar[i] - link_b_dot(a)) * Hs.row(i).transpose();
      J -= link_b_ddot(a) * Hs.row(i).transpose() * Hs.row(i);
    }
    F *= mbar * grid.width;
    J *= mbar * grid.width;
    if (F.lpNorm<Eigen::Infinity>() < opts.tol) return b;
    b -= J.fullPivLu().solve(F);
  }
  throw NoConvergence("beta_prime: Newton iteration limit reached");
}

}  // namespace binlat

#pragma once

// Gauss-Hermite quadrature in the probabilists' normalization,
//   int f(z) phi(z) dz  ~=  sum_k w_k f(z_k),  sum_k w_k = 1,
// and the marginal / pairwise-joint response probabilities built on it.

#include <Eigen/Dense>
#include <cmath>
#include <limits>
#include <stdexcept>
#include <vector>

#include "binlat/model.hpp"

namespace binlat {

struct QuadratureRule {
  Vector nodes;    // strictly increasing
  Vector weights;  // positive, sum to 1
  int order = 0;
};

// Golub-Welsch: nodes are eigenvalues of the Jacobi matrix of the Hermite
// recurrence (diagonal 0, off-diagonal sqrt(k)); weights come from the first
// eigenvector components. Eigen returns eigenvalues in increasing order.
inline QuadratureRule gauss_hermite(int order) {
  if (order < 1 || order > 128)
    throw std::invalid_argument("gauss_hermite: order must be in [1,128]");
  QuadratureRule rule;
  rule.order = order;
  if (order == 1) {
    rule.nodes = Vector::Zero(1);
    rule.weights = Vector::Ones(1);
    return rule;
  }
  Matrix J = Matrix::Zero(order, order);
  for (int k = 1; k < order; ++k) {
    const double b = std::sqrt(static_cast<double>(k));
    J(k, k - 1) = b;
    J(k - 1, k) = b;
  }
  Eigen::SelfAdjointEigenSolver<Matrix> es(J);
  rule.nodes = es.eigenvalues();
  rule.weights.resize(order);
  for (int k = 0; k < order; ++k) {
    const double v0 = es.eigenvectors()(0, k);
    rule.weights[k] = v0 * v0;
  }
  // symmetrize: nodes of the Hermite rule come in +/- pairs
  for (int k = 0; k < order / 2; ++k) {
    const double z = 0.5 * (rule.nodes[order - 1 - k] - rule.nodes[k]);
    rule.nodes[k] = -z;
    rule.nodes[order - 1 - k] = z;
    const double w = 0.5 * (rule.weights[k] + rule.weights[order - 1 - k]);
    rule.weights[k] = w;
    rule.weights[order - 1 - k] = w;
  }
  if (order % 2 == 1) rule.nodes[order / 2] = 0.0;
  rule.weights /= rule.weights.sum();
  return rule;
}

// log f(y | W) for y successes in m trials at linear predictor W
inline double binom_logpmf_at(double y, int m, double w) {
  return y * w - m * link_b(w) + log_choose(m, static_cast<int>(y));
}

struct QuadOptions {
  // Laplace-style recentring of the 1-D rule at the integrand mode, applied
  // per observation once tau * m reaches the activation threshold.  Plain
  // Gauss-Hermite loses several digits in that regime, recentring restores
  // order-32/64 agreement below 1e-9.
  bool adaptive = true;
  double activation = 4.0;
};

namespace detail {

// Mode of g(z) = y W(z) - m b(W(z)) - z^2/2, W = eta + sqrt(tau) z.  g' is
// strictly decreasing, so Newton is safeguarded by a shrinking bracket.
inline double laplace_mode(double y, int m, double eta, double sqrt_tau) {
  // g'(z) = 0 inside [-(m+1)st, (m+1)st] since |y - m bdot| <= m
  double lo = -(m + 1.0) * sqrt_tau - 1.0;
  double hi = (m + 1.0) * sqrt_tau + 1.0;
  double z = 0.0;
  for (int it = 0; it < 100; ++it) {
    const double w = eta + sqrt_tau * z;
    const double g1 = (y - m * link_b_dot(w)) * sqrt_tau - z;
    if (g1 > 0.0)
      lo = z;
    else
      hi = z;
    const double g2 = -m * link_b_ddot(w) * sqrt_tau * sqrt_tau - 1.0;
    double znew = z - g1 / g2;
    if (!(znew > lo && znew < hi)) znew = 0.5 * (lo + hi);
    if (std::abs(znew - z) < 1e-13) return znew;
    z = znew;
  }
  return z;
}

}  // namespace detail

// pi(j) = int exp(j W - m b(W) + c(j)) phi(z) dz with W = eta + sqrt(tau) z.
// Accumulation is in log space so large m or extreme eta cannot underflow.
inline double marginal_prob(int j, double eta, int m, double tau,
                            const QuadratureRule& rule,
                            const QuadOptions& opts = QuadOptions{}) {
  if (j < 0 || j > m) throw std::invalid_argument("marginal_prob: need 0 <= j <= m");
  if (tau < 0.0) throw std::invalid_argument("marginal_prob: tau must be >= 0");
  if (tau == 0.0) return std::exp(binom_logpmf_at(j, m, eta));
  const double st = std::sqrt(tau);
  const int K = rule.order;
  const bool recentre = opts.adaptive && tau * m >= opts.activation;
  double zhat = 0.0, sigma = 1.0;
  if (recentre) {
    zhat = detail::laplace_mode(j, m, eta, st);
    // Uniform compression matched to the largest curvature the integrand can
    // reach (bddot <= 1/4); a single smooth transform keeps the spectral
    // convergence of the rule.
    sigma = 1.0 / std::sqrt(1.0 + 0.25 * tau * m);
  }
  double tmax = -std::numeric_limits<double>::infinity();
  std::vector<double> terms(K);
  for (int k = 0; k < K; ++k) {
    double t;
    if (recentre) {
      // Two windows guard the reweighting. The integrand is log-concave in z
      // with curvature at least one, so mass beyond 7 units of the mode is
      // below e^-24.5; and Golub-Welsch weights at |z_k| > 9.6 sit near the
      // eps^2 noise floor, which the e^{z_k^2/2} factor would amplify.
      if (sigma * std::abs(rule.nodes[k]) > 7.0 || std::abs(rule.nodes[k]) > 9.6) {
        terms[k] = -std::numeric_limits<double>::infinity();
        continue;
      }
      const double z = zhat + sigma * rule.nodes[k];
      t = binom_logpmf_at(j, m, eta + st * z);
      t += 0.5 * rule.nodes[k] * rule.nodes[k] - 0.5 * z * z + std::log(sigma);
    } else {
      t = binom_logpmf_at(j, m, eta + st * rule.nodes[k]);
    }
    terms[k] = t;
    tmax = std::max(tmax, t);
  }
  double acc = 0.0;
  for (int k = 0; k < K; ++k)
    if (terms[k] > -std::numeric_limits<double>::infinity())
      acc += rule.weights[k] * std::exp(terms[k] - tmax);
  return std::exp(tmax) * acc;
}

inline double marginal_prob(int j, const Vector& x, int m, const Vector& beta, double tau,
                            const QuadratureRule& rule,
                            const QuadOptions& opts = QuadOptions{}) {
  if (x.size() != beta.size())
    throw std::invalid_argument("marginal_prob: x and beta dimensions differ");
  return marginal_prob(j, x.dot(beta), m, tau, rule, opts);
}

// P(Y_t = j1, Y_{t+lag} = j2). The latent pair is bivariate normal with
// common variance tau and correlation phi^lag; it is whitened through its
// Cholesky factor and integrated on a tensor-product rule (9 x 9 default).
inline double joint_prob(int j1, int j2, double eta1, double eta2, int m1, int m2,
                         double tau, double phi, int lag, const QuadratureRule& rule) {
  if (j1 < 0 || j1 > m1 || j2 < 0 || j2 > m2)
    throw std::invalid_argument("joint_prob: need 0 <= j <= m");
  if (!(std::abs(phi) < 1.0)) throw std::invalid_argument("joint_prob: |phi| must be < 1");
  if (lag < 0) throw std::invalid_argument("joint_prob: lag must be >= 0");
  if (tau < 0.0) throw std::invalid_argument("joint_prob: tau must be >= 0");
  if (tau == 0.0)
    return std::exp(binom_logpmf_at(j1, m1, eta1) + binom_logpmf_at(j2, m2, eta2));
  const double rho = std::pow(phi, lag);
  const double st = std::sqrt(tau);
  const double l11 = st;
  const double l21 = st * rho;
  const double l22 = st * std::sqrt(std::max(0.0, 1.0 - rho * rho));
  const int K = rule.order;
  double tmax = -std::numeric_limits<double>::infinity();
  std::vector<double> terms(static_cast<std::size_t>(K) * K);
  for (int k = 0; k < K; ++k) {
    const double t1 = binom_logpmf_at(j1, m1, eta1 + l11 * rule.nodes[k]);
    for (int l = 0; l < K; ++l) {
      const double t = t1 + binom_logpmf_at(j2, m2, eta2 + l21 * rule.nodes[k] + l22 * rule.nodes[l]);
      terms[static_cast<std::size_t>(k) * K + l] = t;
      tmax = std::max(tmax, t);
    }
  }
  double acc = 0.0;
  for (int k = 0; k < K; ++k)
    for (int l = 0; l < K; ++l)
      acc += rule.weights[k] * rule.weights[l] *
             std::exp(terms[static_cast<std::size_t>(k) * K + l] - tmax);
  return std::exp(tmax) * acc;
}

inline double joint_prob(int j1, int j2, const Vector& x1, const Vector& x2, int m1,
                         int m2, const ModelParams& params, int lag,
                         const QuadratureRule& rule) {
  return joint_prob(j1, j2, x1.dot(params.beta), x2.dot(params.beta), m1, m2, params.tau,
                    params.phi, lag, rule);
}

}  // namespace binlat

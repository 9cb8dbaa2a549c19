#pragma once

// Binomial time-series regression with a latent stationary Gaussian AR(1)
// process on the linear predictor:
//
//   y_t | alpha_t ~ Binomial(m_t, bdot(W_t)),   W_t = x_t' beta + alpha_t,
//   alpha_t = phi alpha_{t-1} + eps_t,          Var(alpha_t) = tau.
//
// b(w) = log(1 + e^w) is the binomial cumulant; bdot is the logistic cdf.

#include <Eigen/Dense>
#include <cmath>
#include <cstdint>
#include <stdexcept>

#include "binlat/rng.hpp"

namespace binlat {

using Vector = Eigen::VectorXd;
using Matrix = Eigen::MatrixXd;

// ---------------------------------------------------------------------------
// Link functions. Branch at |w| = 30: beyond that the asymptotic forms are
// exact to double precision and exp(w) cannot overflow.
// ---------------------------------------------------------------------------

inline double link_b(double w) {
  if (w > 30.0) return w + std::exp(-w);
  if (w < -30.0) return std::exp(w);
  return std::log1p(std::exp(w));
}

// bdot(w) = e^w / (1 + e^w), the success probability
inline double link_b_dot(double w) {
  if (w >= 0.0) return 1.0 / (1.0 + std::exp(-w));
  const double e = std::exp(w);
  return e / (1.0 + e);
}

inline double link_b_ddot(double w) {
  const double p = link_b_dot(w);
  return p * (1.0 - p);
}

inline double link_b_d3(double w) {
  const double p = link_b_dot(w);
  return p * (1.0 - p) * (1.0 - 2.0 * p);
}

// log C(m, y) via log-gamma, overflow-free for any m
inline double log_choose(int m, int y) {
  return std::lgamma(m + 1.0) - std::lgamma(y + 1.0) - std::lgamma(m - y + 1.0);
}

// ---------------------------------------------------------------------------
// Parameter and data containers
// ---------------------------------------------------------------------------

struct ModelParams {
  Vector beta;  // regression coefficients, first entry intercept
  double tau = 0.0;   // marginal variance of the latent process
  double phi = 0.0;   // latent AR(1) coefficient

  ModelParams() = default;
  ModelParams(Vector beta_in, double tau_in, double phi_in = 0.0)
      : beta(std::move(beta_in)), tau(tau_in), phi(phi_in) {
    validate();
  }

  void validate() const {
    if (!beta.allFinite()) throw std::invalid_argument("ModelParams: beta must be finite");
    if (!(tau >= 0.0)) throw std::invalid_argument("ModelParams: tau must be >= 0");
    if (!(std::abs(phi) < 1.0)) throw std::invalid_argument("ModelParams: |phi| must be < 1");
  }
};

struct BinomialSeries {
  Eigen::VectorXi y;  // success counts
  Eigen::VectorXi m;  // trial counts
  Matrix X;           // n x r design, first column all ones

  BinomialSeries() = default;
  BinomialSeries(Eigen::VectorXi y_in, Eigen::VectorXi m_in, Matrix X_in)
      : y(std::move(y_in)), m(std::move(m_in)), X(std::move(X_in)) {
    validate();
  }

  Eigen::Index size() const { return y.size(); }
  Eigen::Index dim() const { return X.cols(); }

  void validate() const {
    const Eigen::Index n = y.size();
    if (m.size() != n || X.rows() != n)
      throw std::invalid_argument("BinomialSeries: y, m, X must have matching length");
    if (n == 0) throw std::invalid_argument("BinomialSeries: empty series");
    for (Eigen::Index t = 0; t < n; ++t) {
      if (m[t] < 1) throw std::invalid_argument("BinomialSeries: m_t must be >= 1");
      if (y[t] < 0 || y[t] > m[t])
        throw std::invalid_argument("BinomialSeries: need 0 <= y_t <= m_t");
      if (X(t, 0) != 1.0)
        throw std::invalid_argument("BinomialSeries: first design column must be 1");
    }
    Eigen::ColPivHouseholderQR<Matrix> qr(X);
    if (qr.rank() < X.cols())
      throw std::invalid_argument("BinomialSeries: design matrix is rank deficient");
  }
};

struct LatentPath {
  Vector alpha;
  double tau = 0.0;
  double phi = 0.0;
};

// ---------------------------------------------------------------------------
// Simulation. Initial state is drawn from the exact stationary law N(0, tau)
// and innovations have variance tau (1 - phi^2), so Var(alpha_t) = tau for
// every t. Draw order is fixed (latent path first, then y_1..y_n, each y_t
// as m_t Bernoulli draws) to keep output byte-reproducible for a seed.
// ---------------------------------------------------------------------------

inline LatentPath simulate_latent(Eigen::Index n, const ModelParams& params, Rng& rng) {
  if (n < 1) throw std::invalid_argument("simulate_latent: n must be >= 1");
  params.validate();
  LatentPath path;
  path.tau = params.tau;
  path.phi = params.phi;
  path.alpha.resize(n);
  const double sd0 = std::sqrt(params.tau);
  const double sd_eps = std::sqrt(params.tau * (1.0 - params.phi * params.phi));
  path.alpha[0] = sd0 * rng.normal();
  for (Eigen::Index t = 1; t < n; ++t)
    path.alpha[t] = params.phi * path.alpha[t - 1] + sd_eps * rng.normal();
  return path;
}

inline LatentPath simulate_latent(Eigen::Index n, const ModelParams& params,
                                  std::uint64_t seed) {
  Rng rng(seed);
  return simulate_latent(n, params, rng);
}

inline BinomialSeries simulate_series(const Matrix& X, const Eigen::VectorXi& m,
                                      const ModelParams& params, Rng& rng) {
  if (X.rows() != m.size())
    throw std::invalid_argument("simulate_series: X rows and m length differ");
  if (X.cols() != params.beta.size())
    throw std::invalid_argument("simulate_series: X cols and beta length differ");
  const Eigen::Index n = X.rows();
  const LatentPath path = simulate_latent(n, params, rng);
  Eigen::VectorXi y(n);
  for (Eigen::Index t = 0; t < n; ++t) {
    const double w = X.row(t).dot(params.beta) + path.alpha[t];
    y[t] = rng.binomial(m[t], link_b_dot(w));
  }
  return BinomialSeries(std::move(y), m, X);
}

inline BinomialSeries simulate_series(const Matrix& X, const Eigen::VectorXi& m,
                                      const ModelParams& params, std::uint64_t seed) {
  Rng rng(seed);
  return simulate_series(X, m, params, rng);
}

// n x 2 design with rows (1, t/n), t = 1..n
inline Matrix linear_trend_design(Eigen::Index n) {
  if (n < 2) throw std::invalid_argument("linear_trend_design: n must be >= 2");
  Matrix X(n, 2);
  for (Eigen::Index t = 0; t < n; ++t) {
    X(t, 0) = 1.0;
    X(t, 1) = static_cast<double>(t + 1) / static_cast<double>(n);
  }
  return X;
}

}  // namespace binlat

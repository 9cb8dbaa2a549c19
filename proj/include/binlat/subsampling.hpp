#pragma once

// Overlapping-block subsampling estimate of the asymptotic covariance of the
// marginal estimator from a single series:
//
//   Gamma1 = sum_t qhat_{n,t} qhat_{n,t}',      qhat_{n,t} = n^-1/2 ldot_t(delta_hat)
//   Gamma+ = m_n^-1 sum_i ( sum_{t,s in block_i} qhat_{k,t} qhat_{k,s}' )
//   estimate = Gamma1^-1 Gamma+ Gamma1^-1,      k_n = C floor(n^(1/3))
//
// The scores are undefined at tau_hat = 0; a degenerate fit is a typed error,
// not a fallback.

#include <Eigen/Dense>
#include <cmath>
#include <stdexcept>
#include <vector>

#include "binlat/errors.hpp"
#include "binlat/marginal.hpp"
#include "binlat/model.hpp"
#include "binlat/quadrature.hpp"

namespace binlat {

struct SubsampleCovariance {
  Matrix covariance;  // (r+1) x (r+1), tau component last
  long k_n = 0;
  long C = 0;
  long m_n = 0;
};

inline long subsample_block_length(long n, long C) {
  return C * static_cast<long>(std::floor(std::cbrt(static_cast<double>(n))));
}

inline SubsampleCovariance subsample_covariance(const BinomialSeries& data,
                                                const Vector& beta_hat, double tau_hat,
                                                long C, const QuadratureRule& rule,
                                                double degeneracy_threshold = 1e-6) {
  if (C < 1) throw std::invalid_argument("subsample_covariance: C must be >= 1");
  if (tau_hat <= degeneracy_threshold)
    throw DegenerateFit("subsample_covariance: tau_hat is on the boundary");
  const long n = static_cast<long>(data.size());
  const long k = subsample_block_length(n, C);
  if (k < 1 || k >= n)
    throw std::invalid_argument("subsample_covariance: block length must be in [1, n)");
  const long mn = n - k + 1;
  const Eigen::Index p = data.dim() + 1;

  // per-observation scores, computed once and reused across blocks
  Matrix scores(p, n);
  for (long t = 0; t < n; ++t)
    scores.col(t) = eval_marginal_obs(data.y[t], data.m[t], data.X.row(t).transpose(),
                                      beta_hat, tau_hat, rule, true)
                        .grad;

  Matrix gamma1 = Matrix::Zero(p, p);
  for (long t = 0; t < n; ++t) gamma1 += scores.col(t) * scores.col(t).transpose();
  gamma1 /= static_cast<double>(n);

  // overlapping block sums via a sliding window
  Matrix gamma_dag = Matrix::Zero(p, p);
  Vector block = scores.leftCols(k).rowwise().sum();
  gamma_dag += block * block.transpose();
  for (long i = 1; i < mn; ++i) {
    block += scores.col(i + k - 1) - scores.col(i - 1);
    gamma_dag += block * block.transpose();
  }
  gamma_dag /= static_cast<double>(mn) * static_cast<double>(k);

  Eigen::FullPivLU<Matrix> lu(gamma1);
  if (!lu.isInvertible())
    throw SingularGramMatrix("subsample_covariance: Gamma1 is not invertible");
  const Matrix g1inv = lu.inverse();

  SubsampleCovariance out;
  out.covariance = g1inv * gamma_dag * g1inv;
  out.covariance = (0.5 * (out.covariance + out.covariance.transpose())).eval();
  out.k_n = k;
  out.C = C;
  out.m_n = mn;
  return out;
}

}  // namespace binlat

#include <catch2/catch_amalgamated.hpp>

#include <cmath>

#include "binlat/quadrature.hpp"
#include "binlat/rng.hpp"

using namespace binlat;

TEST_CASE("gauss_hermite rules") {
  SECTION("order one is the mean") {
    const QuadratureRule r = gauss_hermite(1);
    CHECK(r.nodes[0] == 0.0);
    CHECK(r.weights[0] == 1.0);
  }

  SECTION("normal moment identities") {
    const QuadratureRule r10 = gauss_hermite(10);
    CHECK(std::abs(r10.weights.sum() - 1.0) < 1e-12);
    double m2 = 0.0;
    for (int k = 0; k < 10; ++k) m2 += r10.weights[k] * r10.nodes[k] * r10.nodes[k];
    CHECK(std::abs(m2 - 1.0) < 1e-12);

    const QuadratureRule r20 = gauss_hermite(20);
    double m4 = 0.0;
    for (int k = 0; k < 20; ++k) m4 += r20.weights[k] * std::pow(r20.nodes[k], 4);
    CHECK(std::abs(m4 - 3.0) < 1e-10);
  }

  SECTION("rule invariants") {
    for (int order : {2, 9, 32, 64, 128}) {
      const QuadratureRule r = gauss_hermite(order);
      CHECK(std::abs(r.weights.sum() - 1.0) < 1e-12);
      for (int k = 0; k < order; ++k) {
        CHECK(r.weights[k] > 0.0);
        if (k > 0) CHECK(r.nodes[k] > r.nodes[k - 1]);
      }
    }
    CHECK_THROWS_AS(gauss_hermite(0), std::invalid_argument);
    CHECK_THROWS_AS(gauss_hermite(129), std::invalid_argument);
  }
}

TEST_CASE("marginal_prob") {
  const QuadratureRule rule = gauss_hermite(32);

  SECTION("tau = 0 reduces to the binomial pmf") {
    CHECK(marginal_prob(1, 0.0, 1, 0.0, rule) == Catch::Approx(0.5).margin(1e-14));
    CHECK(marginal_prob(2, 0.3, 5, 0.0, rule) ==
          Catch::Approx(std::exp(binom_logpmf_at(2, 5, 0.3))).margin(1e-14));
  }

  SECTION("probabilities sum to one") {
    double total = 0.0;
    for (int j = 0; j <= 3; ++j) total += marginal_prob(j, 1.7, 3, 1.0, rule);
    CHECK(std::abs(total - 1.0) < 1e-10);
  }

  SECTION("Monte Carlo oracle for the success probability") {
    // pi(1) at eta=1, m=1, tau=1 against the mean of bdot(1 + z)
    Rng rng(12345);
    const long N = 10000000;
    double sum = 0.0, sumsq = 0.0;
    for (long i = 0; i < N; ++i) {
      const double v = link_b_dot(1.0 + rng.normal());
      sum += v;
      sumsq += v * v;
    }
    const double mean = sum / N;
    const double se = std::sqrt((sumsq / N - mean * mean) / N);
    CHECK(std::abs(marginal_prob(1, 1.0, 1, 1.0, rule) - mean) < 3.0 * se);
  }

  SECTION("monotone in the predictor at the extremes") {
    double prev_top = 0.0, prev_bot = 1.0;
    for (double eta = -3.0; eta <= 3.0; eta += 0.5) {
      const double top = marginal_prob(3, eta, 3, 0.7, rule);
      const double bot = marginal_prob(0, eta, 3, 0.7, rule);
      CHECK(top > prev_top);
      CHECK(bot < prev_bot);
      prev_top = top;
      prev_bot = bot;
    }
  }

  SECTION("order 32 and 64 agree across the working range") {
    const QuadratureRule r64 = gauss_hermite(64);
    for (double eta = -3.0; eta <= 3.0; eta += 0.25)
      for (double tau : {0.25, 1.0, 4.0})
        for (int m : {1, 2, 3})
          for (int j = 0; j <= m; ++j)
            CHECK(std::abs(marginal_prob(j, eta, m, tau, rule) -
                           marginal_prob(j, eta, m, tau, r64)) < 1e-9);
  }

  SECTION("adaptive recentring stays close to a high-order reference") {
    QuadOptions adaptive;
    adaptive.adaptive = true;
    const QuadratureRule r16 = gauss_hermite(16);
    const QuadratureRule r128 = gauss_hermite(128);
    for (double eta : {-2.0, 0.0, 2.0})
      for (int j = 0; j <= 3; ++j) {
        const double ref = marginal_prob(j, eta, 3, 4.0, r128);
        CHECK(std::abs(marginal_prob(j, eta, 3, 4.0, r16, adaptive) - ref) < 1e-7);
      }
  }

  SECTION("rejects bad arguments") {
    CHECK_THROWS_AS(marginal_prob(4, 0.0, 3, 1.0, rule), std::invalid_argument);
    CHECK_THROWS_AS(marginal_prob(1, 0.0, 3, -1.0, rule), std::invalid_argument);
  }
}

TEST_CASE("joint_prob") {
  const QuadratureRule rule9 = gauss_hermite(9);
  const QuadratureRule rule32 = gauss_hermite(32);

  SECTION("independent latent factorizes") {
    for (int j1 = 0; j1 <= 2; ++j1)
      for (int j2 = 0; j2 <= 1; ++j2) {
        const double joint =
            joint_prob(j1, j2, 0.8, -0.4, 2, 1, 1.0, 0.0, 1, rule9);
        const double prod = marginal_prob(j1, 0.8, 2, 1.0, rule9) *
                            marginal_prob(j2, -0.4, 1, 1.0, rule9);
        CHECK(std::abs(joint - prod) < 1e-8);
      }
  }

  SECTION("long lags decouple") {
    const double joint = joint_prob(1, 1, 1.5, 1.5, 1, 1, 1.0, 0.8, 200, rule9);
    const double prod = marginal_prob(1, 1.5, 1, 1.0, rule9) *
                        marginal_prob(1, 1.5, 1, 1.0, rule9);
    CHECK(std::abs(joint - prod) < 1e-6);
  }

  SECTION("symmetric under swapping the two margins") {
    const double a = joint_prob(2, 1, 0.5, -1.0, 3, 2, 1.0, 0.6, 2, rule9);
    const double b = joint_prob(1, 2, -1.0, 0.5, 2, 3, 1.0, 0.6, 2, rule9);
    CHECK(a == Catch::Approx(b).epsilon(1e-12));
  }

  SECTION("Monte Carlo oracle for a correlated pair") {
    // P(Y_t = 1, Y_{t+1} = 1) at eta = 1.5, m = 1, tau = 1, phi = 0.8
    Rng rng(98765);
    const long N = 10000000;
    long hits = 0;
    const double rho = 0.8;
    const double c = std::sqrt(1.0 - rho * rho);
    for (long i = 0; i < N; ++i) {
      const double z1 = rng.normal();
      const double z2 = rho * z1 + c * rng.normal();
      const int y1 = rng.bernoulli(link_b_dot(1.5 + z1)) ? 1 : 0;
      const int y2 = rng.bernoulli(link_b_dot(1.5 + z2)) ? 1 : 0;
      hits += (y1 == 1 && y2 == 1) ? 1 : 0;
    }
    const double freq = static_cast<double>(hits) / N;
    const double se = std::sqrt(freq * (1.0 - freq) / N);
    const double joint = joint_prob(1, 1, 1.5, 1.5, 1, 1, 1.0, 0.8, 1, rule32);
    CHECK(std::abs(joint - freq) < 3.0 * se);
  }

  SECTION("rejects explosive autocorrelation") {
    CHECK_THROWS_AS(joint_prob(0, 0, 0.0, 0.0, 1, 1, 1.0, 1.0, 1, rule9),
                    std::invalid_argument);
  }
}

#pragma once

// Limit-experiment descriptions: a deterministic regressor function h(u) on
// [0,1], a distribution for the trial counts, and the midpoint grid used for
// all u-integrals.

#include <Eigen/Dense>
#include <cmath>
#include <functional>
#include <stdexcept>
#include <utility>
#include <vector>

namespace binlat {

struct TrendDesign {
  int dim = 0;
  std::function<Eigen::VectorXd(double)> h;

  Eigen::VectorXd operator()(double u) const { return h(u); }

  // h(u) = (1, u), the linear trend used throughout the experiments
  static TrendDesign linear_trend() {
    TrendDesign d;
    d.dim = 2;
    d.h = [](double u) {
      Eigen::Vector2d v(1.0, u);
      return Eigen::VectorXd(v);
    };
    return d;
  }

  static TrendDesign intercept_only() {
    TrendDesign d;
    d.dim = 1;
    d.h = [](double) { return Eigen::VectorXd::Ones(1); };
    return d;
  }
};

// Distribution of trial counts: atoms (m, kappa_m). Constant m is a single
// atom with mass one.
struct MDist {
  std::vector<std::pair<int, double>> atoms;

  static MDist constant(int m) {
    if (m < 1) throw std::invalid_argument("MDist: m must be >= 1");
    return MDist{{{m, 1.0}}};
  }

  void validate() const {
    if (atoms.empty()) throw std::invalid_argument("MDist: no atoms");
    double total = 0.0;
    for (const auto& [m, kappa] : atoms) {
      if (m < 1) throw std::invalid_argument("MDist: m must be >= 1");
      if (kappa <= 0.0) throw std::invalid_argument("MDist: weights must be positive");
      total += kappa;
    }
    if (std::abs(total - 1.0) > 1e-12)
      throw std::invalid_argument("MDist: weights must sum to 1");
  }

  bool is_constant() const { return atoms.size() == 1; }

  int constant_m() const {
    if (!is_constant()) throw std::invalid_argument("MDist: trial count varies");
    return atoms.front().first;
  }

  double mean() const {
    double s = 0.0;
    for (const auto& [m, kappa] : atoms) s += kappa * m;
    return s;
  }

  int max_m() const {
    int mx = 0;
    for (const auto& [m, kappa] : atoms) mx = std::max(mx, m);
    return mx;
  }
};

// Midpoint rule on [0,1]. The requested mesh is rounded to an integer number
// of cells so the grid covers [0,1] exactly.
struct UGrid {
  Eigen::Index cells = 0;
  double width = 0.0;

  explicit UGrid(double mesh) {
    if (!(mesh > 0.0 && mesh <= 1.0)) throw std::invalid_argument("UGrid: bad mesh");
    cells = std::max<Eigen::Index>(1, std::llround(1.0 / mesh));
    width = 1.0 / static_cast<double>(cells);
  }

  double point(Eigen::Index i) const { return (static_cast<double>(i) + 0.5) * width; }
};

}  // namespace binlat
